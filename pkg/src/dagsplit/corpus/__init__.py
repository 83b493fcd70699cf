"""Bundled example models and their standard splits.

Entries are addressed by ``corpus:`` URIs:

    corpus:<name>                  the model (query params reach the builder)
    corpus:<name>/<split>          the model plus one named split spec
    corpus:hiv?prior=jeffreys      e.g. the prior-sensitivity variant

Names and splits are enumerable for the command-line ``corpus`` listing.
"""
from __future__ import annotations

from typing import Callable
from urllib.parse import parse_qsl

from ..errors import ContractError
from ..model import DagModel
from ..splitting import SplitSpec
from . import disease, hiv, rats

__all__ = [
    "corpus_names",
    "corpus_splits",
    "load_model",
    "load_split",
    "parse_uri",
    "resolve",
    "describe",
]


def _hiv_split(name: str) -> SplitSpec:
    kind, _, arg = name.partition("-")
    if kind == "basic" and arg:
        return hiv.hiv_split_basic(arg)
    if kind == "functional" and arg.isdigit():
        return hiv.hiv_split_functional(int(arg))
    raise ContractError(f"unknown hiv split {name!r}")


def _rats_split(name: str) -> SplitSpec:
    kind, _, arg = name.partition("-")
    if kind == "holdout" and arg.isdigit():
        return rats.rats_split_holdout(int(arg))
    raise ContractError(f"unknown rats split {name!r}")


_MODEL_BUILDERS: dict[str, Callable[..., DagModel]] = {
    "disease": disease.build_disease_model,
    "hiv": hiv.build_hiv_model,
    "rats": lambda: rats.build_rats_model(),
}

_SPLITS: dict[str, tuple[tuple[str, ...], Callable[[str], SplitSpec]]] = {
    "hiv": (
        tuple(f"basic-{b}" for b in sorted(hiv.HIV_DIRECT_STUDY))
        + tuple(f"functional-{i}" for i in range(1, 13)),
        _hiv_split,
    ),
    "rats": (
        tuple(f"holdout-{i}" for i in range(1, rats.N_RATS + 1)),
        _rats_split,
    ),
    "disease": ((), lambda name: _no_split("disease", name)),
}

_DESCRIPTIONS = {
    "disease": "binary diagnostic test; discrete separator solved in closed form",
    "hiv": "twelve-study HIV prevalence synthesis (Ades & Cliffe 2002)",
    "rats": "thirty rat growth curves, holdout splits (Gelfand et al. 1990)",
}


def _no_split(entry: str, name: str) -> SplitSpec:
    raise ContractError(f"corpus entry {entry!r} has no split named {name!r}")


def corpus_names() -> tuple[str, ...]:
    return tuple(sorted(_MODEL_BUILDERS))


def corpus_splits(name: str) -> tuple[str, ...]:
    if name not in _SPLITS:
        raise ContractError(f"unknown corpus entry {name!r}")
    return _SPLITS[name][0]


def describe(name: str) -> str:
    if name not in _DESCRIPTIONS:
        raise ContractError(f"unknown corpus entry {name!r}")
    return _DESCRIPTIONS[name]


def _coerce(value: str):
    try:
        f = float(value)
    except ValueError:
        return value
    return int(f) if f.is_integer() and "." not in value and "e" not in value.lower() else f


def parse_uri(uri: str) -> tuple[str, str | None, dict]:
    """Split ``corpus:name[/split][?params]`` into its parts."""
    if not uri.startswith("corpus:"):
        raise ContractError(f"not a corpus URI: {uri!r}")
    rest = uri[len("corpus:") :]
    path, _, query = rest.partition("?")
    name, _, split = path.partition("/")
    params = {k: _coerce(v) for k, v in parse_qsl(query)} if query else {}
    if not name:
        raise ContractError(f"empty corpus name in {uri!r}")
    return name, (split or None), params


def load_model(name: str, **params) -> DagModel:
    builder = _MODEL_BUILDERS.get(name)
    if builder is None:
        raise ContractError(
            f"unknown corpus entry {name!r}; available: " + ", ".join(corpus_names())
        )
    return builder(**params)


def load_split(name: str, split: str) -> SplitSpec:
    if name not in _SPLITS:
        raise ContractError(f"unknown corpus entry {name!r}")
    names, builder = _SPLITS[name]
    if names and split not in names:
        raise ContractError(
            f"unknown split {split!r} for {name!r}; available: " + ", ".join(names)
        )
    return builder(split)


def resolve(uri: str) -> tuple[DagModel, SplitSpec | None]:
    """Resolve a corpus URI to a model and, when named, its split spec."""
    name, split, params = parse_uri(uri)
    model = load_model(name, **params)
    spec = load_split(name, split) if split else None
    return model, spec
