"""HIV prevalence synthesis for prenatal screening (Ades & Cliffe 2002).

Twelve studies inform nine basic epidemiological quantities a..h, w through
known functional relationships: study i observes y_i successes in n_i
trials with success probability p_i, where p_1..p_4, p_10, p_11 are basic
parameters themselves and the rest are ratios built from products of the
basics.  The group proportions satisfy a + b < 1 (the remainder 1 - a - b
is the low-risk group), enforced here by a positivity-guarded node.

Two split families probe the synthesis:

* ``basic``: split one directly-measured basic parameter, sending its
  direct study to partition b and everything else to a.
* ``functional``: split the study-level proportion p_i itself; the copy
  feeding study i becomes a free Beta(1/2, 1/2) quantity while the
  functional definition keeps aggregating the indirect evidence.
"""
from __future__ import annotations

from ..errors import ContractError
from ..exprs import Const, Ref
from ..families import Beta, Binomial
from ..model import DagModel, deterministic, stochastic
from ..splitting import SplitSpec

__all__ = [
    "HIV_DATA",
    "HIV_BASICS",
    "HIV_DIRECT_STUDY",
    "build_hiv_model",
    "hiv_split_basic",
    "hiv_split_functional",
]

# (successes, trials) for studies 1..12
HIV_DATA: tuple[tuple[int, int], ...] = (
    (11044, 104577),
    (12, 882),
    (252, 15428),
    (10, 473),
    (74, 136139),
    (254, 102287),
    (43, 60),
    (4, 17),
    (87, 254),
    (12, 15),
    (14, 118),
    (5, 31),
)

HIV_BASICS = ("a", "b", "c", "d", "e", "f", "g", "h", "w")

# basic parameters measured directly by one study
HIV_DIRECT_STUDY = {"a": 1, "b": 2, "c": 3, "d": 4, "g": 10, "w": 11}

_FUNCTIONALS = {
    1: "a",
    2: "b",
    3: "c",
    4: "d",
    5: "(/ (+ (* d b) (* e slack)) (- 1 a))",
    6: "(+ (* c a) (* d b) (* e slack))",
    7: "(/ (* f c a) (+ (* f c a) (* g d b) (* h e slack)))",
    8: "(/ (* g d b) (+ (* g d b) (* h e slack)))",
    9: "(/ (+ (* f c a) (* g d b) (* h e slack)) p6)",
    10: "g",
    11: "w",
    12: "(/ (+ (* d b) (* w e slack)) (+ (* d b) (* e slack)))",
}


def build_hiv_model(prior: str = "uniform") -> DagModel:
    """Assemble the twelve-study synthesis model.

    ``prior`` selects the founder priors: 'uniform' for Beta(1,1) or
    'jeffreys' for Beta(1/2, 1/2) (prior-sensitivity runs).
    """
    if prior == "uniform":
        hyper = (1.0, 1.0)
    elif prior == "jeffreys":
        hyper = (0.5, 0.5)
    else:
        raise ContractError(f"unknown prior {prior!r}; use 'uniform' or 'jeffreys'")
    nodes = []
    for basic in HIV_BASICS:
        nodes.append(stochastic(basic, Beta(Const(hyper[0]), Const(hyper[1]))))
    nodes.append(deterministic("slack", "(- 1 a b)", positive=True))
    for study in range(1, 13):
        nodes.append(deterministic(f"p{study}", _FUNCTIONALS[study]))
    for study, (y, n) in enumerate(HIV_DATA, start=1):
        nodes.append(
            stochastic(
                f"y{study}",
                Binomial(Const(float(n)), Ref(f"p{study}")),
                observed=float(y),
            )
        )
    return DagModel(nodes, name=f"hiv-{prior}")


def hiv_split_basic(basic: str) -> SplitSpec:
    """Split a directly measured basic parameter against its direct study."""
    study = HIV_DIRECT_STUDY.get(basic)
    if study is None:
        raise ContractError(
            f"basic parameter {basic!r} has no direct study; choose from "
            + ", ".join(sorted(HIV_DIRECT_STUDY))
        )
    return SplitSpec(
        separators=(basic,),
        anchor=f"y{study}",
        name=f"basic-{basic}",
    )


def hiv_split_functional(study: int) -> SplitSpec:
    """Split the study-level proportion p_i between study i and the rest."""
    if study not in range(1, 13):
        raise ContractError("study index must be 1..12")
    return SplitSpec(
        separators=(f"p{study}",),
        anchor=f"y{study}",
        transforms={f"p{study}": "logit"},
        name=f"functional-{study}",
    )
