"""Directed acyclic model graphs.

A model is an ordered collection of named nodes, each either stochastic
(carrying a distribution family whose parameters are expressions over parent
names) or deterministic (carrying a defining expression).  Edges are implied
by name references.  ``cut_edges`` lists stochastic parent/child pairs whose
likelihood feedback is severed: the child still conditions on the parent's
current value, but the parent's full conditional omits that child.

Models are immutable after construction and safe to share across worker
processes.
"""
from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import exprs
from .errors import ContractError, ModelError
from .exprs import Expr, as_expr, infer_shape, parse, printout, refs
from .families import FAMILY_TAGS, Family, ImproperFlat, MultivariateNormal, Wishart

__all__ = [
    "DagNode",
    "DagModel",
    "stochastic",
    "deterministic",
    "Violation",
    "ValidationReport",
    "validate",
    "topological_order",
    "markov_blanket",
    "log_density",
    "model_to_json",
    "model_from_json",
    "load_model",
    "save_model",
]


def _freeze(value):
    """Observed values are stored hashably: float or nested tuples."""
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    if arr.ndim == 1:
        return tuple(float(v) for v in arr)
    if arr.ndim == 2:
        return tuple(tuple(float(v) for v in row) for row in arr)
    raise ModelError("observed values must be scalar, vector, or matrix")


def _thaw(value):
    if value is None or isinstance(value, float):
        return value
    return np.asarray(value, dtype=float)


@dataclass(frozen=True)
class DagNode:
    name: str
    family: Family | None = None
    expr: Expr | None = None
    observed: float | tuple | None = None
    # deterministic guard: proposals driving the value <= 0 are rejected
    positive: bool = False
    # marks reference-prior copies introduced by the splitter
    split_copy: bool = False

    @property
    def is_stochastic(self) -> bool:
        return self.family is not None

    @property
    def is_observed(self) -> bool:
        return self.observed is not None

    @property
    def observed_value(self):
        return _thaw(self.observed)

    def references(self) -> set[str]:
        if self.expr is not None:
            return refs(self.expr)
        out: set[str] = set()
        if self.family is not None:  # malformed nodes are caught by validate()
            for p in self.family.params():
                out |= refs(p)
        return out


def stochastic(name: str, family: Family, observed=None, split_copy: bool = False) -> DagNode:
    """A stochastic node; ``observed`` fixes its value as data."""
    return DagNode(name, family=family, observed=_freeze(observed), split_copy=split_copy)


def deterministic(name: str, expr, positive: bool = False) -> DagNode:
    """A deterministic node defined by an expression of its parents."""
    e = as_expr(expr) if not isinstance(expr, str) else parse(expr)
    return DagNode(name, expr=e, positive=positive)


@dataclass(frozen=True)
class Violation:
    kind: str
    node: str | None
    detail: str

    def __str__(self) -> str:
        where = f" [{self.node}]" if self.node else ""
        return f"{self.kind}{where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok and not self.warnings:
            return "model ok"
        lines = [f"violation: {v}" for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


class DagModel:
    """An immutable node collection with derived graph indexes."""

    def __init__(
        self,
        nodes: Sequence[DagNode],
        cut_edges: Iterable[tuple[str, str]] = (),
        constants: Mapping[str, object] | None = None,
        name: str = "",
    ):
        self.nodes: tuple[DagNode, ...] = tuple(nodes)
        self.cut_edges: frozenset[tuple[str, str]] = frozenset((str(u), str(v)) for u, v in cut_edges)
        self.constants: dict = {k: _freeze(v) for k, v in (constants or {}).items()}
        self.name = name
        self.node_map: dict[str, DagNode] = {}
        for n in self.nodes:
            # duplicates are reported by validate(); keep the first
            self.node_map.setdefault(n.name, n)
        # direct reference graph (includes deterministic nodes)
        self.parents: dict[str, tuple[str, ...]] = {}
        self.children: dict[str, list[str]] = {n.name: [] for n in self.nodes}
        for n in self.nodes:
            ps = tuple(sorted(r for r in n.references() if r in self.node_map))
            self.parents[n.name] = ps
            for p in ps:
                self.children[p].append(n.name)
        self._order: tuple[str, ...] | None = None
        self._shapes: dict[str, tuple[int, ...]] | None = None
        self._skeleton: tuple[dict, dict] | None = None

    # -- derived structure -------------------------------------------------

    def constant_value(self, name: str):
        return _thaw(self.constants[name])

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Shape of every node (and constant); raises on malformed models."""
        if self._shapes is not None:
            return self._shapes
        env: dict[str, tuple[int, ...]] = {}
        for k, v in self.constants.items():
            env[k] = exprs.const_shape(v)
        for n in self.nodes:
            if n.is_stochastic:
                env[n.name] = n.family.shape
        for name in topological_order(self):
            n = self.node_map[name]
            if not n.is_stochastic:
                env[name] = infer_shape(n.expr, env)
        self._shapes = env
        return env

    def _skel(self) -> tuple[dict, dict]:
        """Stochastic skeleton: parents/children with deterministic nodes
        collapsed away."""
        if self._skeleton is not None:
            return self._skeleton
        det_sources: dict[str, frozenset[str]] = {}

        def sources(name: str) -> frozenset[str]:
            n = self.node_map[name]
            if n.is_stochastic:
                return frozenset((name,))
            if name not in det_sources:
                out: set[str] = set()
                for p in self.parents[name]:
                    out |= sources(p)
                det_sources[name] = frozenset(out)
            return det_sources[name]

        topological_order(self)  # guarantees acyclicity before recursion
        sparents: dict[str, frozenset[str]] = {}
        schildren: dict[str, set[str]] = {n.name: set() for n in self.nodes if n.is_stochastic}
        for n in self.nodes:
            if not n.is_stochastic:
                continue
            ps: set[str] = set()
            for p in self.parents[n.name]:
                ps |= sources(p)
            sparents[n.name] = frozenset(ps)
            for p in ps:
                schildren[p].add(n.name)
        self._skeleton = (sparents, {k: frozenset(v) for k, v in schildren.items()})
        return self._skeleton

    def stochastic_parents(self, name: str) -> frozenset[str]:
        return self._skel()[0][name]

    def stochastic_children(self, name: str) -> frozenset[str]:
        return self._skel()[1][name]

    def topological_order(self) -> tuple[str, ...]:
        return topological_order(self)

    def markov_blanket(self, name: str) -> frozenset[str]:
        return markov_blanket(self, name)

    def validate(self) -> "ValidationReport":
        return validate(self)

    def hash(self) -> str:
        payload = json.dumps(model_to_json(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def replace(self, nodes=None, cut_edges=None, constants=None, name=None) -> "DagModel":
        return DagModel(
            self.nodes if nodes is None else nodes,
            self.cut_edges if cut_edges is None else cut_edges,
            self.constants if constants is None else constants,
            self.name if name is None else name,
        )


# ---------------------------------------------------------------------------
# operations


def topological_order(model: DagModel) -> tuple[str, ...]:
    """Parents-before-children order, lexicographic among ties, so the result
    is stable under permutation of the input node list."""
    if model._order is not None:
        return model._order
    indeg = {n.name: 0 for n in model.nodes}
    for name, ps in model.parents.items():
        indeg[name] = len(ps)
    ready = [name for name, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    out: list[str] = []
    while ready:
        name = heapq.heappop(ready)
        out.append(name)
        for c in model.children[name]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(out) != len(model.nodes):
        stuck = sorted(name for name, d in indeg.items() if d > 0)
        raise ModelError(f"model graph contains a cycle through {stuck}")
    model._order = tuple(out)
    return model._order


def markov_blanket(model: DagModel, name: str) -> frozenset[str]:
    """Parents, children, and co-parents of a stochastic node, all read off
    the stochastic skeleton (deterministic nodes are transparent)."""
    node = model.node_map.get(name)
    if node is None:
        raise ContractError(f"unknown node {name!r}")
    if not node.is_stochastic:
        raise ContractError(f"markov blanket is defined for stochastic nodes, {name!r} is deterministic")
    out = set(model.stochastic_parents(name))
    children = model.stochastic_children(name)
    out |= children
    for c in children:
        out |= model.stochastic_parents(c)
    out.discard(name)
    return frozenset(out)


def log_density(node: DagNode, value, parent_values: Mapping[str, object]) -> float:
    """Log density of a stochastic node at ``value`` given parent values."""
    if not node.is_stochastic:
        raise ContractError(f"{node.name!r} is deterministic, it has no density")
    params = [exprs.evaluate(p, parent_values) for p in node.family.params()]
    if node.family.shape == ():
        value = float(value)
    else:
        value = np.asarray(value, dtype=float)
    return float(node.family.logpdf(value, *params))


def validate(model: DagModel) -> ValidationReport:
    """Structural checks; the report is empty iff the model is well-formed."""
    rep = ValidationReport()
    seen: set[str] = set()
    for n in model.nodes:
        if n.name in seen:
            rep.violations.append(Violation("DuplicateName", n.name, "node name appears more than once"))
        seen.add(n.name)
        if not n.name or any(ch in n.name for ch in " \t\n()"):
            rep.violations.append(Violation("BadName", n.name, "names must be nonempty without spaces or parens"))
        if n.name in model.constants:
            rep.violations.append(Violation("DuplicateName", n.name, "name collides with a constant"))
        if (n.family is None) == (n.expr is None):
            rep.violations.append(
                Violation("BadNode", n.name, "exactly one of family/expr must be set")
            )
            continue
        if n.expr is not None and n.is_observed:
            rep.violations.append(Violation("ObservedDeterministic", n.name, "deterministic nodes cannot be observed"))
        for r in n.references():
            if r not in model.node_map and r not in model.constants:
                rep.violations.append(Violation("DanglingReference", n.name, f"reference to unknown name {r!r}"))
    if not rep.ok:
        return rep

    try:
        topological_order(model)
    except ModelError as exc:
        rep.violations.append(Violation("CycleDetected", None, str(exc)))
        return rep

    try:
        shapes = model.shapes()
    except ModelError as exc:
        rep.violations.append(Violation("ShapeMismatch", None, str(exc)))
        return rep

    for n in model.nodes:
        if not n.is_stochastic:
            if n.positive and shapes[n.name] != ():
                rep.violations.append(Violation("BadNode", n.name, "positivity guards apply to scalars"))
            continue
        _check_family(model, n, shapes, rep)

    for u, v in sorted(model.cut_edges):
        if u not in model.node_map or v not in model.node_map:
            rep.violations.append(Violation("CutNotAnEdge", None, f"cut ({u}, {v}) names unknown nodes"))
            continue
        if not model.node_map[u].is_stochastic or not model.node_map[v].is_stochastic:
            rep.violations.append(Violation("CutNotAnEdge", None, f"cut ({u}, {v}) must join stochastic nodes"))
            continue
        if u not in model.stochastic_parents(v):
            rep.violations.append(
                Violation("CutNotAnEdge", None, f"cut ({u}, {v}): {u!r} is not a stochastic parent of {v!r}")
            )

    for n in model.nodes:
        if isinstance(n.family, ImproperFlat) and not n.split_copy:
            rep.warnings.append(
                Violation("ImproperPrior", n.name, "improper flat prior outside a split-copy role")
            )
        if n.is_stochastic and n.family.tag in ("bernoulli", "binomial") and not n.is_observed:
            rep.warnings.append(
                Violation("DiscreteLatent", n.name, "unobserved discrete nodes cannot be updated by the sampler")
            )
    return rep


def _const_eval(model: DagModel, e: Expr):
    """Evaluate an expression if it only references constants; else None."""
    if not refs(e) <= set(model.constants):
        return None
    try:
        env = {k: model.constant_value(k) for k in model.constants}
        return exprs.evaluate(e, env)
    except Exception:
        return None


def _check_family(model: DagModel, n: DagNode, shapes, rep: ValidationReport) -> None:
    fam = n.family
    env = shapes
    try:
        pshapes = [infer_shape(p, env) for p in fam.params()]
    except ModelError as exc:
        rep.violations.append(Violation("ShapeMismatch", n.name, str(exc)))
        return
    expected: list[tuple[int, ...]]
    if isinstance(fam, MultivariateNormal):
        expected = [(fam.dim,), (fam.dim, fam.dim)]
    elif isinstance(fam, Wishart):
        expected = [(fam.dim, fam.dim), ()]
    else:
        expected = [()] * len(pshapes)
    for pname, got, want in zip(fam.param_names, pshapes, expected):
        if got != want:
            rep.violations.append(
                Violation("ShapeMismatch", n.name, f"parameter {pname!r} has shape {got}, expected {want}")
            )
    if isinstance(fam, (MultivariateNormal, Wishart)) and fam.dim < 1:
        rep.violations.append(Violation("BadParameter", n.name, "dimension must be >= 1"))
    if isinstance(fam, Wishart):
        df = _const_eval(model, fam.df)
        if df is not None and df <= fam.dim - 1:
            rep.violations.append(Violation("BadParameter", n.name, f"wishart df {df} requires df > dim-1"))

    checks = {
        "beta": [("alpha", lambda v: v > 0), ("beta", lambda v: v > 0)],
        "gamma": [("shape", lambda v: v > 0), ("rate", lambda v: v > 0)],
        "normal": [("var", lambda v: v > 0)],
        "binomial": [("n", lambda v: v >= 0 and abs(v - round(v)) < 1e-9)],
        "bernoulli": [("p", lambda v: 0 <= v <= 1)],
    }
    for pname, pred in checks.get(fam.tag, []):
        e = fam.params()[fam.param_names.index(pname)]
        v = _const_eval(model, e)
        if v is not None and not pred(float(v)):
            rep.violations.append(Violation("BadParameter", n.name, f"{pname}={v} is outside its domain"))

    if n.is_observed:
        obs = n.observed_value
        got = np.shape(obs) if not isinstance(obs, float) else ()
        if got != fam.shape:
            rep.violations.append(Violation("ShapeMismatch", n.name, f"observed shape {got}, node shape {fam.shape}"))
            return
        _check_observed_support(model, n, rep)


def _check_observed_support(model: DagModel, n: DagNode, rep: ValidationReport) -> None:
    obs = n.observed_value
    fam = n.family
    bad = None
    if fam.tag == "bernoulli" and obs not in (0.0, 1.0):
        bad = f"{obs} is not 0/1"
    elif fam.tag == "binomial":
        if obs < 0 or abs(obs - round(obs)) > 1e-9:
            bad = f"{obs} is not a nonnegative integer"
        else:
            nval = _const_eval(model, fam.n)
            if nval is not None and obs > float(nval):
                bad = f"{obs} exceeds the trial count {nval}"
    elif fam.tag == "beta" and not (0.0 < obs < 1.0):
        bad = f"{obs} is outside (0, 1)"
    elif fam.tag == "gamma" and obs <= 0.0:
        bad = f"{obs} is outside (0, inf)"
    elif fam.tag == "uniform":
        lo = _const_eval(model, fam.lo)
        hi = _const_eval(model, fam.hi)
        if lo is not None and hi is not None and not (float(lo) <= obs <= float(hi)):
            bad = f"{obs} is outside [{lo}, {hi}]"
    elif fam.tag == "flat":
        if fam.support == "positive" and obs <= 0:
            bad = f"{obs} is outside (0, inf)"
        if fam.support == "unit" and not (0.0 < obs < 1.0):
            bad = f"{obs} is outside (0, 1)"
    if bad:
        rep.violations.append(Violation("ObservationOutsideSupport", n.name, bad))


# ---------------------------------------------------------------------------
# serialization


def _family_to_json(fam: Family) -> dict:
    out: dict = {"tag": fam.tag}
    if isinstance(fam, (MultivariateNormal, Wishart)):
        out["dim"] = fam.dim
    if isinstance(fam, ImproperFlat):
        out["support"] = fam.support
        out["flat_on"] = fam.flat_on
        if fam.node_shape:
            out["shape"] = list(fam.node_shape)
        return out
    out["params"] = {pname: printout(p) for pname, p in zip(fam.param_names, fam.params())}
    return out


def _family_from_json(d: Mapping) -> Family:
    tag = d["tag"]
    if tag not in FAMILY_TAGS:
        raise ModelError(f"unknown family tag {tag!r}")
    if tag == "flat":
        return ImproperFlat(
            support=d.get("support", "real"),
            flat_on=d.get("flat_on", "identity"),
            node_shape=tuple(d.get("shape", ())),
        )
    cls = FAMILY_TAGS[tag]
    params = {k: parse(v) for k, v in d["params"].items()}
    if tag in ("mvnormal", "wishart"):
        return cls(int(d["dim"]), *[params[p] for p in cls.param_names])
    kw = dict(params)
    if tag == "gamma":
        kw = {"shape_": params["shape"], "rate": params["rate"]}
    return cls(**kw)


def _obs_to_json(v):
    if v is None:
        return None
    if isinstance(v, float):
        return v
    return [list(r) if isinstance(r, tuple) else r for r in v]


def model_to_json(model: DagModel) -> dict:
    nodes = []
    for n in model.nodes:
        d: dict = {"name": n.name}
        if n.is_stochastic:
            d["family"] = _family_to_json(n.family)
            if n.is_observed:
                d["observed"] = _obs_to_json(n.observed)
            if n.split_copy:
                d["split_copy"] = True
        else:
            d["expr"] = printout(n.expr)
            if n.positive:
                d["positive"] = True
        nodes.append(d)
    out = {"nodes": nodes}
    if model.name:
        out["name"] = model.name
    if model.constants:
        out["constants"] = {k: _obs_to_json(v) for k, v in model.constants.items()}
    if model.cut_edges:
        out["cuts"] = sorted([list(e) for e in model.cut_edges])
    return out


def model_from_json(d: Mapping) -> DagModel:
    nodes = []
    for nd in d.get("nodes", []):
        name = nd["name"]
        if "family" in nd:
            fam = _family_from_json(nd["family"])
            nodes.append(
                DagNode(
                    name,
                    family=fam,
                    observed=_freeze(nd.get("observed")),
                    split_copy=bool(nd.get("split_copy", False)),
                )
            )
        elif "expr" in nd:
            nodes.append(DagNode(name, expr=parse(nd["expr"]), positive=bool(nd.get("positive", False))))
        else:
            raise ModelError(f"node {name!r} has neither family nor expr")
    return DagModel(
        nodes,
        cut_edges=[tuple(e) for e in d.get("cuts", [])],
        constants=d.get("constants") or {},
        name=d.get("name", ""),
    )


def load_model(path) -> DagModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))


def save_model(model: DagModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
