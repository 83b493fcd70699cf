"""Node splitting: turn one model into a split model with separator copies.

A split names separator nodes and partitions the evidence adjacent to them.
Each separator theta becomes two copies: theta_a sees the partition-a
evidence (usually keeping the original prior / defining expression) and
theta_b sees partition-b evidence under a reference prior on its transformed
scale.  Deterministic nodes that feed both partitions are cloned per side so
no evidence leaks across.  Nuisance parameters shared by both partitions
stay single but get cut edges toward one side, making the information flow
one-way.

The difference delta = h(theta_a) - h(theta_b) is the raw material for every
conflict estimator.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, ModelError, NumericalError
from .exprs import rename_refs
from .families import Beta, Const, ImproperFlat
from .model import DagModel, DagNode
from .trace import Trace, component_columns

__all__ = [
    "SplitSpec",
    "SplitModel",
    "DeltaSamples",
    "DeltaComponent",
    "jeffreys_reference",
    "auto_partition",
    "split_node",
    "delta_samples",
    "check_partition_independence",
]

_TRANSFORM_FOR_SUPPORT = {
    "unit": "logit",
    "binary": None,
    "count": None,
    "positive": "log",
    "real": "identity",
    "interval": "identity",
    "real_vector": "identity",
}


def jeffreys_reference(support: str, shape: tuple[int, ...] = ()):
    """Reference prior and matching transform for a support class.

    unit interval -> (Beta(1/2, 1/2), logit); positive half-line -> (flat on
    the log scale, log); real line / real vectors -> (flat, identity).
    """
    if shape:
        if support != "real" and support != "real_vector":
            raise ContractError(f"no vector reference prior for support {support!r}")
        return ImproperFlat("real", "identity", tuple(shape)), "identity"
    if support == "unit":
        return Beta(Const(0.5), Const(0.5)), "logit"
    if support == "positive":
        return ImproperFlat("positive", "log"), "log"
    if support in ("real", "real_vector"):
        return ImproperFlat("real", "identity"), "identity"
    raise ContractError(f"no reference prior for support {support!r}")


def _flat_reference(support: str, transform: str, shape: tuple[int, ...] = ()):
    if shape:
        return ImproperFlat("real", "identity", tuple(shape))
    sup = {"logit": "unit", "log": "positive", "identity": "real"}[transform]
    return ImproperFlat(sup, transform if transform != "identity" else "identity")


@dataclass
class SplitSpec:
    separators: tuple[str, ...]
    assignment: dict[str, str] | None = None  # node -> 'a' | 'b'
    anchor: str | None = None  # alternative to an explicit assignment
    reference_prior: dict[str, str] = field(default_factory=lambda: {"a": "keep", "b": "jeffreys"})
    transforms: dict[str, str] = field(default_factory=dict)  # separator -> h
    nuisance_cuts: tuple[tuple[str, str], ...] = ()  # (node, partition)
    name: str = ""

    def __post_init__(self):
        self.separators = tuple(self.separators)
        self.nuisance_cuts = tuple((str(n), str(p)) for n, p in self.nuisance_cuts)
        if not self.separators:
            raise ContractError("a split needs at least one separator")
        if (self.assignment is None) == (self.anchor is None):
            raise ContractError("provide exactly one of assignment/anchor")
        for copy in ("a", "b"):
            choice = self.reference_prior.get(copy)
            if choice is None:
                raise ContractError(f"reference_prior must cover copy {copy!r}")
            if choice != "keep" and choice != "jeffreys" and not choice.startswith("flat:"):
                raise ContractError(f"unknown reference prior choice {choice!r}")
        if self.reference_prior["a"] == "keep" and self.reference_prior["b"] == "keep":
            pass  # rejected later against the model, with a clearer message
        for _, part in self.nuisance_cuts:
            if part not in ("a", "b"):
                raise ContractError("nuisance cut partitions must be 'a' or 'b'")

    def to_json(self) -> dict:
        out: dict = {"separators": list(self.separators)}
        if self.assignment is not None:
            out["assignment"] = dict(sorted(self.assignment.items()))
        if self.anchor is not None:
            out["anchor"] = self.anchor
        out["reference_prior"] = dict(self.reference_prior)
        if self.transforms:
            out["transforms"] = dict(sorted(self.transforms.items()))
        if self.nuisance_cuts:
            out["nuisance_cuts"] = [list(c) for c in self.nuisance_cuts]
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, d: Mapping) -> "SplitSpec":
        return cls(
            separators=tuple(d["separators"]),
            assignment=dict(d["assignment"]) if "assignment" in d else None,
            anchor=d.get("anchor"),
            reference_prior=dict(d.get("reference_prior", {"a": "keep", "b": "jeffreys"})),
            transforms=dict(d.get("transforms", {})),
            nuisance_cuts=tuple(tuple(c) for c in d.get("nuisance_cuts", ())),
            name=d.get("name", ""),
        )

    def hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class DeltaComponent:
    a_column: str
    b_column: str
    transform: str
    label: str


@dataclass
class SplitModel:
    model: DagModel
    spec: SplitSpec
    base_hash: str
    copies: dict[str, tuple[str, str]]  # separator -> (a name, b name)
    delta: tuple[DeltaComponent, ...]
    partition: dict[str, str]  # node -> 'a' | 'b' | 'shared'

    def hash(self) -> str:
        return self.model.hash()


@dataclass
class DeltaSamples:
    """Per-draw separator differences on the comparison scale.

    ``values`` has shape (n_chains, n_draws, k); component j is
    h_j(theta_a) - h_j(theta_b) for one scalar separator component.
    """

    values: np.ndarray
    labels: tuple[str, ...]
    transforms: tuple[str, ...]
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise ContractError("delta values must have shape (chains, draws, k)")
        if len(self.labels) != self.values.shape[2]:
            raise ContractError("component labels must match the last axis")

    @property
    def k(self) -> int:
        return self.values.shape[2]

    @property
    def n_draws(self) -> int:
        return self.values.shape[0] * self.values.shape[1]

    def pooled(self) -> np.ndarray:
        return self.values.reshape(-1, self.k)

    def component(self, j: int = 0) -> np.ndarray:
        return self.values[:, :, j]

    @classmethod
    def from_array(cls, arr, labels=None, n_chains: int = 1, transforms=None) -> "DeltaSamples":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim == 2:
            n, k = arr.shape
            if n % n_chains:
                raise ContractError("draw count must divide evenly into chains")
            arr = arr.reshape(n_chains, n // n_chains, k)
        k = arr.shape[2]
        labels = tuple(labels) if labels else tuple(f"delta[{j + 1}]" for j in range(k))
        transforms = tuple(transforms) if transforms else ("identity",) * k
        return cls(arr, labels, transforms)


# ---------------------------------------------------------------------------
# partitioning


def _undirected_adjacency(model: DagModel) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {n.name: set() for n in model.nodes}
    for name, ps in model.parents.items():
        for p in ps:
            adj[name].add(p)
            adj[p].add(name)
    return adj


def _shortest_path(adj, start, goal, blocked) -> list[str] | None:
    if start in blocked or goal in blocked:
        return None
    prev = {start: None}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            path = [cur]
            while prev[cur] is not None:
                cur = prev[cur]
                path.append(cur)
            return path[::-1]
        for nxt in sorted(adj[cur]):
            if nxt in blocked or nxt in prev:
                continue
            prev[nxt] = cur
            q.append(nxt)
    return None


def auto_partition(
    model: DagModel, separators: Sequence[str], anchor: str, blocked: Sequence[str] = ()
) -> dict[str, str]:
    """Label every non-separator node 'a' or 'b' by connectivity after the
    separators are removed; the anchor's component becomes partition b.

    ``blocked`` names additional nodes (shared nuisance parameters about to
    receive cut edges) that do not transmit connectivity and stay unlabeled.
    Raises NotSeparable (as ModelError) when removal leaves the graph
    connected, reporting one offending path.
    """
    sep = set(separators) | set(blocked)
    for s in separators:
        if s not in model.node_map:
            raise ContractError(f"unknown separator {s!r}")
    if anchor in sep:
        raise ContractError("anchor must not be a separator")
    if anchor not in model.node_map:
        raise ContractError(f"unknown anchor node {anchor!r}")
    adj = _undirected_adjacency(model)
    b_side: set[str] = set()
    q = deque([anchor])
    b_side.add(anchor)
    while q:
        cur = q.popleft()
        for nxt in adj[cur]:
            if nxt in sep or nxt in b_side:
                continue
            b_side.add(nxt)
            q.append(nxt)
    rest = [n.name for n in model.nodes if n.name not in sep and n.name not in b_side]
    if not rest:
        # connected: report a witness path between two separator neighbours
        for s in sorted(sep):
            nbrs = sorted(adj[s] - sep)
            if len(nbrs) >= 2:
                path = _shortest_path(adj, nbrs[0], nbrs[-1], sep)
                if path:
                    raise ModelError(
                        "NotSeparable: removing "
                        + ", ".join(sorted(sep))
                        + " leaves the graph connected via "
                        + " - ".join(path)
                    )
        raise ModelError("NotSeparable: removing the separators leaves the graph connected")
    out = {n: "b" for n in b_side}
    out.update({n: "a" for n in rest})
    return out


def _full_labels(model: DagModel, spec: SplitSpec) -> dict[str, str]:
    """Extend the user assignment to every non-separator node, or error when
    a connected component carries both labels."""
    sep = set(spec.separators)
    nuisance = {n for n, _ in spec.nuisance_cuts}
    if spec.anchor is not None:
        labels = auto_partition(model, spec.separators, spec.anchor, blocked=sorted(nuisance))
        for n in nuisance:
            labels[n] = "shared"
        return labels
    explicit = dict(spec.assignment)
    for key, lab in explicit.items():
        if key not in model.node_map:
            raise ContractError(f"assignment names unknown node {key!r}")
        if lab not in ("a", "b"):
            raise ContractError(f"assignment for {key!r} must be 'a' or 'b'")
        if key in sep:
            raise ContractError(f"assignment must not label the separator {key!r}")
    adj = _undirected_adjacency(model)
    labels: dict[str, str] = {}
    seen: set[str] = set()
    for start in (n.name for n in model.nodes):
        if start in seen or start in sep or start in nuisance:
            continue
        comp = [start]
        seen.add(start)
        q = deque([start])
        while q:
            cur = q.popleft()
            for nxt in adj[cur]:
                if nxt in seen or nxt in sep or nxt in nuisance:
                    continue
                seen.add(nxt)
                comp.append(nxt)
                q.append(nxt)
        found = {explicit[c] for c in comp if c in explicit}
        if len(found) > 1:
            a_node = next(c for c in comp if explicit.get(c) == "a")
            b_node = next(c for c in comp if explicit.get(c) == "b")
            path = _shortest_path(adj, a_node, b_node, sep | nuisance)
            raise ModelError(
                "NotSeparable: partitions a and b touch via "
                + (" - ".join(path) if path else f"{a_node} .. {b_node}")
            )
        lab = found.pop() if found else "a"
        for c in comp:
            labels[c] = lab
    for n in nuisance:
        labels[n] = "shared"
    return labels


# ---------------------------------------------------------------------------
# the split itself


def _copy_names(model: DagModel, sep: str) -> tuple[str, str]:
    a, b = f"{sep}_a", f"{sep}_b"
    if a in model.node_map or b in model.node_map:
        raise ContractError(f"split copies {a!r}/{b!r} collide with existing nodes")
    return a, b


def _reference_family(choice: str, node: DagNode, model: DagModel, transform: str, shape):
    if choice == "jeffreys":
        if node.is_stochastic:
            fam, _ = jeffreys_reference(node.family.support, shape)
        else:
            # deterministic separator: support is implied by the declared transform
            fam = Beta(Const(0.5), Const(0.5)) if transform == "logit" else _flat_reference("", transform, shape)
        return fam
    if choice.startswith("flat:"):
        t = choice.split(":", 1)[1]
        if t not in ("identity", "log", "logit"):
            raise ContractError(f"unknown flat transform {t!r}")
        return _flat_reference("", t, shape)
    raise ContractError(f"unknown reference prior choice {choice!r}")


def _default_transform(model: DagModel, node: DagNode, spec: SplitSpec) -> str:
    t = spec.transforms.get(node.name)
    if t is not None:
        if t not in ("identity", "log", "logit"):
            raise ContractError(f"unknown transform {t!r} for separator {node.name!r}")
        return t
    if node.is_stochastic:
        t = _TRANSFORM_FOR_SUPPORT.get(node.family.support)
        if t is None:
            raise ContractError(f"separator {node.name!r} has no default comparison transform")
        return t
    raise ContractError(
        f"deterministic separator {node.name!r} needs an explicit transform in the split spec"
    )


def split_node(model: DagModel, spec: SplitSpec) -> SplitModel:
    """Apply a node split, producing a runnable split model.

    Copy a keeps the original prior or defining expression unless the spec
    says otherwise; copy b gets the declared reference prior.  Exactly one
    copy may keep the original definition.
    """
    sep_nodes: dict[str, DagNode] = {}
    for s in spec.separators:
        node = model.node_map.get(s)
        if node is None:
            raise ContractError(f"unknown separator {s!r}")
        if node.is_observed:
            raise ContractError(f"separator {s!r} is observed; split an unobserved node")
        sep_nodes[s] = node
    if spec.reference_prior["a"] == "keep" and spec.reference_prior["b"] == "keep":
        raise ContractError("at most one split copy may keep the original definition")

    sep_set = set(spec.separators)
    for nz, _part in spec.nuisance_cuts:
        node = model.node_map.get(nz)
        if node is None:
            raise ContractError(f"nuisance cut names unknown node {nz!r}")
        if not node.is_stochastic or node.is_observed:
            raise ContractError(f"nuisance cut node {nz!r} must be an unobserved stochastic node")
        for s in sep_set:
            if s in node.references():
                raise ContractError(f"nuisance node {nz!r} references separator {s!r}")

    labels = _full_labels(model, spec)
    shapes = model.shapes()

    # which sides consume each non-separator deterministic node
    det_sides: dict[str, set[str]] = {}

    def _mark(det_name: str, side: str) -> None:
        stack = [det_name]
        while stack:
            cur = stack.pop()
            node = model.node_map.get(cur)
            if node is None or node.is_stochastic or cur in sep_set:
                continue
            sides = det_sides.setdefault(cur, set())
            if side in sides:
                continue
            sides.add(side)
            stack.extend(model.parents[cur])

    for n in model.nodes:
        if n.name in sep_set:
            for r in n.references():
                _mark(r, "a")  # copy-a keeps the defining expression
            continue
        if not n.is_stochastic:
            continue
        side = labels[n.name]
        side = "a" if side == "shared" else side
        for r in n.references():
            _mark(r, side)
    for det_name, node in ((d.name, d) for d in model.nodes if not d.is_stochastic):
        det_sides.setdefault(det_name, set())

    cloned = {d for d, sides in det_sides.items() if sides == {"a", "b"}}

    def _mapping_for(side: str) -> dict[str, str]:
        out = {s: f"{s}_{side}" for s in sep_set}
        out.update({d: f"{d}_{side}" for d in cloned})
        return out

    map_a, map_b = _mapping_for("a"), _mapping_for("b")
    copies = {s: _copy_names(model, s) for s in spec.separators}

    new_nodes: list[DagNode] = []
    partition: dict[str, str] = {}
    for n in model.nodes:
        name = n.name
        if name in sep_set:
            a_name, b_name = copies[name]
            transform = _default_transform(model, n, spec)
            for copy_name, copy_side, choice in (
                (a_name, "a", spec.reference_prior["a"]),
                (b_name, "b", spec.reference_prior["b"]),
            ):
                mapping = map_a if copy_side == "a" else map_b
                if choice == "keep":
                    if n.is_stochastic:
                        fam = _rename_family(n.family, mapping)
                        new_nodes.append(DagNode(copy_name, family=fam, split_copy=True))
                    else:
                        new_nodes.append(
                            DagNode(copy_name, expr=rename_refs(n.expr, mapping), positive=n.positive)
                        )
                else:
                    fam = _reference_family(choice, n, model, transform, shapes[name])
                    new_nodes.append(DagNode(copy_name, family=fam, split_copy=True))
                partition[copy_name] = copy_side
            continue
        lab = labels[name]
        partition[name] = lab
        side = "a" if lab == "shared" else lab
        mapping = map_a if side == "a" else map_b
        if not n.is_stochastic:
            if name in cloned:
                for cname, m, s in ((f"{name}_a", map_a, "a"), (f"{name}_b", map_b, "b")):
                    if cname in model.node_map:
                        raise ContractError(f"clone name {cname!r} collides with an existing node")
                    new_nodes.append(DagNode(cname, expr=rename_refs(n.expr, m), positive=n.positive))
                    partition[cname] = s
                partition.pop(name, None)
            else:
                m = map_b if det_sides.get(name) == {"b"} else map_a
                new_nodes.append(DagNode(name, expr=rename_refs(n.expr, m), positive=n.positive))
                if det_sides.get(name) == {"b"}:
                    partition[name] = "b"
        else:
            fam = _rename_family(n.family, mapping)
            new_nodes.append(
                DagNode(name, family=fam, observed=n.observed, positive=n.positive, split_copy=n.split_copy)
            )

    split = DagModel(
        new_nodes,
        cut_edges=set(model.cut_edges),
        constants=model.constants,
        name=(model.name + "|" if model.name else "") + (spec.name or "+".join(spec.separators)),
    )

    # nuisance cuts: sever feedback from the named partition's children
    cuts = set(split.cut_edges)
    for nz, part in spec.nuisance_cuts:
        hit = 0
        for c in sorted(split.stochastic_children(nz)):
            base = c
            lab = partition.get(base)
            if lab == part:
                cuts.add((nz, c))
                hit += 1
        if not hit:
            raise ContractError(f"nuisance cut ({nz!r}, {part!r}) severs no edges")
    if cuts != split.cut_edges:
        split = split.replace(cut_edges=cuts)

    delta = _delta_components(split, spec, copies, shapes)
    out = SplitModel(
        model=split,
        spec=spec,
        base_hash=model.hash(),
        copies=copies,
        delta=delta,
        partition=partition,
    )
    check_partition_independence(out)
    return out


def _rename_family(fam, mapping):
    if isinstance(fam, ImproperFlat):
        return fam
    fields = {}
    for pname, p in zip(fam.param_names, fam.params()):
        fields[pname] = rename_refs(p, mapping)
    if fam.tag == "gamma":
        fields = {"shape_": fields["shape"], "rate": fields["rate"]}
    if fam.tag in ("mvnormal", "wishart"):
        return type(fam)(fam.dim, *[fields[p] for p in fam.param_names])
    return type(fam)(**fields)


def _delta_components(split: DagModel, spec: SplitSpec, copies, shapes) -> tuple[DeltaComponent, ...]:
    out = []
    for s in spec.separators:
        a_name, b_name = copies[s]
        shape = shapes[s]
        t = spec.transforms.get(s)
        if t is None:
            node = split.node_map[b_name]
            if node.is_stochastic and node.family.tag != "flat":
                t = _TRANSFORM_FOR_SUPPORT.get(node.family.support, "identity")
            elif node.is_stochastic and node.family.tag == "flat":
                t = node.family.transform if not node.family.node_shape else "identity"
            else:
                t = "identity"
        if shape == ():
            out.append(DeltaComponent(a_name, b_name, t, s))
        else:
            if t != "identity":
                raise ContractError("vector separators compare on the identity scale")
            cols_a = component_columns(a_name, shape)
            cols_b = component_columns(b_name, shape)
            labs = component_columns(s, shape)
            for ca, cb, lab in zip(cols_a, cols_b, labs):
                out.append(DeltaComponent(ca, cb, t, lab))
    return tuple(out)


def check_partition_independence(split: SplitModel) -> None:
    """Verify that a- and b-labelled nodes cannot reach each other once the
    separator copies are removed and cut edges are severed."""
    model = split.model
    adj = _undirected_adjacency(model)
    for u, v in model.cut_edges:
        adj[u].discard(v)
        adj[v].discard(u)
    blocked = {c for pair in split.copies.values() for c in pair}
    a_nodes = sorted(n for n, lab in split.partition.items() if lab == "a" and n in model.node_map)
    b_nodes = {n for n, lab in split.partition.items() if lab == "b" and n in model.node_map}
    if not a_nodes or not b_nodes:
        return
    seen = set()
    q = deque()
    for n in a_nodes:
        if n not in blocked:
            seen.add(n)
            q.append(n)
    prev = {n: None for n in seen}
    while q:
        cur = q.popleft()
        if cur in b_nodes:
            path = [cur]
            while prev[cur] is not None:
                cur = prev[cur]
                path.append(cur)
            raise ModelError(
                "split partitions are not independent: path " + " - ".join(path[::-1])
            )
        for nxt in sorted(adj[cur]):
            if nxt in blocked or nxt in seen:
                continue
            seen.add(nxt)
            prev[nxt] = cur
            q.append(nxt)


def delta_samples(trace: Trace, split: SplitModel, check_hash: bool = True) -> DeltaSamples:
    """Extract h(theta_a) - h(theta_b) per draw from a trace of the split
    model."""
    if check_hash:
        got = trace.meta.get("model_hash")
        want = split.model.hash()
        if got != want:
            raise ContractError(
                "trace was sampled from a different model "
                f"(trace hash {str(got)[:12]}.., split hash {want[:12]}..)"
            )
    cols = {}
    for comp in split.delta:
        for c in (comp.a_column, comp.b_column):
            if c not in cols:
                cols[c] = trace.component(c)
    k = len(split.delta)
    first = next(iter(cols.values()))
    values = np.empty(first.shape + (k,))
    for j, comp in enumerate(split.delta):
        ha = _apply_transform(cols[comp.a_column], comp.transform, comp.a_column)
        hb = _apply_transform(cols[comp.b_column], comp.transform, comp.b_column)
        values[:, :, j] = ha - hb
    if not np.isfinite(values).all():
        raise NumericalError(
            "delta samples contain non-finite values; check the comparison transform "
            "against the separator's support"
        )
    labels = tuple(c.label for c in split.delta)
    transforms = tuple(c.transform for c in split.delta)
    return DeltaSamples(
        values,
        labels,
        transforms,
        source={"model_hash": split.model.hash(), "split": split.spec.to_json()},
    )


def _apply_transform(arr: np.ndarray, transform: str, col: str) -> np.ndarray:
    if transform == "identity":
        return arr.astype(float, copy=True)
    if transform == "log":
        if np.any(arr <= 0):
            raise NumericalError(f"log transform of non-positive samples in {col!r}")
        return np.log(arr)
    if transform == "logit":
        if np.any((arr <= 0) | (arr >= 1)):
            raise NumericalError(f"logit transform outside (0,1) in {col!r}")
        return np.log(arr) - np.log1p(-arr)
    raise ContractError(f"unknown transform {transform!r}")
