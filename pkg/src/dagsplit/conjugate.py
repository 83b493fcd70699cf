"""Recognition of exact full-conditional (Gibbs) updates.

Recognized conjugate pairs: Beta prior with Binomial/Bernoulli children,
Normal prior (or flat) with Normal children of known variance, Gamma prior
on a Normal precision, Wishart prior on a multivariate Normal precision,
the multivariate Normal mean as the vector analogue of the Normal-Normal
case, and a multivariate Normal (or flat vector) coefficient entering
scalar Normal children linearly through a dot product.  A node with no
active stochastic children is drawn directly from its prior.

Matching follows references through chains of deterministic identity nodes,
so ``y ~ Binomial(n, p)`` with ``p := theta`` still counts.  A node whose
deterministic descendants carry positivity guards is never matched; the
guard would truncate the conditional.
"""
from __future__ import annotations

from dataclasses import dataclass

from .exprs import Call, Const, Expr, Ref
from .families import Beta, Bernoulli, Binomial, Gamma, ImproperFlat, MultivariateNormal, Normal, Wishart
from .model import DagModel, DagNode

__all__ = ["GibbsSpec", "find_gibbs"]


@dataclass(frozen=True)
class GibbsSpec:
    kind: str  # 'beta-binomial' | 'normal-mean' | 'mvn-mean' | 'mvn-linear' | 'gamma-precision' | 'wishart-precision'
    flat_prior: bool
    # per child: (child name, auxiliary parameter expressions)
    children: tuple[tuple[str, tuple[Expr, ...]], ...]


def _expand(model: DagModel, e: Expr, depth: int = 0) -> Expr:
    """Follow Ref hops through deterministic nodes (bounded)."""
    while depth < 16 and isinstance(e, Ref):
        node = model.node_map.get(e.name)
        if node is None or node.is_stochastic:
            return e
        e = node.expr
        depth += 1
    return e


def _resolves_to(model: DagModel, e: Expr, target: str) -> bool:
    e = _expand(model, e)
    return isinstance(e, Ref) and e.name == target


def _depends_on(model: DagModel, e: Expr, target: str, depth: int = 0) -> bool:
    """True if ``e`` depends on ``target`` through deterministic nodes."""
    if depth > 32:
        return True  # be conservative
    if isinstance(e, Ref):
        if e.name == target:
            return True
        node = model.node_map.get(e.name)
        if node is not None and not node.is_stochastic:
            return _depends_on(model, node.expr, target, depth + 1)
        return False
    if isinstance(e, Call):
        return any(_depends_on(model, a, target, depth + 1) for a in e.args)
    return False


def _is_inverse_of(model: DagModel, e: Expr, target: str) -> bool:
    """Matches variance expressions of the form 1 / target."""
    e = _expand(model, e)
    return (
        isinstance(e, Call)
        and e.op == "/"
        and isinstance(e.args[0], Const)
        and e.args[0].value == 1.0
        and _resolves_to(model, e.args[1], target)
    )


def _linear_design(model: DagModel, e: Expr, target: str) -> Expr | None:
    """Match a child mean of the form dot(x, target) or dot(target, x) with
    ``x`` free of ``target``; return the design expression ``x``."""
    e = _expand(model, e)
    if not (isinstance(e, Call) and e.op == "dot" and len(e.args) == 2):
        return None
    lhs, rhs = e.args
    if _resolves_to(model, rhs, target) and not _depends_on(model, lhs, target):
        return lhs
    if _resolves_to(model, lhs, target) and not _depends_on(model, rhs, target):
        return rhs
    return None


def _guarded_dets(model: DagModel, name: str) -> bool:
    """Does any deterministic descendant of ``name`` carry a positivity guard?"""
    seen: set[str] = set()
    stack = [c for c in model.children[name]]
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        node = model.node_map[cur]
        if node.is_stochastic:
            continue
        if node.positive:
            return True
        stack.extend(model.children[cur])
    return False


def find_gibbs(model: DagModel, node: DagNode, active_children: tuple[str, ...]) -> GibbsSpec | None:
    """Return a Gibbs plan for ``node`` given its active (non-cut) stochastic
    children, or None if the generic random-walk update must be used."""
    name = node.name
    fam = node.family
    if _guarded_dets(model, name):
        return None
    if not active_children:
        return None  # direct prior draw is handled by the caller

    kids = [model.node_map[c] for c in active_children]

    if isinstance(fam, Beta):
        out = []
        for c in kids:
            if isinstance(c.family, Binomial):
                if not _resolves_to(model, c.family.p, name) or _depends_on(model, c.family.n, name):
                    return None
                out.append((c.name, (c.family.n,)))
            elif isinstance(c.family, Bernoulli):
                if not _resolves_to(model, c.family.p, name):
                    return None
                out.append((c.name, (Const(1.0),)))
            else:
                return None
        return GibbsSpec("beta-binomial", False, tuple(out))

    scalar_flat = isinstance(fam, ImproperFlat) and fam.node_shape == () and fam.support == "real"
    if isinstance(fam, Normal) or scalar_flat:
        out = []
        for c in kids:
            if not isinstance(c.family, Normal):
                return None
            if not _resolves_to(model, c.family.mean, name) or _depends_on(model, c.family.var, name):
                return None
            out.append((c.name, (c.family.var,)))
        return GibbsSpec("normal-mean", scalar_flat, tuple(out))

    vector_flat = isinstance(fam, ImproperFlat) and len(fam.node_shape) == 1
    if isinstance(fam, MultivariateNormal) or vector_flat:
        dim = fam.dim if isinstance(fam, MultivariateNormal) else fam.node_shape[0]
        out = []
        for c in kids:
            if not isinstance(c.family, MultivariateNormal) or c.family.dim != dim:
                break
            if not _resolves_to(model, c.family.mean, name) or _depends_on(model, c.family.precision, name):
                break
            out.append((c.name, (c.family.precision,)))
        else:
            return GibbsSpec("mvn-mean", vector_flat, tuple(out))
        # regression form: scalar Normal children, mean linear in the node
        out = []
        for c in kids:
            if not isinstance(c.family, Normal) or _depends_on(model, c.family.var, name):
                return None
            design = _linear_design(model, c.family.mean, name)
            if design is None:
                return None
            out.append((c.name, (design, c.family.var)))
        return GibbsSpec("mvn-linear", vector_flat, tuple(out))

    if isinstance(fam, Gamma):
        out = []
        for c in kids:
            if not isinstance(c.family, Normal):
                return None
            if not _is_inverse_of(model, c.family.var, name) or _depends_on(model, c.family.mean, name):
                return None
            out.append((c.name, (c.family.mean,)))
        return GibbsSpec("gamma-precision", False, tuple(out))

    if isinstance(fam, Wishart):
        out = []
        for c in kids:
            if not isinstance(c.family, MultivariateNormal) or c.family.dim != fam.dim:
                return None
            if not _resolves_to(model, c.family.precision, name) or _depends_on(model, c.family.mean, name):
                return None
            out.append((c.name, (c.family.mean,)))
        return GibbsSpec("wishart-precision", False, tuple(out))

    return None
