"""Metropolis-within-Gibbs sampling engine.

Every unobserved stochastic node is updated once per sweep.  The generic
update is an adaptive random-walk Metropolis step on the node's transformed
scale (logit for unit-interval support, log for positive support, identity
for the real line, log-Cholesky for SPD matrices); proposal scales adapt by
Robbins-Monro on the log scale during burn-in only, toward 0.44 acceptance
for scalars and 0.234 for blocks.  Nodes whose full conditional is
recognizably conjugate are drawn exactly instead, and nodes with no active
children are drawn from their prior.

Cut edges remove a child's likelihood from its parent's update while the
child still conditions on the parent's current value, reproducing one-way
"cut" information flow.

Chain c draws from a dedicated generator seeded by (seed, c), so traces are
bitwise reproducible for a fixed configuration regardless of how chains are
scheduled.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .conjugate import GibbsSpec, find_gibbs
from .errors import ContractError, ExpressionDomainError, SamplingError
from .exprs import compile_expr
from .families import Binomial, ImproperFlat, MultivariateNormal, Wishart, mvn_sample_from_precision
from .model import DagModel, topological_order, validate
from .trace import Trace

__all__ = ["SamplerConfig", "run_mcmc"]

_LOG_2PI = math.log(2.0 * math.pi)
_NEG_INF = -math.inf


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 2
    n_iterations: int = 2000  # total sweeps, including burn-in
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    adapt_window: int = 50
    target_accept_scalar: float = 0.44
    target_accept_block: float = 0.234
    enable_conjugate: bool = True

    def __post_init__(self):
        if self.n_chains < 1:
            raise ContractError("n_chains must be positive")
        if self.n_iterations < 1:
            raise ContractError("n_iterations must be positive")
        if not (0 <= self.burn_in < self.n_iterations):
            raise ContractError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ContractError("thin must be >= 1")
        if self.adapt_window < 1:
            raise ContractError("adapt_window must be >= 1")
        for t in (self.target_accept_scalar, self.target_accept_block):
            if not (0.0 < t < 1.0):
                raise ContractError("target acceptance rates must be in (0, 1)")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in + self.thin - 1) // self.thin

    def to_json(self) -> dict:
        return {
            "n_chains": self.n_chains,
            "n_iterations": self.n_iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
            "adapt_window": self.adapt_window,
            "target_accept_scalar": self.target_accept_scalar,
            "target_accept_block": self.target_accept_block,
            "enable_conjugate": self.enable_conjugate,
        }


# ---------------------------------------------------------------------------
# transforms


def _softplus(z: float) -> float:
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _ilogit(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _logit(x: float) -> float:
    return math.log(x / (1.0 - x))


class _Transform:
    __slots__ = ("h", "hinv", "logjac")

    def __init__(self, h, hinv, logjac):
        self.h = h
        self.hinv = hinv
        self.logjac = logjac  # log |dx/dz| at z


_IDENTITY = _Transform(lambda x: x, lambda z: z, lambda z: 0.0)
_LOG = _Transform(math.log, math.exp, lambda z: z)
_LOGIT = _Transform(_logit, _ilogit, lambda z: -_softplus(z) - _softplus(-z))


def _interval_transform(lo: float, hi: float) -> _Transform:
    width = hi - lo
    lw = math.log(width)
    return _Transform(
        lambda x: _logit((x - lo) / width),
        lambda z: lo + width * _ilogit(z),
        lambda z: lw - _softplus(z) - _softplus(-z),
    )


# ---------------------------------------------------------------------------
# compiled model pieces


class _Det:
    __slots__ = ("name", "fn", "positive")

    def __init__(self, name, fn, positive):
        self.name = name
        self.fn = fn
        self.positive = positive


def _recompute_dets(dets, state) -> None:
    for d in dets:
        v = d.fn(state)
        if d.positive and v <= 0.0:
            raise ExpressionDomainError(f"{d.name}: positivity guard violated")
        state[d.name] = v


class _Compiled:
    """Shared, immutable compile artifacts for one model."""

    def __init__(self, model: DagModel, record):
        report = validate(model)
        if not report.ok:
            raise SamplingError("model failed validation:\n" + str(report))
        self.model = model
        self.shapes = model.shapes()
        self.order = topological_order(model)
        consts = model.constants

        self.det: dict[str, _Det] = {}
        self.param_fns: dict[str, tuple] = {}
        self.loglik: dict[str, object] = {}
        self.getter: dict[str, object] = {}

        for name in self.order:
            node = model.node_map[name]
            if not node.is_stochastic:
                fn, _ = compile_expr(node.expr, self.shapes, consts)
                self.det[name] = _Det(name, fn, node.positive)
                continue
            pfns = tuple(compile_expr(p, self.shapes, consts)[0] for p in node.family.params())
            self.param_fns[name] = pfns
            if node.is_observed:
                obs = node.observed_value
                get = (lambda v: (lambda state: v))(obs)
            else:
                get = (lambda nm: (lambda state: state[nm]))(name)
            self.getter[name] = get
            self.loglik[name] = self._make_loglik(node, pfns, get)

        # deterministic nodes affected by each stochastic node, in topo order
        self.affected: dict[str, tuple[_Det, ...]] = {}
        for name in self.order:
            node = model.node_map[name]
            if not node.is_stochastic:
                continue
            hit: set[str] = set()
            stack = list(model.children[name])
            while stack:
                cur = stack.pop()
                if cur in hit or model.node_map[cur].is_stochastic:
                    continue
                hit.add(cur)
                stack.extend(model.children[cur])
            self.affected[name] = tuple(self.det[d] for d in self.order if d in hit)

        self.latent = tuple(
            name for name in self.order
            if model.node_map[name].is_stochastic and not model.node_map[name].is_observed
        )
        self.active_children: dict[str, tuple[str, ...]] = {}
        self.cut_children: dict[str, tuple[str, ...]] = {}
        for name in self.latent:
            kids = sorted(model.stochastic_children(name))
            cut = tuple(c for c in kids if (name, c) in model.cut_edges)
            self.active_children[name] = tuple(c for c in kids if (name, c) not in model.cut_edges)
            self.cut_children[name] = cut

        if record is None:
            rec = [n.name for n in model.nodes if (n.is_stochastic and not n.is_observed) or n.expr is not None]
        else:
            rec = list(record)
            for r in rec:
                if r not in model.node_map:
                    raise ContractError(f"cannot record unknown node {r!r}")
                if model.node_map[r].is_observed:
                    raise ContractError(f"cannot record observed node {r!r}")
        self.record = tuple(rec)

    def _make_loglik(self, node, pfns, get):
        fam = node.family
        if isinstance(fam, Binomial) and node.is_observed:
            # hot path: constant trial count, precomputed log-binomial coefficient
            from .exprs import refs as _refs

            if not _refs(fam.n) - set(self.model.constants):
                nfn = pfns[0]
                n = round(nfn({}))
                y = round(node.observed_value)
                logc = math.lgamma(n + 1) - math.lgamma(y + 1) - math.lgamma(n - y + 1)
                pfn = pfns[1]

                def ll(state, _y=float(y), _n=float(n), _logc=logc, _pfn=pfn):
                    p = _pfn(state)
                    if p <= 0.0:
                        return 0.0 if _y == 0.0 else _NEG_INF
                    if p >= 1.0:
                        return 0.0 if _y == _n else _NEG_INF
                    return _logc + _y * math.log(p) + (_n - _y) * math.log1p(-p)

                return ll
        if isinstance(fam, MultivariateNormal) and fam.dim == 2:
            mfn, prfn = pfns

            def ll2(state, _get=get, _mfn=mfn, _prfn=prfn):
                x = _get(state)
                m = _mfn(state)
                p = _prfn(state)
                a = float(p[0, 0])
                b = float(p[0, 1])
                c = float(p[1, 1])
                det = a * c - b * b
                if a <= 0.0 or det <= 0.0:
                    return _NEG_INF
                d0 = float(x[0]) - float(m[0])
                d1 = float(x[1]) - float(m[1])
                q = a * d0 * d0 + 2.0 * b * d0 * d1 + c * d1 * d1
                return -_LOG_2PI + 0.5 * math.log(det) - 0.5 * q

            return ll2
        logpdf = fam.logpdf
        if len(pfns) == 0:
            return lambda state, _g=get, _f=logpdf: float(_f(_g(state)))
        if len(pfns) == 1:
            f0 = pfns[0]
            return lambda state, _g=get, _f=logpdf, _f0=f0: float(_f(_g(state), _f0(state)))
        f0, f1 = pfns
        return lambda state, _g=get, _f=logpdf, _f0=f0, _f1=f1: float(_f(_g(state), _f0(state), _f1(state)))


# ---------------------------------------------------------------------------
# per-chain updaters


class _UpdaterBase:
    kind = "base"

    def __init__(self, comp: _Compiled, name: str):
        self.name = name
        self.prior_ll = comp.loglik[name]
        self.dets = comp.affected[name]
        self.active = comp.active_children[name]
        self.active_ll = tuple(comp.loglik[c] for c in self.active)
        self.cut = comp.cut_children[name]
        self.cut_ll = tuple(comp.loglik[c] for c in self.cut)

    def _refresh(self, state, cache) -> None:
        cache[self.name] = self.prior_ll(state)
        for c, llf in zip(self.active, self.active_ll):
            cache[c] = llf(state)
        for c, llf in zip(self.cut, self.cut_ll):
            try:
                cache[c] = llf(state)
            except ExpressionDomainError:
                cache[c] = _NEG_INF

    def _commit(self, state, xn, cache) -> None:
        state[self.name] = xn
        _recompute_dets(self.dets, state)
        self._refresh(state, cache)


class _Rwm(_UpdaterBase):
    kind = "rwm"

    def __init__(self, comp, name, transform, dim, target, window):
        super().__init__(comp, name)
        self.t = transform
        self.dim = dim  # 0 => scalar
        self.target = target
        self.window = window
        self.log_scale = 0.0 if dim == 0 else math.log(2.38 / math.sqrt(max(1, dim)))
        self.scale = math.exp(self.log_scale)
        self.batch_n = 0
        self.batch_acc = 0
        self.batch_idx = 0
        self.post_n = 0
        self.post_acc = 0

    def _propose(self, state, rng):
        raise NotImplementedError

    def step(self, state, cache, rng, adapting: bool) -> None:
        accepted = self._metropolis(state, cache, rng)
        if adapting:
            self.batch_n += 1
            self.batch_acc += accepted
            if self.batch_n == self.window:
                rate = self.batch_acc / self.window
                self.batch_idx += 1
                self.log_scale += (rate - self.target) / math.sqrt(self.batch_idx)
                self.scale = math.exp(self.log_scale)
                self.batch_n = 0
                self.batch_acc = 0
        else:
            self.post_n += 1
            self.post_acc += accepted

    def _metropolis(self, state, cache, rng) -> int:
        raise NotImplementedError


class _RwmScalar(_Rwm):
    def _metropolis(self, state, cache, rng) -> int:
        t = self.t
        x = state[self.name]
        z = t.h(x)
        zn = z + self.scale * rng.standard_normal()
        u = rng.random()
        old = cache[self.name] + t.logjac(z)
        for c in self.active:
            old += cache[c]
        saved = [state[d.name] for d in self.dets]
        state[self.name] = t.hinv(zn)
        new = _NEG_INF
        new_prior = _NEG_INF
        new_active: list[float] = []
        try:
            _recompute_dets(self.dets, state)
            new_prior = self.prior_ll(state)
            new = new_prior + t.logjac(zn)
            for llf in self.active_ll:
                v = llf(state)
                new_active.append(v)
                new += v
        except ExpressionDomainError:
            new = _NEG_INF
        logu = math.log(u) if u > 0.0 else _NEG_INF
        if new > _NEG_INF and (new - old) > logu:
            cache[self.name] = new_prior
            for c, v in zip(self.active, new_active):
                cache[c] = v
            for c, llf in zip(self.cut, self.cut_ll):
                try:
                    cache[c] = llf(state)
                except ExpressionDomainError:
                    cache[c] = _NEG_INF
            return 1
        state[self.name] = x
        for d, v in zip(self.dets, saved):
            state[d.name] = v
        return 0


class _RwmVector(_Rwm):
    """Isotropic block proposal on a real vector."""

    def _metropolis(self, state, cache, rng) -> int:
        x = state[self.name]
        xn = x + self.scale * rng.standard_normal(self.dim)
        u = rng.random()
        old = cache[self.name]
        for c in self.active:
            old += cache[c]
        saved = [state[d.name] for d in self.dets]
        state[self.name] = xn
        new = _NEG_INF
        new_prior = _NEG_INF
        new_active: list[float] = []
        try:
            _recompute_dets(self.dets, state)
            new_prior = self.prior_ll(state)
            new = new_prior
            for llf in self.active_ll:
                v = llf(state)
                new_active.append(v)
                new += v
        except ExpressionDomainError:
            new = _NEG_INF
        logu = math.log(u) if u > 0.0 else _NEG_INF
        if new > _NEG_INF and (new - old) > logu:
            cache[self.name] = new_prior
            for c, v in zip(self.active, new_active):
                cache[c] = v
            for c, llf in zip(self.cut, self.cut_ll):
                try:
                    cache[c] = llf(state)
                except ExpressionDomainError:
                    cache[c] = _NEG_INF
            return 1
        state[self.name] = x
        for d, v in zip(self.dets, saved):
            state[d.name] = v
        return 0


class _RwmCholesky(_Rwm):
    """Random walk on the log-Cholesky coordinates of an SPD matrix.

    With W = L L' and z = (log diag L, strict lower triangle of L), the
    Jacobian is |dW/dz| = 2^d * prod_i L_ii^(d - i + 2) for 1-based i.
    """

    def __init__(self, comp, name, d, target, window):
        self.d = d
        super().__init__(comp, name, None, d * (d + 1) // 2, target, window)

    def _pack(self, w: np.ndarray) -> np.ndarray:
        chol = np.linalg.cholesky(w)
        d = self.d
        z = np.empty(self.dim)
        z[:d] = np.log(np.diag(chol))
        k = d
        for i in range(1, d):
            for j in range(i):
                z[k] = chol[i, j]
                k += 1
        return z

    def _unpack(self, z: np.ndarray) -> np.ndarray:
        d = self.d
        chol = np.zeros((d, d))
        np.fill_diagonal(chol, np.exp(z[:d]))
        k = d
        for i in range(1, d):
            for j in range(i):
                chol[i, j] = z[k]
                k += 1
        return chol @ chol.T

    def _logjac(self, z: np.ndarray) -> float:
        d = self.d
        out = d * math.log(2.0)
        for i in range(d):
            out += (d - i + 1) * float(z[i])
        return out

    def _metropolis(self, state, cache, rng) -> int:
        x = state[self.name]
        z = self._pack(x)
        zn = z + self.scale * rng.standard_normal(self.dim)
        u = rng.random()
        old = cache[self.name] + self._logjac(z)
        for c in self.active:
            old += cache[c]
        saved = [state[d.name] for d in self.dets]
        state[self.name] = self._unpack(zn)
        new = _NEG_INF
        new_prior = _NEG_INF
        new_active: list[float] = []
        try:
            _recompute_dets(self.dets, state)
            new_prior = self.prior_ll(state)
            new = new_prior + self._logjac(zn)
            for llf in self.active_ll:
                v = llf(state)
                new_active.append(v)
                new += v
        except ExpressionDomainError:
            new = _NEG_INF
        logu = math.log(u) if u > 0.0 else _NEG_INF
        if new > _NEG_INF and (new - old) > logu:
            cache[self.name] = new_prior
            for c, v in zip(self.active, new_active):
                cache[c] = v
            for c, llf in zip(self.cut, self.cut_ll):
                try:
                    cache[c] = llf(state)
                except ExpressionDomainError:
                    cache[c] = _NEG_INF
            return 1
        state[self.name] = x
        for d, v in zip(self.dets, saved):
            state[d.name] = v
        return 0


class _PriorDraw(_UpdaterBase):
    kind = "prior-draw"

    def __init__(self, comp, name):
        super().__init__(comp, name)
        fam = comp.model.node_map[name].family
        self.sample = fam.sample
        self.pfns = comp.param_fns[name]

    def step(self, state, cache, rng, adapting: bool) -> None:
        params = [f(state) for f in self.pfns]
        self._commit(state, self.sample(rng, *params), cache)


class _Gibbs(_UpdaterBase):
    def __init__(self, comp, name, spec: GibbsSpec):
        super().__init__(comp, name)
        self.kind = "gibbs-" + spec.kind
        self.flat = spec.flat_prior
        self.pfns = comp.param_fns[name]
        shapes = comp.shapes
        consts = comp.model.constants
        self.kids = tuple(
            (comp.getter[c],) + tuple(compile_expr(a, shapes, consts)[0] for a in auxs)
            for c, auxs in spec.children
        )
        self.spec = spec
        node = comp.model.node_map[name]
        if isinstance(node.family, MultivariateNormal):
            self.d = node.family.dim
        elif isinstance(node.family, ImproperFlat) and node.family.node_shape:
            self.d = node.family.node_shape[0]
        else:
            self.d = 0

    def step(self, state, cache, rng, adapting: bool) -> None:
        k = self.spec.kind
        if k == "beta-binomial":
            a = self.pfns[0](state)
            b = self.pfns[1](state)
            sy = 0.0
            sf = 0.0
            for get_y, nfn in self.kids:
                y = get_y(state)
                sy += y
                sf += nfn(state) - y
            xn = float(rng.beta(a + sy, b + sf))
        elif k == "normal-mean":
            if self.flat:
                prec = 0.0
                num = 0.0
            else:
                m0 = self.pfns[0](state)
                v0 = self.pfns[1](state)
                prec = 1.0 / v0
                num = m0 / v0
            for get_y, varfn in self.kids:
                w = 1.0 / varfn(state)
                prec += w
                num += w * get_y(state)
            xn = num / prec + math.sqrt(1.0 / prec) * rng.standard_normal()
        elif k == "gamma-precision":
            a = self.pfns[0](state) + 0.5 * len(self.kids)
            b = self.pfns[1](state)
            for get_y, mfn in self.kids:
                r = get_y(state) - mfn(state)
                b += 0.5 * r * r
            xn = float(rng.gamma(a, 1.0 / b))
        elif k == "mvn-mean":
            if self.flat:
                post_p = np.zeros((self.d, self.d))
                rhs = np.zeros(self.d)
            else:
                m0 = self.pfns[0](state)
                post_p = self.pfns[1](state).copy()
                rhs = post_p @ m0
            for get_y, pfn in self.kids:
                pc = pfn(state)
                post_p = post_p + pc
                rhs = rhs + pc @ get_y(state)
            mean = np.linalg.solve(post_p, rhs)
            xn = mvn_sample_from_precision(rng, mean, post_p)
        elif k == "mvn-linear":
            # scalar Normal children with mean dot(x, node): standard
            # Bayesian linear-regression conditional
            if self.flat:
                post_p = np.zeros((self.d, self.d))
                rhs = np.zeros(self.d)
            else:
                m0 = self.pfns[0](state)
                post_p = np.array(self.pfns[1](state), dtype=float)
                rhs = post_p @ m0
            for get_y, xfn, varfn in self.kids:
                x = np.asarray(xfn(state), dtype=float)
                w = 1.0 / varfn(state)
                post_p = post_p + w * np.outer(x, x)
                rhs = rhs + (w * get_y(state)) * x
            mean = np.linalg.solve(post_p, rhs)
            xn = mvn_sample_from_precision(rng, mean, post_p)
        elif k == "wishart-precision":
            scale = np.array(self.pfns[0](state), dtype=float, copy=True)
            df = self.pfns[1](state)
            n = 0
            for get_x, mfn in self.kids:
                dx = get_x(state) - mfn(state)
                scale += np.outer(dx, dx)
                n += 1
            xn = Wishart.sample(rng, scale, df + n)
        else:  # pragma: no cover
            raise SamplingError(f"unknown gibbs kind {k!r}")
        self._commit(state, xn, cache)


# ---------------------------------------------------------------------------
# driver


def _build_updaters(comp: _Compiled, config: SamplerConfig):
    updaters = []
    plans: dict[str, str] = {}
    for name in comp.latent:
        node = comp.model.node_map[name]
        fam = node.family
        if fam.tag in ("bernoulli", "binomial"):
            raise SamplingError(
                f"node {name!r}: unobserved discrete nodes are not supported by this engine"
            )
        spec = find_gibbs(comp.model, node, comp.active_children[name]) if config.enable_conjugate else None
        if spec is not None:
            up = _Gibbs(comp, name, spec)
        elif not comp.active_children[name]:
            if isinstance(fam, ImproperFlat):
                raise SamplingError(
                    f"node {name!r}: improper flat prior with no active children has no proper posterior"
                )
            up = _PriorDraw(comp, name)
        else:
            tag = fam.transform
            if tag == "identity":
                up = _RwmScalar(comp, name, _IDENTITY, 0, config.target_accept_scalar, config.adapt_window)
            elif tag == "log":
                up = _RwmScalar(comp, name, _LOG, 0, config.target_accept_scalar, config.adapt_window)
            elif tag == "logit":
                up = _RwmScalar(comp, name, _LOGIT, 0, config.target_accept_scalar, config.adapt_window)
            elif tag == "interval_logit":
                lo = _const_param(comp, fam.lo)
                hi = _const_param(comp, fam.hi)
                if lo is not None and hi is not None and hi > lo:
                    t = _interval_transform(lo, hi)
                else:
                    t = _IDENTITY
                up = _RwmScalar(comp, name, t, 0, config.target_accept_scalar, config.adapt_window)
            elif tag == "identity_vector":
                d = comp.shapes[name][0]
                up = _RwmVector(comp, name, _IDENTITY, d, config.target_accept_block, config.adapt_window)
            elif tag == "log_cholesky":
                up = _RwmCholesky(comp, name, fam.dim, config.target_accept_block, config.adapt_window)
            else:  # pragma: no cover
                raise SamplingError(f"node {name!r}: no update rule for transform {tag!r}")
        updaters.append(up)
        plans[name] = up.kind
    return updaters, plans


def _const_param(comp: _Compiled, e) -> float | None:
    from .exprs import refs as _refs

    if _refs(e) - set(comp.model.constants):
        return None
    try:
        return float(compile_expr(e, comp.shapes, comp.model.constants)[0]({}))
    except ExpressionDomainError:
        return None


def _clamped_init(fam, value):
    """Pull a prior draw into the +/-2 band on its transform scale.

    Diffuse priors (Normal(0, 1e4), Gamma(1e-3, 1e-3), vague Wisharts)
    produce initial points so extreme that the first adaptation window is
    spent escaping them -- a Gamma(1e-3, 1e-3) draw can underflow to 1e-200,
    where the likelihood is flat and the chain stalls.  Clamping each
    component of the unconstrained representation to [-2, 2] keeps inits
    overdispersed but finite-scale.
    """
    tag = fam.transform
    if tag == "identity":
        return min(2.0, max(-2.0, value))
    if tag == "log":
        z = math.log(value) if value > 0 else -math.inf
        return math.exp(min(2.0, max(-2.0, z)))
    if tag == "logit":
        if value <= 0.0:
            z = -math.inf
        elif value >= 1.0:
            z = math.inf
        else:
            z = math.log(value / (1.0 - value))
        return _ilogit(min(2.0, max(-2.0, z)))
    if tag == "identity_vector":
        return np.clip(value, -2.0, 2.0)
    if tag == "log_cholesky":
        chol = np.linalg.cholesky(value)
        diag_z = np.log(np.diag(chol))
        off = chol[np.tril_indices_from(chol, -1)]
        if np.any(np.abs(diag_z) > 2.0) or np.any(np.abs(off) > 2.0):
            return np.eye(value.shape[0])
        return value
    return value


def _init_state(comp: _Compiled, rng) -> tuple[dict, dict]:
    model = comp.model
    last_bad = ""
    for _attempt in range(500):
        state: dict = {}
        ok = True
        for name in comp.order:
            node = model.node_map[name]
            if not node.is_stochastic:
                try:
                    _recompute_dets((comp.det[name],), state)
                except ExpressionDomainError as exc:
                    ok = False
                    last_bad = str(exc)
                    break
                continue
            if node.is_observed:
                state[name] = node.observed_value
                continue
            fam = node.family
            try:
                params = [f(state) for f in comp.param_fns[name]]
                state[name] = _clamped_init(fam, fam.sample(rng, *params))
            except (SamplingError, ExpressionDomainError):
                # improper prior (or unusable parent draw): neutral + jitter
                if fam.shape == ():
                    tag = fam.transform
                    z = 0.5 * rng.standard_normal()
                    if tag == "log":
                        state[name] = math.exp(z)
                    elif tag == "logit":
                        state[name] = _ilogit(z)
                    else:
                        state[name] = z
                elif len(fam.shape) == 1:
                    state[name] = 0.5 * rng.standard_normal(fam.shape[0])
                else:
                    state[name] = np.eye(fam.shape[0])
        if not ok:
            continue
        cache: dict = {}
        for name in comp.order:
            node = model.node_map[name]
            if not node.is_stochastic:
                continue
            try:
                cache[name] = comp.loglik[name](state)
            except ExpressionDomainError as exc:
                cache[name] = _NEG_INF
                last_bad = f"{name}: {exc}"
            if cache[name] == _NEG_INF:
                ok = False
                last_bad = last_bad or f"{name}: zero density at initial state"
                break
        if ok:
            return state, cache
    raise SamplingError(f"could not find a valid initial state after 500 attempts ({last_bad})")


def run_mcmc(model: DagModel, config: SamplerConfig, record=None) -> Trace:
    """Sample the model posterior; returns an in-memory Trace."""
    comp = _Compiled(model, record)
    if not comp.latent:
        raise SamplingError("model has no unobserved stochastic nodes")
    if config.n_retained < 100:
        warnings.warn(
            f"only {config.n_retained} retained draws per chain; diagnostics will be unstable",
            stacklevel=2,
        )

    n_ret = config.n_retained
    arrays = {
        name: np.empty((config.n_chains, n_ret) + comp.shapes[name]) for name in comp.record
    }
    rec_scalar = [(name, arrays[name]) for name in comp.record if comp.shapes[name] == ()]
    rec_array = [(name, arrays[name]) for name in comp.record if comp.shapes[name] != ()]

    acceptance: dict[str, list[float]] = {}
    plans_out: dict[str, str] = {}

    for chain in range(config.n_chains):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain]))
        updaters, plans = _build_updaters(comp, config)
        plans_out = plans
        state, cache = _init_state(comp, rng)
        burn = config.burn_in
        thin = config.thin
        pos = 0
        for it in range(config.n_iterations):
            adapting = it < burn
            for up in updaters:
                up.step(state, cache, rng, adapting)
            if it >= burn and (it - burn) % thin == 0:
                for name, arr in rec_scalar:
                    arr[chain, pos] = state[name]
                for name, arr in rec_array:
                    arr[chain, pos] = state[name]
                pos += 1
        for up in updaters:
            if isinstance(up, _Rwm):
                rate = up.post_acc / up.post_n if up.post_n else math.nan
                acceptance.setdefault(up.name, []).append(rate)
                if up.post_n >= 200 and rate < 0.001:
                    raise SamplingError(
                        f"node {up.name!r}: acceptance rate {rate:.2e} after burn-in; "
                        "the chain is effectively stuck"
                    )

    meta = {
        "model_hash": model.hash(),
        "model_name": model.name,
        "seed": config.seed,
        "config": config.to_json(),
        "acceptance": acceptance,
        "plans": plans_out,
        "version": __version__,
    }
    shapes = {name: comp.shapes[name] for name in comp.record}
    return Trace(names=comp.record, shapes=shapes, data=arrays, meta=meta)
