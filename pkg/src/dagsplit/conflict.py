"""Conflict p-values from separator differences.

Every estimator consumes delta samples (draws of h(theta_a) - h(theta_b))
and returns a conflict p-value: small values mean the two evidence
partitions disagree about the separator.  Monte Carlo standard errors
account for chain autocorrelation through effective sample sizes.

Tail-count estimators are written symmetrically: the positive- and
negative-tail proportions are computed by mirrored formulas rather than as
complements, so negating the input swaps them exactly in floating point and
two-sided p-values are bit-for-bit invariant under sign flips.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import ess as _ess
from .diagnostics import indicator_ess
from .errors import ContractError, NumericalError
from .kde import kde_evaluate, silverman_bandwidth
from .special import chi2_pdf, chi2_sf
from .splitting import DeltaSamples

__all__ = [
    "ConflictResult",
    "KdeConfig",
    "conflict_discrete",
    "conflict_one_sided",
    "conflict_two_sided",
    "conflict_kde_univariate",
    "conflict_chi2",
    "conflict_mahalanobis",
    "conflict_kde_multivariate",
    "conflict_auto",
    "component_moments",
]


@dataclass(frozen=True)
class ConflictResult:
    method: str
    p_value: float
    mc_se: float
    n_draws: int
    k: int
    details: dict = field(default_factory=dict)

    def conflict(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def summary(self) -> str:
        return (
            f"method={self.method} p={self.p_value:.6g} mc_se={self.mc_se:.2g} "
            f"draws={self.n_draws} k={self.k}"
        )


@dataclass(frozen=True)
class KdeConfig:
    bandwidth: float | str = "silverman"
    min_draws_univariate: int = 500
    min_draws_multivariate: int = 2000
    max_dim: int = 4
    sensitivity: bool = True

    def resolve_bandwidth(self, x: np.ndarray) -> float:
        if self.bandwidth == "silverman":
            return silverman_bandwidth(x)
        bw = float(self.bandwidth)
        if not bw > 0.0:
            raise ContractError("fixed bandwidth must be positive")
        return bw


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _as_delta(delta) -> DeltaSamples:
    if isinstance(delta, DeltaSamples):
        return delta
    return DeltaSamples.from_array(np.asarray(delta, dtype=float))


def _univariate(delta) -> tuple[DeltaSamples, np.ndarray]:
    d = _as_delta(delta)
    if d.k != 1:
        raise ContractError(f"this estimator needs a scalar separator, got k={d.k}")
    return d, d.values[:, :, 0]


def _proportion_se(p: float, ind: np.ndarray) -> tuple[float, float]:
    """Standard error of an autocorrelated proportion via indicator ESS."""
    n_eff = indicator_ess(ind)
    se = math.sqrt(max(p * (1.0 - p), 0.0) / n_eff)
    return se, n_eff


def conflict_discrete(pa, pb) -> ConflictResult:
    """Exact conflict for discrete separators from the two posterior pmfs.

    c = sum_k pa[k] * pb[k] is the probability that independent draws from
    the two partitions agree, i.e. Pr(delta = 0) computed in closed form.
    """
    pa = np.asarray(pa, dtype=float).ravel()
    pb = np.asarray(pb, dtype=float).ravel()
    if pa.shape != pb.shape or pa.size == 0:
        raise ContractError("pmf vectors must share one non-empty support")
    for name, p in (("pa", pa), ("pb", pb)):
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ContractError(f"{name} has negative or non-finite entries")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ContractError(f"{name} does not sum to 1 (got {float(p.sum()):.12f})")
    c = float(np.dot(pa, pb))
    return ConflictResult(
        method="discrete",
        p_value=_clamp01(c),
        mc_se=0.0,
        n_draws=0,
        k=1,
        details={"support_size": int(pa.size)},
    )


def _tail_proportions(x: np.ndarray) -> tuple[float, float, int, int, int]:
    n = x.size
    n_pos = int(np.count_nonzero(x > 0.0))
    n_neg = int(np.count_nonzero(x < 0.0))
    n_tie = n - n_pos - n_neg
    p_pos = (n_pos + 0.5 * n_tie) / n
    p_neg = (n_neg + 0.5 * n_tie) / n
    return p_pos, p_neg, n_pos, n_neg, n_tie


def _tail_indicator(x: np.ndarray, positive: bool) -> np.ndarray:
    ind = np.where(x == 0.0, 0.5, ((x > 0.0) if positive else (x < 0.0)).astype(float))
    return ind


def conflict_one_sided(delta, direction: str = "lower") -> ConflictResult:
    """One-sided conflict: Pr(delta < 0) for 'lower', Pr(delta > 0) for
    'upper'; ties at zero count half."""
    if direction not in ("lower", "upper"):
        raise ContractError("direction must be 'lower' or 'upper'")
    d, x = _univariate(delta)
    if x.size < 2:
        raise ContractError("need at least two draws")
    p_pos, p_neg, n_pos, n_neg, n_tie = _tail_proportions(x)
    c = p_neg if direction == "lower" else p_pos
    ind = _tail_indicator(x, positive=(direction == "upper"))
    se, n_eff = _proportion_se(c, ind)
    return ConflictResult(
        method=f"one_sided_{direction}",
        p_value=_clamp01(c),
        mc_se=se,
        n_draws=x.size,
        k=1,
        details={"n_positive": n_pos, "n_negative": n_neg, "n_ties": n_tie, "ess": n_eff},
    )


def conflict_two_sided(delta) -> ConflictResult:
    """Two-sided tail conflict: c = 2 * min{Pr(delta > 0), Pr(delta < 0)}
    with ties at zero shared between the tails."""
    d, x = _univariate(delta)
    if x.size < 2:
        raise ContractError("need at least two draws")
    p_pos, p_neg, n_pos, n_neg, n_tie = _tail_proportions(x)
    p_min = min(p_pos, p_neg)
    c = 2.0 * p_min
    # p_min*(1-p_min) is tail-symmetric, so one indicator stream serves both
    ind = _tail_indicator(x, positive=True)
    se, n_eff = _proportion_se(p_min, ind)
    return ConflictResult(
        method="two_sided",
        p_value=_clamp01(c),
        mc_se=2.0 * se,
        n_draws=x.size,
        k=1,
        details={
            "prop_positive": p_pos,
            "n_positive": n_pos,
            "n_negative": n_neg,
            "n_ties": n_tie,
            "ess": n_eff,
        },
    )


def conflict_kde_univariate(delta, config: KdeConfig | None = None) -> ConflictResult:
    """Density-ordering conflict: the fraction of delta draws whose kernel
    density estimate falls below the density at zero."""
    config = config or KdeConfig()
    d, x = _univariate(delta)
    n = x.size
    if n < config.min_draws_univariate:
        raise ContractError(
            f"KDE conflict needs at least {config.min_draws_univariate} draws, got {n}"
        )
    flat = x.reshape(-1)
    if float(np.std(flat)) == 0.0:
        raise NumericalError("degenerate delta samples: zero variance")
    bw = config.resolve_bandwidth(flat)

    def _estimate(b: float) -> tuple[float, np.ndarray]:
        pts = np.concatenate([flat, [0.0]])
        dens = kde_evaluate(flat[:, None], pts[:, None], b)
        dens_at = dens[:-1]
        dens0 = dens[-1]
        below = dens_at < dens0
        return float(np.count_nonzero(below)) / n, below

    c, below = _estimate(bw)
    ind = below.astype(float).reshape(x.shape)
    se, n_eff = _proportion_se(c, ind)
    details = {"bandwidth": bw, "ess": n_eff}
    if config.sensitivity:
        details["sensitivity"] = {
            "half": _clamp01(_estimate(0.5 * bw)[0]),
            "double": _clamp01(_estimate(2.0 * bw)[0]),
        }
    return ConflictResult(
        method="kde_univariate",
        p_value=_clamp01(c),
        mc_se=se,
        n_draws=n,
        k=1,
        details=details,
    )


def _pooled_moments(d: DeltaSamples) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pooled = d.pooled()
    n = pooled.shape[0]
    if n < d.k + 2:
        raise ContractError("too few draws to estimate the delta covariance")
    mean = pooled.mean(axis=0)
    xc = pooled - mean
    cov = (xc.T @ xc) / (n - 1)
    return pooled, mean, xc, cov


def _spd_factor(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky with escalating diagonal jitter; NumericalError when the
    matrix stays non-positive-definite after three retries."""
    k = cov.shape[0]
    cond = float(np.linalg.cond(cov))
    if not cond < 1e12:  # catches inf and nan
        raise NumericalError(
            f"delta covariance is numerically singular (condition number {cond:.3g});"
            " drop or combine collinear separator components"
        )
    trace = float(np.trace(cov))
    base = 1e-10 * trace / k if trace > 0 else 1e-12
    jitter = 0.0
    for attempt in range(4):
        try:
            mat = cov if jitter == 0.0 else cov + jitter * np.eye(k)
            np.linalg.cholesky(mat)
            return mat, jitter
        except np.linalg.LinAlgError:
            jitter = base * (10.0**attempt)
    raise NumericalError(
        "delta covariance is not positive definite even after jitter; "
        "the separator components are degenerate"
    )


def conflict_chi2(delta) -> ConflictResult:
    """Gaussian-approximation conflict: the squared Mahalanobis distance of
    zero from the delta mean, referred to a chi-squared law with k degrees
    of freedom."""
    d = _as_delta(delta)
    pooled, mean, xc, cov = _pooled_moments(d)
    n, k = pooled.shape
    cov, jitter = _spd_factor(cov)
    sol = np.linalg.solve(cov, mean)
    stat = float(mean @ sol)
    c = chi2_sf(stat, k)
    # delta-method standard error via the influence function of the
    # quadratic form: IF(x) = 2 a(x) - a(x)^2 + stat, a(x) = m' C^-1 (x - m)
    a = xc @ sol
    infl = 2.0 * a - a * a + stat
    infl_chains = infl.reshape(d.values.shape[0], d.values.shape[1])
    n_eff = _ess(infl_chains)
    sd_infl = float(np.std(infl, ddof=1))
    se_stat = sd_infl / math.sqrt(n_eff) if n_eff > 0 else float("inf")
    mc_se = chi2_pdf(stat, k) * se_stat
    return ConflictResult(
        method="chi2",
        p_value=_clamp01(c),
        mc_se=mc_se,
        n_draws=n,
        k=k,
        details={"statistic": stat, "jitter": jitter, "ess": n_eff},
    )


def conflict_mahalanobis(delta) -> ConflictResult:
    """Reference-distribution conflict: the fraction of delta draws whose
    squared Mahalanobis distance exceeds that of zero."""
    d = _as_delta(delta)
    pooled, mean, xc, cov = _pooled_moments(d)
    n, k = pooled.shape
    cov, jitter = _spd_factor(cov)
    sol_m = np.linalg.solve(cov, mean)
    stat = float(mean @ sol_m)
    sol = np.linalg.solve(cov, xc.T)
    dist = np.einsum("nk,kn->n", xc, sol)
    exceed = dist > stat
    c = float(np.count_nonzero(exceed)) / n
    ind = exceed.astype(float).reshape(d.values.shape[0], d.values.shape[1])
    se, n_eff = _proportion_se(c, ind)
    return ConflictResult(
        method="mahalanobis",
        p_value=_clamp01(c),
        mc_se=se,
        n_draws=n,
        k=k,
        details={"statistic": stat, "jitter": jitter, "ess": n_eff},
    )


def conflict_kde_multivariate(delta, config: KdeConfig | None = None) -> ConflictResult:
    """Density-ordering conflict in k dimensions with a product Gaussian
    kernel and per-dimension bandwidths."""
    config = config or KdeConfig()
    d = _as_delta(delta)
    k = d.k
    if k < 2:
        raise ContractError("use conflict_kde_univariate for scalar separators")
    if k > config.max_dim:
        raise ContractError(
            f"KDE conflict supports up to {config.max_dim} dimensions, got {k}"
        )
    pooled = d.pooled()
    n = pooled.shape[0]
    if n < config.min_draws_multivariate:
        raise ContractError(
            f"multivariate KDE conflict needs at least "
            f"{config.min_draws_multivariate} draws, got {n}"
        )
    if config.bandwidth == "silverman":
        bws = np.array([silverman_bandwidth(pooled[:, j]) for j in range(k)])
    else:
        bws = np.full(k, float(config.bandwidth))
        if not np.all(bws > 0.0):
            raise ContractError("fixed bandwidth must be positive")

    def _estimate(b: np.ndarray) -> tuple[float, np.ndarray]:
        pts = np.concatenate([pooled, np.zeros((1, k))], axis=0)
        dens = kde_evaluate(pooled, pts, b)
        below = dens[:-1] < dens[-1]
        return float(np.count_nonzero(below)) / n, below

    c, below = _estimate(bws)
    ind = below.astype(float).reshape(d.values.shape[0], d.values.shape[1])
    se, n_eff = _proportion_se(c, ind)
    details = {"bandwidths": [float(b) for b in bws], "ess": n_eff}
    if config.sensitivity:
        details["sensitivity"] = {
            "half": _clamp01(_estimate(0.5 * bws)[0]),
            "double": _clamp01(_estimate(2.0 * bws)[0]),
        }
    return ConflictResult(
        method="kde_multivariate",
        p_value=_clamp01(c),
        mc_se=se,
        n_draws=n,
        k=k,
        details=details,
    )


def component_moments(delta) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise skewness and excess kurtosis of the pooled draws."""
    pooled = _as_delta(delta).pooled()
    xc = pooled - pooled.mean(axis=0)
    m2 = (xc**2).mean(axis=0)
    if np.any(m2 == 0.0):
        raise NumericalError("zero-variance delta component")
    skew = (xc**3).mean(axis=0) / m2**1.5
    kurt = (xc**4).mean(axis=0) / m2**2 - 3.0
    return skew, kurt


def conflict_auto(delta, config: KdeConfig | None = None) -> ConflictResult:
    """Pick an estimator from the shape of the delta distribution.

    Scalar separators use the two-sided tail count when the draws look
    symmetric (|skewness| < 0.5) and the KDE density ordering otherwise;
    vector separators use the chi-squared approximation when every
    component looks Gaussian (|skewness| < 0.5 and |excess kurtosis| < 1)
    and the Mahalanobis proportion otherwise.  The choice and its reason
    are recorded in the result details.
    """
    config = config or KdeConfig()
    d = _as_delta(delta)
    skew, kurt = component_moments(d)
    if d.k == 1:
        s = abs(float(skew[0]))
        if s < 0.5:
            res = conflict_two_sided(d)
            reason = f"scalar, |skewness| {s:.3f} < 0.5: symmetric tail count"
        elif d.n_draws >= config.min_draws_univariate:
            res = conflict_kde_univariate(d, config)
            reason = f"scalar, |skewness| {s:.3f} >= 0.5: density ordering"
        else:
            res = conflict_two_sided(d)
            reason = (
                f"scalar, |skewness| {s:.3f} >= 0.5 but only {d.n_draws} draws"
                f" (< {config.min_draws_univariate}): tail count fallback"
            )
    else:
        worst_s = float(np.max(np.abs(skew)))
        worst_k = float(np.max(np.abs(kurt)))
        if worst_s < 0.5 and worst_k < 1.0:
            res = conflict_chi2(d)
            reason = (
                f"k={d.k}, max |skewness| {worst_s:.3f} < 0.5 and max |excess"
                f" kurtosis| {worst_k:.3f} < 1: Gaussian approximation"
            )
        else:
            res = conflict_mahalanobis(d)
            reason = (
                f"k={d.k}, max |skewness| {worst_s:.3f} / max |excess kurtosis|"
                f" {worst_k:.3f}: non-Gaussian, Mahalanobis proportion"
            )
    details = dict(res.details)
    details["selected"] = res.method
    details["reason"] = reason
    details["skewness"] = [float(v) for v in skew]
    details["excess_kurtosis"] = [float(v) for v in kurt]
    return ConflictResult(
        method=res.method,
        p_value=res.p_value,
        mc_se=res.mc_se,
        n_draws=res.n_draws,
        k=res.k,
        details=details,
    )
