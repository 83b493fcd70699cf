"""Convergence diagnostics: split-chain R-hat and effective sample size.

R-hat follows Gelman-Rubin with each chain split in half, so within-chain
drift shows up as between-sequence variance.  ESS uses the standard
autocovariance estimator with Geyer's initial monotone positive sequence
truncation, computed from per-chain FFT autocovariances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

__all__ = ["split_rhat", "ess", "indicator_ess", "ConvergenceReport", "convergence_report"]


def _split_chains(x: np.ndarray) -> np.ndarray:
    """Halve each chain; drops the middle draw of odd-length chains."""
    m, n = x.shape
    h = n // 2
    if h < 1:
        raise ContractError("chains must hold at least 2 draws for split R-hat")
    return np.vstack([x[:, :h], x[:, n - h :]])


def split_rhat(x: np.ndarray) -> float:
    """Split-chain R-hat for one scalar component, shape (chains, draws).

    Returns 1.0 for zero-variance (degenerate) sequences rather than NaN;
    callers that need to distinguish use ``convergence_report``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ContractError("split_rhat expects a (chains, draws) array")
    if x.shape[0] < 2:
        raise ContractError("split R-hat needs at least 2 chains")
    seq = _split_chains(x)
    n = seq.shape[1]
    means = seq.mean(axis=1)
    svars = seq.var(axis=1, ddof=1)
    w = float(svars.mean())
    b_over_n = float(means.var(ddof=1))
    var_plus = (n - 1) / n * w + b_over_n
    if w <= 0.0:
        return 1.0
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = len(x)
    xc = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def ess(x: np.ndarray) -> float:
    """Effective sample size across chains, shape (chains, draws).

    The estimate is clamped into (0, total draws]; degenerate (zero
    variance) input returns the total number of draws.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ContractError("ess expects a (chains, draws) array")
    m, n = x.shape
    total = m * n
    if n < 4 or np.all(x == x.flat[0]):
        return float(total)
    acovs = np.vstack([_autocov(x[j]) for j in range(m)])
    mean_acov = acovs.mean(axis=0)
    if m > 1:
        w = float(np.mean(x.var(axis=1, ddof=1)))
        b_over_n = float(x.mean(axis=1).var(ddof=1))
        var_plus = (n - 1) / n * w + b_over_n
    else:
        var_plus = mean_acov[0] * n / (n - 1)
    if var_plus <= 0.0:
        return float(total)
    rho = 1.0 - (mean_acov[0] - mean_acov) / var_plus

    # Geyer initial monotone positive sequence on paired sums
    tau = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        tau += pair
        prev = pair
        t += 2
    tau = 2.0 * tau - 1.0
    if tau < 1e-12:
        return float(total)
    return float(min(total, total / tau))


def indicator_ess(x: np.ndarray) -> float:
    """Conservative ESS for indicator streams used in tail-probability
    standard errors: chains * min over chains of the per-chain ESS."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m = x.shape[0]
    per_chain = [ess(x[j][None, :]) for j in range(m)]
    return float(max(1.0, m * min(per_chain)))


@dataclass
class ConvergenceReport:
    rhat: dict[str, float] = field(default_factory=dict)
    ess: dict[str, float] = field(default_factory=dict)
    rhat_exceeded: list[str] = field(default_factory=list)
    degenerate: list[str] = field(default_factory=list)
    threshold: float = 1.1

    @property
    def ok(self) -> bool:
        return not self.rhat_exceeded

    def summary(self) -> str:
        lines = [f"{'component':<24} {'rhat':>8} {'ess':>10}"]
        for col in self.rhat:
            mark = " *" if col in self.rhat_exceeded else ("  (degenerate)" if col in self.degenerate else "")
            lines.append(f"{col:<24} {self.rhat[col]:>8.4f} {self.ess[col]:>10.1f}{mark}")
        return "\n".join(lines)


def convergence_report(trace, threshold: float = 1.1) -> ConvergenceReport:
    """Per-component split R-hat / ESS over a trace."""
    rep = ConvergenceReport(threshold=threshold)
    for col, arr in trace.components():
        degenerate = bool(np.all(arr == arr.flat[0]))
        # R-hat is undefined for a single chain; report NaN without gating
        r = split_rhat(arr) if arr.shape[0] >= 2 else float("nan")
        e = ess(arr)
        rep.rhat[col] = r
        rep.ess[col] = e
        if degenerate:
            rep.degenerate.append(col)
        elif r > threshold:
            rep.rhat_exceeded.append(col)
    return rep
