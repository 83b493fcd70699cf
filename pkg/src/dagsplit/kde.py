"""Exact product-Gaussian kernel density evaluation.

The conflict estimators need the KDE of the posterior delta samples
evaluated at every sample and at the origin.  That is an O(n*m) double sum;
it is done exactly (no binning, no tree approximations) with a numba kernel
so the estimator is deterministic and symmetric under sign flips of the
input.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .errors import ContractError, NumericalError

__all__ = ["silverman_bandwidth", "kde_evaluate"]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _symmetric_quartiles(x: np.ndarray) -> tuple[float, float]:
    """Linearly interpolated quartiles computed with mirrored index formulas.

    The lower quartile interpolates upward from the left end, the upper
    quartile interpolates downward from the right end, so negating the
    sample negates and swaps the quartiles exactly in floating point.
    """
    s = np.sort(x)
    n = s.shape[0]
    pos = 0.25 * (n - 1)
    i = int(pos)
    f = pos - i
    if i + 1 < n:
        q25 = s[i] + f * (s[i + 1] - s[i])
        q75 = s[n - 1 - i] - f * (s[n - 1 - i] - s[n - 2 - i])
    else:
        q25 = s[i]
        q75 = s[n - 1 - i]
    return float(q25), float(q75)


def silverman_bandwidth(x: np.ndarray) -> float:
    """Silverman's rule of thumb: 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Falls back to the standard deviation when the IQR degenerates to zero;
    a sample with zero spread has no usable bandwidth and raises.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.shape[0]
    if n < 2:
        raise ContractError("bandwidth selection needs at least two samples")
    sd = float(np.std(x, ddof=1))
    q25, q75 = _symmetric_quartiles(x)
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34)
    if spread <= 0.0:
        spread = sd
    bw = 0.9 * spread * n ** (-0.2)
    if not (bw > 0.0) or not math.isfinite(bw):
        raise NumericalError("degenerate sample: bandwidth selection failed (zero spread)")
    return bw


@njit(parallel=True, fastmath=False, cache=True)
def _product_kde(samples, points, bw, out):  # pragma: no cover - compiled
    n, k = samples.shape
    m = points.shape[0]
    lognorm = 0.0
    for j in range(k):
        lognorm += math.log(bw[j] * _SQRT_2PI)
    norm = math.exp(-lognorm) / n
    for p in prange(m):
        acc = 0.0
        for i in range(n):
            q = 0.0
            for j in range(k):
                t = (points[p, j] - samples[i, j]) / bw[j]
                q += t * t
            acc += math.exp(-0.5 * q)
        out[p] = acc * norm


def kde_evaluate(samples: np.ndarray, points: np.ndarray, bandwidth) -> np.ndarray:
    """Evaluate the product-Gaussian KDE of ``samples`` at ``points``.

    ``samples`` is (n, k), ``points`` is (m, k); ``bandwidth`` is a scalar or
    a length-k vector of per-dimension bandwidths.  Returns the m density
    values.  The double sum is exact, accumulated in sample order.
    """
    samples = np.ascontiguousarray(np.asarray(samples, dtype=float))
    points = np.ascontiguousarray(np.asarray(points, dtype=float))
    if samples.ndim == 1:
        samples = samples[:, None]
    if points.ndim == 1:
        points = points[:, None]
    if samples.ndim != 2 or points.ndim != 2:
        raise ContractError("samples and points must be 2-d arrays")
    n, k = samples.shape
    if points.shape[1] != k:
        raise ContractError("points dimension does not match samples")
    if n < 2:
        raise ContractError("KDE needs at least two samples")
    bw = np.asarray(bandwidth, dtype=float).ravel()
    if bw.shape[0] == 1:
        bw = np.full(k, bw[0])
    if bw.shape[0] != k:
        raise ContractError("bandwidth must be scalar or one value per dimension")
    if not np.all(bw > 0.0) or not np.all(np.isfinite(bw)):
        raise NumericalError("bandwidths must be positive and finite")
    out = np.empty(points.shape[0])
    _product_kde(samples, points, np.ascontiguousarray(bw), out)
    return out
