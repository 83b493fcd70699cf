"""Chi-square distribution functions.

The CDF is the regularized lower incomplete gamma function P(k/2, x/2),
computed with the classic Cephes scheme: a power series for the lower
function when x < a + 1, and a Lentz-style continued fraction for the upper
function otherwise.  Double precision gives ~1e-14 relative accuracy, well
inside the 1e-12 contract.
"""
from __future__ import annotations

import math

from .errors import ContractError

__all__ = ["chi2_cdf", "chi2_sf", "chi2_pdf", "gammainc_lower", "gammainc_upper"]

_MACHEP = 1.11022302462515654042e-16
_BIG = 4.503599627370496e15
_BIGINV = 2.22044604925031308085e-16
_MAX_ITER = 2000


def _igam_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma by power series; needs x <= a + 1."""
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -709.0:
        return 0.0
    ax = math.exp(ax)
    r = a
    c = 1.0
    ans = 1.0
    for _ in range(_MAX_ITER):
        r += 1.0
        c *= x / r
        ans += c
        if c / ans <= _MACHEP:
            break
    return ans * ax / a


def _igamc_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma by continued fraction; needs x >= 1
    and x >= a."""
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -709.0:
        return 0.0
    ax = math.exp(ax)

    y = 1.0 - a
    z = x + y + 1.0
    c = 0.0
    pkm2 = 1.0
    qkm2 = x
    pkm1 = x + 1.0
    qkm1 = z * x
    ans = pkm1 / qkm1
    for _ in range(_MAX_ITER):
        c += 1.0
        y += 1.0
        z += 2.0
        yc = y * c
        pk = pkm1 * z - pkm2 * yc
        qk = qkm1 * z - qkm2 * yc
        if qk != 0.0:
            r = pk / qk
            t = abs((ans - r) / r)
            ans = r
        else:
            t = 1.0
        pkm2, pkm1 = pkm1, pk
        qkm2, qkm1 = qkm1, qk
        if abs(pk) > _BIG:
            pkm2 *= _BIGINV
            pkm1 *= _BIGINV
            qkm2 *= _BIGINV
            qkm1 *= _BIGINV
        if t <= _MACHEP:
            break
    return ans * ax


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0."""
    if a <= 0.0 or not math.isfinite(a):
        raise ContractError(f"shape parameter must be positive, got {a}")
    if not x >= 0.0:
        raise ContractError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if x < 1.0 or x < a:
        return _igam_series(a, x)
    return 1.0 - _igamc_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0.0 or not math.isfinite(a):
        raise ContractError(f"shape parameter must be positive, got {a}")
    if not x >= 0.0:
        raise ContractError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 1.0
    if x < 1.0 or x < a:
        return 1.0 - _igam_series(a, x)
    return _igamc_cf(a, x)


def chi2_cdf(x: float, k: float) -> float:
    """Chi-square CDF at x >= 0 with k > 0 degrees of freedom.

    chi2_cdf(x, 2) equals 1 - exp(-x/2) exactly up to roundoff.
    """
    if k <= 0.0 or not math.isfinite(k):
        raise ContractError(f"degrees of freedom must be positive, got {k}")
    if math.isnan(x) or x < 0.0:
        raise ContractError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return gammainc_lower(0.5 * k, 0.5 * x)


def chi2_sf(x: float, k: float) -> float:
    """Chi-square survival function 1 - CDF, computed directly for accuracy
    in the far right tail."""
    if k <= 0.0 or not math.isfinite(k):
        raise ContractError(f"degrees of freedom must be positive, got {k}")
    if math.isnan(x) or x < 0.0:
        raise ContractError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return gammainc_upper(0.5 * k, 0.5 * x)


def chi2_pdf(x: float, k: float) -> float:
    """Chi-square density at x >= 0 with k > 0 degrees of freedom."""
    if k <= 0.0 or not math.isfinite(k):
        raise ContractError(f"degrees of freedom must be positive, got {k}")
    if math.isnan(x) or x < 0.0:
        raise ContractError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        if k == 2.0:
            return 0.5
        return math.inf if k < 2.0 else 0.0
    a = 0.5 * k
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a))
