"""Distribution families usable on stochastic nodes.

Each family stores its parameters as expression trees over parent names.
``logpdf`` evaluates the log density at a value given already-evaluated
parameter values, returning -inf off support and -inf for parameter values
outside the family's own domain (e.g. a nonpositive variance): during
sampling such proposals are simply rejected.

Conventions: Normal is (mean, variance); Gamma is (shape, rate);
MultivariateNormal is (mean, precision) with a covariance constructor that
inverts on ingestion; Wishart(scale, df) has density proportional to
|W|^((df-d-1)/2) exp(-tr(scale @ W)/2), so E[W] = df * inv(scale).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, SamplingError
from .exprs import Call, Const, Expr, as_expr

__all__ = [
    "Bernoulli",
    "Binomial",
    "Beta",
    "Normal",
    "MultivariateNormal",
    "Gamma",
    "Wishart",
    "Uniform",
    "ImproperFlat",
    "Family",
    "FAMILY_TAGS",
    "lmvgamma",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _betaln(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def lmvgamma(d: int, a: float) -> float:
    """Log multivariate gamma function."""
    out = 0.25 * d * (d - 1) * math.log(math.pi)
    for j in range(d):
        out += math.lgamma(a - 0.5 * j)
    return out


def _chol(m: np.ndarray):
    """Cholesky factor of an SPD matrix, or None if not SPD."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


def mvn_sample_from_precision(rng: np.random.Generator, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """Draw from N(mean, precision^-1) via the Cholesky factor of the precision."""
    chol = _chol(precision)
    if chol is None:
        raise SamplingError("precision matrix is not positive definite")
    z = rng.standard_normal(len(mean))
    return mean + np.linalg.solve(chol.T, z)


@dataclass(frozen=True)
class Bernoulli:
    p: Expr

    tag = "bernoulli"
    support = "binary"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("p",)
    transform = None

    def params(self) -> tuple[Expr, ...]:
        return (self.p,)

    @staticmethod
    def logpdf(x: float, p: float) -> float:
        if not (0.0 <= p <= 1.0):
            return -math.inf
        if x == 1.0:
            return math.log(p) if p > 0.0 else -math.inf
        if x == 0.0:
            return math.log1p(-p) if p < 1.0 else -math.inf
        return -math.inf

    @staticmethod
    def sample(rng: np.random.Generator, p: float) -> float:
        return float(rng.random() < p)


@dataclass(frozen=True)
class Binomial:
    n: Expr
    p: Expr

    tag = "binomial"
    support = "count"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("n", "p")
    transform = None

    def params(self) -> tuple[Expr, ...]:
        return (self.n, self.p)

    @staticmethod
    def logpdf(x: float, n: float, p: float) -> float:
        if not (0.0 <= p <= 1.0) or n < 0 or abs(n - round(n)) > 1e-9:
            return -math.inf
        n = round(n)
        if x < 0 or x > n or abs(x - round(x)) > 1e-9:
            return -math.inf
        y = round(x)
        if p == 0.0:
            return 0.0 if y == 0 else -math.inf
        if p == 1.0:
            return 0.0 if y == n else -math.inf
        logc = math.lgamma(n + 1) - math.lgamma(y + 1) - math.lgamma(n - y + 1)
        return logc + y * math.log(p) + (n - y) * math.log1p(-p)

    @staticmethod
    def sample(rng: np.random.Generator, n: float, p: float) -> float:
        return float(rng.binomial(round(n), p))


@dataclass(frozen=True)
class Beta:
    alpha: Expr
    beta: Expr

    tag = "beta"
    support = "unit"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("alpha", "beta")
    transform = "logit"

    def params(self) -> tuple[Expr, ...]:
        return (self.alpha, self.beta)

    @staticmethod
    def logpdf(x: float, a: float, b: float) -> float:
        if a <= 0.0 or b <= 0.0:
            return -math.inf
        if not (0.0 < x < 1.0):
            return -math.inf
        return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _betaln(a, b)

    @staticmethod
    def sample(rng: np.random.Generator, a: float, b: float) -> float:
        return float(rng.beta(a, b))


@dataclass(frozen=True)
class Normal:
    mean: Expr
    var: Expr

    tag = "normal"
    support = "real"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("mean", "var")
    transform = "identity"

    def params(self) -> tuple[Expr, ...]:
        return (self.mean, self.var)

    @staticmethod
    def logpdf(x: float, mean: float, var: float) -> float:
        if var <= 0.0:
            return -math.inf
        d = x - mean
        return -0.5 * (_LOG_2PI + math.log(var) + d * d / var)

    @staticmethod
    def sample(rng: np.random.Generator, mean: float, var: float) -> float:
        return mean + math.sqrt(var) * rng.standard_normal()


@dataclass(frozen=True)
class Gamma:
    shape_: Expr
    rate: Expr

    tag = "gamma"
    support = "positive"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("shape", "rate")
    transform = "log"

    def params(self) -> tuple[Expr, ...]:
        return (self.shape_, self.rate)

    @staticmethod
    def logpdf(x: float, a: float, b: float) -> float:
        if a <= 0.0 or b <= 0.0 or x <= 0.0:
            return -math.inf
        return a * math.log(b) + (a - 1.0) * math.log(x) - b * x - math.lgamma(a)

    @staticmethod
    def sample(rng: np.random.Generator, a: float, b: float) -> float:
        return float(rng.gamma(a, 1.0 / b))


@dataclass(frozen=True)
class Uniform:
    lo: Expr
    hi: Expr

    tag = "uniform"
    support = "interval"
    shape: tuple[int, ...] = field(default=(), init=False, repr=False)
    param_names = ("lo", "hi")
    transform = "interval_logit"

    def params(self) -> tuple[Expr, ...]:
        return (self.lo, self.hi)

    @staticmethod
    def logpdf(x: float, lo: float, hi: float) -> float:
        if hi <= lo or not (lo <= x <= hi):
            return -math.inf
        return -math.log(hi - lo)

    @staticmethod
    def sample(rng: np.random.Generator, lo: float, hi: float) -> float:
        return lo + (hi - lo) * rng.random()


@dataclass(frozen=True)
class MultivariateNormal:
    dim: int
    mean: Expr
    precision: Expr

    tag = "mvnormal"
    support = "real_vector"
    param_names = ("mean", "precision")
    transform = "identity_vector"

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ContractError(f"mvnormal dimension must be a positive int, got {self.dim!r}")
        if self.dim > 8:
            raise ContractError(f"dense matrix support is capped at dimension 8, got {self.dim}")

    @classmethod
    def with_covariance(cls, dim: int, mean, covariance) -> "MultivariateNormal":
        # covariance parameterization converts on ingestion
        return cls(dim, as_expr(mean), Call("minv", (as_expr(covariance),)))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim,)

    def params(self) -> tuple[Expr, ...]:
        return (self.mean, self.precision)

    @staticmethod
    def logpdf(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> float:
        chol = _chol(precision)
        if chol is None:
            return -math.inf
        d = len(x)
        z = chol.T @ (x - mean)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -0.5 * d * _LOG_2PI + 0.5 * logdet - 0.5 * float(z @ z)

    @staticmethod
    def sample(rng: np.random.Generator, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
        return mvn_sample_from_precision(rng, mean, precision)


@dataclass(frozen=True)
class Wishart:
    dim: int
    scale: Expr  # the "R" matrix: density has exp(-tr(scale @ W) / 2)
    df: Expr

    tag = "wishart"
    support = "spd_matrix"
    param_names = ("scale", "df")
    transform = "log_cholesky"

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ContractError(f"wishart dimension must be a positive int, got {self.dim!r}")
        if self.dim > 8:
            raise ContractError(f"dense matrix support is capped at dimension 8, got {self.dim}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim, self.dim)

    def params(self) -> tuple[Expr, ...]:
        return (self.scale, self.df)

    @staticmethod
    def logpdf(w: np.ndarray, scale: np.ndarray, df: float) -> float:
        d = len(w)
        if df <= d - 1:
            return -math.inf
        cw = _chol(w)
        if cw is None:
            return -math.inf
        cr = _chol(scale)
        if cr is None:
            return -math.inf
        logdet_w = 2.0 * float(np.sum(np.log(np.diag(cw))))
        logdet_r = 2.0 * float(np.sum(np.log(np.diag(cr))))
        tr = float(np.sum(scale * w))  # tr(R W) for symmetric R, W
        return (
            0.5 * (df - d - 1.0) * logdet_w
            - 0.5 * tr
            + 0.5 * df * logdet_r
            - 0.5 * df * d * math.log(2.0)
            - lmvgamma(d, 0.5 * df)
        )

    @staticmethod
    def sample(rng: np.random.Generator, scale: np.ndarray, df: float) -> np.ndarray:
        """Bartlett decomposition draw with E[W] = df * inv(scale)."""
        d = len(scale)
        if df <= d - 1:
            raise SamplingError(f"wishart df must exceed dim - 1, got {df}")
        v_chol = _chol(np.linalg.inv(scale))
        if v_chol is None:
            raise SamplingError("wishart scale matrix is not positive definite")
        a = np.zeros((d, d))
        for i in range(d):
            a[i, i] = math.sqrt(rng.chisquare(df - i))
            for j in range(i):
                a[i, j] = rng.standard_normal()
        la = v_chol @ a
        return la @ la.T


@dataclass(frozen=True)
class ImproperFlat:
    """Improper prior, flat on a declared scale.

    ``flat_on='identity'`` is flat on the original scale (log density 0 on
    the support); ``flat_on='log'`` is flat in log space (density 1/x on the
    positive half-line); ``flat_on='logit'`` is flat in logit space.
    """

    support: str = "real"  # 'real' | 'positive' | 'unit'
    flat_on: str = "identity"
    node_shape: tuple[int, ...] = ()

    tag = "flat"
    param_names = ()

    def __post_init__(self):
        if self.support not in ("real", "positive", "unit"):
            raise ContractError(f"flat support must be real/positive/unit, got {self.support!r}")
        if self.flat_on not in ("identity", "log", "logit"):
            raise ContractError(f"flat_on must be identity/log/logit, got {self.flat_on!r}")
        if self.flat_on == "log" and self.support != "positive":
            raise ContractError("flat_on='log' requires positive support")
        if self.flat_on == "logit" and self.support != "unit":
            raise ContractError("flat_on='logit' requires unit support")
        if self.node_shape and self.support != "real":
            raise ContractError("vector flat priors support the real line only")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node_shape

    @property
    def transform(self) -> str:
        if self.node_shape:
            return "identity_vector"
        return {"real": "identity", "positive": "log", "unit": "logit"}[self.support]

    def params(self) -> tuple[Expr, ...]:
        return ()

    def logpdf(self, x, *_params) -> float:
        if self.node_shape:
            return 0.0
        x = float(x)
        if self.support == "positive":
            if x <= 0.0:
                return -math.inf
            return -math.log(x) if self.flat_on == "log" else 0.0
        if self.support == "unit":
            if not (0.0 < x < 1.0):
                return -math.inf
            return -math.log(x) - math.log1p(-x) if self.flat_on == "logit" else 0.0
        return 0.0

    def sample(self, rng, *_params):
        raise SamplingError("improper flat priors cannot be sampled directly")


Family = (
    Bernoulli
    | Binomial
    | Beta
    | Normal
    | MultivariateNormal
    | Gamma
    | Wishart
    | Uniform
    | ImproperFlat
)

FAMILY_TAGS: Mapping[str, type] = {
    cls.tag: cls
    for cls in (Bernoulli, Binomial, Beta, Normal, MultivariateNormal, Gamma, Wishart, Uniform, ImproperFlat)
}
