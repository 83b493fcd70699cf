"""Calibration of conflict p-values on a conjugate hierarchical model.

Data are generated from the model's own prior (the null), each replicate is
split at one unit-level mean, and the conflict p-value is recorded.  Under
the null the p-values should be close to uniform; a Kolmogorov-Smirnov
statistic against U(0,1) quantifies the distance.  A degenerate scenario
(zero observation noise, so the model is mis-specified) and a shifted
alternative give the expected failure modes: conservative pile-up and
power, respectively.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conflict import (
    KdeConfig,
    conflict_chi2,
    conflict_kde_univariate,
    conflict_mahalanobis,
    conflict_two_sided,
)
from .diagnostics import convergence_report
from .errors import ContractError, SamplingError
from .model import DagModel, stochastic
from .families import Normal
from .exprs import Const, Ref
from .sampler import SamplerConfig, run_mcmc
from .splitting import SplitSpec, delta_samples, split_node

__all__ = [
    "CalibrationScenario",
    "CalibrationResult",
    "KsResult",
    "normal_normal_null",
    "normal_normal_degenerate",
    "normal_normal_alternative",
    "build_scenario_model",
    "run_calibration",
    "ks_uniformity",
]

_KS_CRITICAL = {"10%": 1.224, "5%": 1.358, "1%": 1.628}


@dataclass(frozen=True)
class CalibrationScenario:
    name: str
    n_units: int = 5
    mu0_var: float = 10000.0  # prior variance of the global mean
    tau2: float = 1.0  # between-unit variance (known)
    sigma2: float = 1.0  # observation variance assumed by the model
    noise_scale: float = 1.0  # 0 makes the generated data noiseless
    shift: float = 0.0  # shifts unit 1's observation, in sigma units
    method: str = "two_sided"
    n_replicates: int = 200
    n_chains: int = 2
    n_iterations: int = 1300
    burn_in: int = 300

    def __post_init__(self):
        if self.n_units < 2:
            raise ContractError("calibration needs at least two units")
        if self.n_replicates < 100:
            raise ContractError(
                "scenarios need at least 100 replicates for KS power; "
                "pass n_replicates to run_calibration for smoke runs"
            )
        if self.method not in ("two_sided", "kde_univariate", "chi2", "mahalanobis"):
            raise ContractError(f"unknown calibration method {self.method!r}")
        for fname in ("mu0_var", "tau2", "sigma2"):
            if not getattr(self, fname) > 0:
                raise ContractError(f"{fname} must be positive")


def normal_normal_null(**kw) -> CalibrationScenario:
    return CalibrationScenario(name="normal_normal_null", **kw)


def normal_normal_degenerate(**kw) -> CalibrationScenario:
    kw.setdefault("noise_scale", 0.0)
    return CalibrationScenario(name="normal_normal_degenerate", **kw)


def normal_normal_alternative(shift: float = 4.0, **kw) -> CalibrationScenario:
    if shift == 0.0:
        raise ContractError("the alternative scenario needs a non-zero shift")
    return CalibrationScenario(name="normal_normal_alternative", shift=shift, **kw)


def build_scenario_model(scenario: CalibrationScenario, rng: np.random.Generator) -> DagModel:
    """Generate one data set from the scenario and wrap it in a model."""
    k = scenario.n_units
    mu_star = math.sqrt(scenario.mu0_var) * rng.standard_normal()
    theta_star = mu_star + math.sqrt(scenario.tau2) * rng.standard_normal(k)
    noise = scenario.noise_scale * math.sqrt(scenario.sigma2) * rng.standard_normal(k)
    y = theta_star + noise
    y[0] += scenario.shift * math.sqrt(scenario.sigma2)

    nodes = [stochastic("mu", Normal(Const(0.0), Const(scenario.mu0_var)))]
    for i in range(1, k + 1):
        nodes.append(stochastic(f"theta[{i}]", Normal(Ref("mu"), Const(scenario.tau2))))
        nodes.append(
            stochastic(
                f"y[{i}]",
                Normal(Ref(f"theta[{i}]"), Const(scenario.sigma2)),
                observed=float(y[i - 1]),
            )
        )
    return DagModel(nodes, name=scenario.name)


def _estimator(method: str):
    if method == "two_sided":
        return conflict_two_sided
    if method == "kde_univariate":
        return lambda d: conflict_kde_univariate(d, KdeConfig(sensitivity=False))
    if method == "chi2":
        return conflict_chi2
    if method == "mahalanobis":
        return conflict_mahalanobis
    raise ContractError(f"unknown calibration method {method!r}")


def _replicate(scenario: CalibrationScenario, seed: int, rep: int, check: bool = False):
    gen_rng = np.random.default_rng(np.random.SeedSequence([seed, rep, 0xDA7A]))
    model = build_scenario_model(scenario, gen_rng)
    spec = SplitSpec(separators=("theta[1]",), anchor="y[1]", name="calibration")
    split = split_node(model, spec)
    config = SamplerConfig(
        n_chains=scenario.n_chains,
        n_iterations=scenario.n_iterations,
        burn_in=scenario.burn_in,
        seed=int(np.random.SeedSequence([seed, rep]).generate_state(1)[0]),
    )
    trace = run_mcmc(split.model, config)
    delta = delta_samples(trace, split)
    p = _estimator(scenario.method)(delta).p_value
    max_rhat = float("nan")
    if check:
        report = convergence_report(trace)
        finite = [r for name, r in report.rhat.items() if math.isfinite(r)]
        max_rhat = max(finite) if finite else 1.0
        if not report.ok:
            raise SamplingError(
                f"calibration pilot replicate failed convergence: {report.summary()}"
            )
    return p, max_rhat


@dataclass(frozen=True)
class KsResult:
    statistic: float
    n: int
    critical_values: dict[str, float] = field(default_factory=dict)

    def passes(self, level: str = "5%") -> bool:
        return self.statistic < self.critical_values[level]


def ks_uniformity(p_values) -> KsResult:
    """One-sample Kolmogorov-Smirnov distance to U(0,1) with the usual
    asymptotic critical values."""
    p = np.sort(np.asarray(p_values, dtype=float).ravel())
    n = p.size
    if n == 0:
        raise ContractError("no p-values")
    if np.any((p < 0) | (p > 1)):
        raise ContractError("p-values must lie in [0, 1]")
    grid = np.arange(1, n + 1, dtype=float)
    d_plus = float(np.max(grid / n - p))
    d_minus = float(np.max(p - (grid - 1.0) / n))
    stat = max(d_plus, d_minus)
    crit = {lvl: c / math.sqrt(n) for lvl, c in _KS_CRITICAL.items()}
    return KsResult(statistic=stat, n=n, critical_values=crit)


@dataclass
class CalibrationResult:
    scenario: CalibrationScenario
    seed: int
    p_values: np.ndarray
    ks: KsResult
    pilot_max_rhat: float

    def summary(self) -> str:
        return (
            f"{self.scenario.name}: {self.p_values.size} replicates, "
            f"KS={self.ks.statistic:.4f} (5% critical {self.ks.critical_values['5%']:.4f}), "
            f"median p={float(np.median(self.p_values)):.3f}"
        )


def run_calibration(
    scenario: CalibrationScenario,
    seed: int = 0,
    n_replicates: int | None = None,
    jobs: int = 1,
) -> CalibrationResult:
    """Run the scenario end to end: generate, split, sample, score.

    Replicate r uses seed sequence (seed, r) for both data generation and
    sampling, so results are reproducible for any job count.  The first
    replicate doubles as a convergence pilot and must pass the split-Rhat
    gate.
    """
    n_reps = n_replicates if n_replicates is not None else scenario.n_replicates
    if n_reps < 1:
        raise ContractError("need at least one replicate")
    p0, max_rhat = _replicate(scenario, seed, 0, check=True)
    p = np.empty(n_reps)
    p[0] = p0
    rest = range(1, n_reps)
    if jobs > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r, (pv, _) in zip(rest, pool.map(_replicate, [scenario] * (n_reps - 1), [seed] * (n_reps - 1), rest)):
                p[r] = pv
    else:
        for r in rest:
            p[r], _ = _replicate(scenario, seed, r)
    return CalibrationResult(
        scenario=scenario,
        seed=seed,
        p_values=p,
        ks=ks_uniformity(p),
        pilot_max_rhat=max_rhat,
    )
