"""dagsplit: node-splitting conflict diagnostics for DAG evidence synthesis.

Build a directed graphical model, split a node into two copies that each see
one partition of the evidence, sample the split model, and score the
disagreement between the copies with a conflict p-value.
"""

__version__ = "0.1.0"

from .errors import (
    ContractError,
    DagSplitError,
    ExpressionDomainError,
    ModelError,
    NumericalError,
    SamplingError,
)
from .exprs import Call, Const, Expr, Ref, evaluate, parse, printout
from .families import (
    Bernoulli,
    Beta,
    Binomial,
    Gamma,
    ImproperFlat,
    MultivariateNormal,
    Normal,
    Uniform,
    Wishart,
)
from .model import (
    DagModel,
    DagNode,
    ValidationReport,
    deterministic,
    load_model,
    model_from_json,
    model_to_json,
    save_model,
    stochastic,
)
from .trace import Trace, load_trace, save_trace
from .diagnostics import ConvergenceReport, convergence_report, ess, split_rhat
from .sampler import SamplerConfig, run_mcmc
from .splitting import (
    DeltaSamples,
    SplitModel,
    SplitSpec,
    auto_partition,
    check_partition_independence,
    delta_samples,
    jeffreys_reference,
    split_node,
)
from .kde import kde_evaluate, silverman_bandwidth
from .special import chi2_cdf, chi2_pdf, chi2_sf
from .conflict import (
    ConflictResult,
    KdeConfig,
    component_moments,
    conflict_auto,
    conflict_chi2,
    conflict_discrete,
    conflict_kde_multivariate,
    conflict_kde_univariate,
    conflict_mahalanobis,
    conflict_one_sided,
    conflict_two_sided,
)
from .calibration import (
    CalibrationResult,
    CalibrationScenario,
    KsResult,
    ks_uniformity,
    normal_normal_alternative,
    normal_normal_degenerate,
    normal_normal_null,
    run_calibration,
)

__all__ = [
    "__version__",
    "DagSplitError",
    "ContractError",
    "ModelError",
    "ExpressionDomainError",
    "SamplingError",
    "NumericalError",
    "Expr",
    "Const",
    "Ref",
    "Call",
    "parse",
    "printout",
    "evaluate",
    "Bernoulli",
    "Binomial",
    "Beta",
    "Normal",
    "Gamma",
    "Uniform",
    "MultivariateNormal",
    "Wishart",
    "ImproperFlat",
    "DagModel",
    "DagNode",
    "ValidationReport",
    "stochastic",
    "deterministic",
    "model_to_json",
    "model_from_json",
    "load_model",
    "save_model",
    "Trace",
    "save_trace",
    "load_trace",
    "ConvergenceReport",
    "convergence_report",
    "split_rhat",
    "ess",
    "SamplerConfig",
    "run_mcmc",
    "SplitSpec",
    "SplitModel",
    "DeltaSamples",
    "split_node",
    "auto_partition",
    "delta_samples",
    "jeffreys_reference",
    "check_partition_independence",
    "kde_evaluate",
    "silverman_bandwidth",
    "chi2_cdf",
    "chi2_sf",
    "chi2_pdf",
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
    "CalibrationScenario",
    "CalibrationResult",
    "KsResult",
    "normal_normal_null",
    "normal_normal_degenerate",
    "normal_normal_alternative",
    "run_calibration",
    "ks_uniformity",
]
