"""Exception hierarchy.

Exit-code mapping in the CLI: ContractError/ModelError -> 2 (bad input),
SamplingError/NumericalError -> 3 (numerical failure).
"""


class DagSplitError(Exception):
    """Base class for all library errors."""


class ContractError(DagSplitError):
    """An operation was called with arguments that violate its contract."""


class ModelError(DagSplitError):
    """A model is structurally invalid (cycles, dangling refs, bad shapes)."""


class ExpressionDomainError(DagSplitError):
    """An expression was evaluated outside its domain (log of a negative,
    division by zero, non-finite result)."""


class SamplingError(DagSplitError):
    """The sampler could not produce usable draws (pathological adaptation,
    invalid initial state, unsupported node type)."""


class NumericalError(DagSplitError):
    """A numerical routine failed (singular covariance, non-convergence)."""
