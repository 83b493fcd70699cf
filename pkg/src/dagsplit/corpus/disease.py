"""Two-source diagnostic-test example with a discrete separator.

A binary disease indicator gets evidence from two channels: its prevalence
prior and one observed test result.  Splitting the indicator gives two
two-point posteriors, so the conflict measure has a closed form

    c = { pi * s + (1 - pi) * (1 - t) } / { s + (1 - t) }   (positive test)

where pi is the prevalence, s the sensitivity and t the specificity.  No
MCMC is involved; this is the exactness anchor for the discrete estimator.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..exprs import Const, Ref, parse
from ..families import Bernoulli
from ..model import DagModel, deterministic, stochastic

__all__ = [
    "DEFAULTS",
    "build_disease_model",
    "disease_posteriors",
    "disease_conflict_exact",
]

DEFAULTS = {"pi": 0.1, "s": 0.9, "t": 0.9, "y": 1}


def build_disease_model(pi: float = 0.1, s: float = 0.9, t: float = 0.9, y: int = 1) -> DagModel:
    """The generative story, for validation and reporting.

    The latent indicator is discrete, so this model is analysed in closed
    form rather than sampled.
    """
    _check(pi, s, t, y)
    nodes = [
        stochastic("z", Bernoulli(Const(pi))),
        deterministic("p_test", "(+ (* z s) (* (- 1 z) (- 1 t)))"),
        stochastic("y", Bernoulli(Ref("p_test")), observed=float(y)),
    ]
    return DagModel(nodes, constants={"s": s, "t": t}, name="disease")


def _check(pi, s, t, y):
    for name, v in (("pi", pi), ("s", s), ("t", t)):
        if not 0.0 < v < 1.0:
            raise ContractError(f"{name} must lie in (0, 1)")
    if y not in (0, 1):
        raise ContractError("the test result y must be 0 or 1")


def disease_posteriors(pi: float = 0.1, s: float = 0.9, t: float = 0.9, y: int = 1):
    """Posterior pmfs of the indicator under the two evidence partitions.

    Partition a sees only the prevalence prior; partition b sees only the
    test result under a uniform reference prior.  Supports are ordered
    (z=0, z=1).
    """
    _check(pi, s, t, y)
    pa = np.array([1.0 - pi, pi])
    lik = np.array([1.0 - t, s]) if y == 1 else np.array([t, 1.0 - s])
    pb = lik / lik.sum()
    return pa, pb


def disease_conflict_exact(pi: float = 0.1, s: float = 0.9, t: float = 0.9, y: int = 1) -> float:
    """Closed-form conflict value sum_z pa(z) * pb(z)."""
    pa, pb = disease_posteriors(pi, s, t, y)
    return float(pa @ pb)
