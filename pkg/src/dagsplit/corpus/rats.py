"""Rat growth-curve hierarchy (Gelfand, Hills, Racine-Poon & Smith 1990).

Thirty young rats were weighed weekly for five weeks.  Each rat gets its
own linear growth curve; the per-rat (intercept, slope) pairs share a
bivariate normal population distribution whose precision matrix carries a
Wishart prior, and the measurement precision carries a gamma prior.  Times
are centred at the middle week so intercept and slope are near-orthogonal.

The split family holds one rat out: its curve copy under the population
prior is compared with a copy fitted to that rat's five weights alone under
a flat reference prior.  The measurement precision is shared between the
partitions, so the holdout rat's contribution to it is severed by a cut.
"""
from __future__ import annotations

import csv
from importlib import resources

import numpy as np

from ..errors import ContractError
from ..exprs import Call, Const, Ref
from ..families import Gamma, MultivariateNormal, Normal, Wishart
from ..model import DagModel, stochastic
from ..splitting import SplitSpec

__all__ = [
    "N_RATS",
    "N_WEEKS",
    "rats_data",
    "rats_days",
    "build_rats_model",
    "rats_split_holdout",
]

N_RATS = 30
N_WEEKS = 5

_DAYS = (8.0, 15.0, 22.0, 29.0, 36.0)


def rats_days(centered: bool = True) -> tuple[float, ...]:
    """Measurement days, optionally centred at the middle week (day 22)."""
    if centered:
        return tuple(d - 22.0 for d in _DAYS)
    return _DAYS


def rats_data() -> np.ndarray:
    """The 30 x 5 weight table, rats in rows, weeks in columns (grams)."""
    with resources.files("dagsplit.corpus").joinpath("data/rats.csv").open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "rat" or len(body) != N_RATS:
        raise ContractError("rats.csv is malformed")
    out = np.array([[float(v) for v in row[1:]] for row in body])
    if out.shape != (N_RATS, N_WEEKS):
        raise ContractError("rats.csv is malformed")
    return out


def build_rats_model() -> DagModel:
    """Hierarchical linear growth model for the full table."""
    y = rats_data()
    t = rats_days()
    nodes = [
        stochastic(
            "beta",
            MultivariateNormal(
                2,
                Const((0.0, 0.0)),
                Const(((1e-6, 0.0), (0.0, 1e-6))),
            ),
        ),
        stochastic(
            "omega",
            Wishart(2, Const(((200.0, 0.0), (0.0, 0.2))), Const(2.0)),
        ),
        stochastic("tau", Gamma(Const(0.001), Const(0.001))),
    ]
    for i in range(1, N_RATS + 1):
        nodes.append(
            stochastic(f"phi[{i}]", MultivariateNormal(2, Ref("beta"), Ref("omega")))
        )
    inv_tau = Call("/", (Const(1.0), Ref("tau")))
    for i in range(1, N_RATS + 1):
        for j in range(1, N_WEEKS + 1):
            mean = Call("dot", (Ref(f"phi[{i}]"), Const((1.0, t[j - 1]))))
            nodes.append(
                stochastic(
                    f"y[{i},{j}]",
                    Normal(mean, inv_tau),
                    observed=float(y[i - 1, j - 1]),
                )
            )
    return DagModel(nodes, name="rats")


def rats_split_holdout(rat: int) -> SplitSpec:
    """Hold rat ``rat`` out: compare its population-predicted curve with the
    curve its own five weights support."""
    if not 1 <= rat <= N_RATS:
        raise ContractError(f"rat index must be 1..{N_RATS}")
    assignment = {f"y[{rat},{j}]": "b" for j in range(1, N_WEEKS + 1)}
    return SplitSpec(
        separators=(f"phi[{rat}]",),
        assignment=assignment,
        nuisance_cuts=(("tau", "b"),),
        name=f"holdout-{rat}",
    )
