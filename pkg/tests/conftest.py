import numpy as np
import pytest

from dagsplit.exprs import Call, Const, Ref
from dagsplit.families import Beta, Binomial, Gamma, MultivariateNormal, Normal, Wishart
from dagsplit.model import DagModel, stochastic


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end acceptance criteria (slow; deselect with -m 'not acceptance')"
    )


@pytest.fixture
def beta_binomial_model():
    """theta ~ Beta(2,2), y ~ Binomial(10, theta) observed at 6.

    Posterior is Beta(8, 6) exactly.
    """
    return DagModel(
        (
            stochastic("theta", Beta(Const(2.0), Const(2.0))),
            stochastic("y", Binomial(Const(10.0), Ref("theta")), observed=6.0),
        ),
        constants={},
    )


@pytest.fixture
def normal_mean_model():
    """mu ~ N(0, 100), y_i ~ N(mu, 4) observed; conjugate normal-mean pair."""
    obs = (1.2, -0.4, 2.1, 0.7)
    nodes = [stochastic("mu", Normal(Const(0.0), Const(100.0)))]
    for i, y in enumerate(obs):
        nodes.append(stochastic(f"y[{i + 1}]", Normal(Ref("mu"), Const(4.0)), observed=y))
    return DagModel(tuple(nodes), constants={}), obs


def normal_mean_posterior(obs, m0=0.0, v0=100.0, var=4.0):
    prec = 1.0 / v0 + len(obs) / var
    mean = (m0 / v0 + sum(obs) / var) / prec
    return mean, 1.0 / prec


@pytest.fixture
def gamma_precision_model():
    """tau ~ Gamma(2, 1), y_i ~ N(3, 1/tau); conjugate gamma-precision pair."""
    obs = (2.2, 3.5, 2.9, 3.8, 2.6)
    nodes = [stochastic("tau", Gamma(Const(2.0), Const(1.0)))]
    for i, y in enumerate(obs):
        nodes.append(
            stochastic(
                f"y[{i + 1}]",
                Normal(Const(3.0), Call("/", (Const(1.0), Ref("tau")))),
                observed=y,
            )
        )
    return DagModel(tuple(nodes), constants={}), obs


def gamma_precision_posterior(obs, a=2.0, b=1.0, mean=3.0):
    ss = sum((y - mean) ** 2 for y in obs)
    return a + len(obs) / 2.0, b + ss / 2.0  # shape, rate


@pytest.fixture
def mvn_linear_model():
    """beta ~ MVN((0,0), diag(1e-4) precision), y_j ~ N(x_j . beta, 2)."""
    xs = ((1.0, -2.0), (1.0, -1.0), (1.0, 0.0), (1.0, 1.0), (1.0, 2.0), (1.0, 3.0))
    obs = (0.8, 1.9, 3.1, 4.2, 4.8, 6.3)
    nodes = [
        stochastic(
            "beta",
            MultivariateNormal(2, Const((0.0, 0.0)), Const(((1e-4, 0.0), (0.0, 1e-4)))),
        )
    ]
    for j, (x, y) in enumerate(zip(xs, obs)):
        nodes.append(
            stochastic(
                f"y[{j + 1}]",
                Normal(Call("dot", (Const(x), Ref("beta"))), Const(2.0)),
                observed=y,
            )
        )
    return DagModel(tuple(nodes), constants={}), np.array(xs), np.array(obs)


def mvn_linear_posterior(xs, obs, prior_prec=1e-4, var=2.0):
    xs = np.asarray(xs, dtype=float)
    obs = np.asarray(obs, dtype=float)
    post_p = np.eye(xs.shape[1]) * prior_prec + xs.T @ xs / var
    mean = np.linalg.solve(post_p, xs.T @ obs / var)
    return mean, np.linalg.inv(post_p)


def run_stats(values):
    """Pooled mean, variance, and a crude MC standard error of the mean."""
    flat = np.asarray(values, dtype=float).ravel()
    from dagsplit.diagnostics import ess

    e = max(ess(np.asarray(values, dtype=float)), 4.0)
    return flat.mean(), flat.var(ddof=1), flat.std(ddof=1) / np.sqrt(e)
