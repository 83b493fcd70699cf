import math

import numpy as np
import pytest
from scipy import stats as sp

from dagsplit.errors import ContractError, SamplingError
from dagsplit.exprs import Const
from dagsplit.families import (
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


def test_bernoulli_logpdf():
    assert Bernoulli.logpdf(1.0, 0.3) == pytest.approx(math.log(0.3))
    assert Bernoulli.logpdf(0.0, 0.3) == pytest.approx(math.log(0.7))
    assert Bernoulli.logpdf(1.0, 0.0) == -math.inf


def test_binomial_logpdf_matches_scipy():
    for y, n, p in [(3, 10, 0.4), (0, 5, 0.2), (5, 5, 0.9), (12, 882, 0.013)]:
        assert Binomial.logpdf(float(y), float(n), p) == pytest.approx(
            sp.binom(int(n), p).logpmf(y), rel=1e-12
        )


def test_beta_logpdf_matches_scipy():
    for x, a, b in [(0.3, 2.0, 5.0), (0.5, 0.5, 0.5), (0.9, 1.0, 1.0), (0.013, 12.5, 870.5)]:
        assert Beta.logpdf(x, a, b) == pytest.approx(sp.beta(a, b).logpdf(x), rel=1e-12)
    assert Beta.logpdf(1.5, 2.0, 2.0) == -math.inf
    assert Beta.logpdf(-0.1, 2.0, 2.0) == -math.inf


def test_normal_logpdf_matches_scipy():
    for x, m, v in [(0.3, 1.0, 4.0), (-2.0, 0.0, 1.0), (250.0, 242.0, 37.0)]:
        assert Normal.logpdf(x, m, v) == pytest.approx(sp.norm(m, math.sqrt(v)).logpdf(x), rel=1e-12)


def test_gamma_rate_parameterization():
    # shape/rate convention: mean a/b
    for x, a, b in [(2.3, 1.5, 0.7), (0.05, 0.001, 0.001), (4.0, 2.0, 2.0)]:
        assert Gamma.logpdf(x, a, b) == pytest.approx(sp.gamma(a, scale=1.0 / b).logpdf(x), rel=1e-12)
    assert Gamma.logpdf(0.0, 2.0, 1.0) == -math.inf
    assert Gamma.logpdf(-1.0, 2.0, 1.0) == -math.inf


def test_uniform_logpdf():
    assert Uniform.logpdf(0.3, 0.0, 2.0) == pytest.approx(math.log(0.5))
    assert Uniform.logpdf(2.5, 0.0, 2.0) == -math.inf


def test_mvn_precision_parameterization():
    prec = np.array([[2.0, 0.3], [0.3, 1.0]])
    mean = np.array([1.0, -2.0])
    for x in ([0.5, -1.0], [1.0, -2.0], [3.0, 0.0]):
        expect = sp.multivariate_normal(mean=mean, cov=np.linalg.inv(prec)).logpdf(np.array(x))
        assert MultivariateNormal.logpdf(np.array(x), mean, prec) == pytest.approx(expect, rel=1e-12)


def test_wishart_density_and_moments():
    # density parameterized so that E[W] = df * scale^{-1} (precision-prior use)
    R = np.array([[200.0, 1.0], [1.0, 0.2]])
    df = 5.0
    rng = np.random.default_rng(11)
    draws = np.array([Wishart.sample(rng, R, df) for _ in range(40000)])
    assert np.allclose(draws.mean(axis=0), df * np.linalg.inv(R), rtol=0.05)
    w = draws[0]
    expect = sp.wishart(df=df, scale=np.linalg.inv(R)).logpdf(w)
    assert Wishart.logpdf(w, R, df) == pytest.approx(expect, rel=1e-10)
    assert Wishart.logpdf(np.array([[1.0, 2.0], [2.0, 1.0]]), R, df) == -math.inf  # not SPD


def test_wishart_rejects_bad_scale():
    rng = np.random.default_rng(0)
    with pytest.raises(SamplingError):
        Wishart.sample(rng, np.array([[200.0, 10.0], [10.0, 0.2]]), 2.0)  # det < 0


def test_mvn_sampling_moments():
    prec = np.array([[2.0, 0.5], [0.5, 1.0]])
    mean = np.array([1.0, -1.0])
    rng = np.random.default_rng(5)
    draws = np.array([MultivariateNormal.sample(rng, mean, prec) for _ in range(40000)])
    assert np.allclose(draws.mean(axis=0), mean, atol=0.05)
    assert np.allclose(np.cov(draws.T), np.linalg.inv(prec), rtol=0.08, atol=0.01)


def test_scalar_sampling_moments():
    rng = np.random.default_rng(9)
    beta = np.array([Beta.sample(rng, 2.0, 5.0) for _ in range(20000)])
    assert beta.mean() == pytest.approx(2.0 / 7.0, abs=0.01)
    gam = np.array([Gamma.sample(rng, 3.0, 2.0) for _ in range(20000)])
    assert gam.mean() == pytest.approx(1.5, abs=0.03)


def test_improper_flat_jacobians():
    flat_log = ImproperFlat(support="positive", flat_on="log")
    # flat on log(x) contributes -log(x) on the x scale
    assert flat_log.logpdf(2.0) == pytest.approx(-math.log(2.0))
    assert flat_log.logpdf(-1.0) == -math.inf
    flat_id = ImproperFlat(support="real", flat_on="identity")
    assert flat_id.logpdf(3.7) == 0.0
    vec = ImproperFlat(support="real", flat_on="identity", node_shape=(2,))
    assert vec.logpdf(np.array([1.0, 2.0])) == 0.0
    with pytest.raises(SamplingError):
        flat_id.sample(np.random.default_rng(0))


def test_family_params_round_trip():
    fam = Normal(Const(0.0), Const(4.0))
    assert [p.value for p in fam.params()] == [0.0, 4.0]
    assert fam.param_names == ("mean", "var")
    b = Binomial(Const(10.0), Const(0.4))
    assert b.param_names == ("n", "p")


def test_validation_rejects_bad_constructor_args():
    with pytest.raises(ContractError):
        MultivariateNormal(0, Const((0.0,)), Const(((1.0,),)))
    with pytest.raises(ContractError):
        Wishart(0, Const(((1.0,),)), Const(2.0))
    with pytest.raises(ContractError):
        MultivariateNormal(9, Const((0.0,) * 9), Const(tuple((1.0,) * 9 for _ in range(9))))
    # df <= dim - 1 is a density-level violation, not a construction error
    assert Wishart.logpdf(np.eye(2), np.eye(2), 0.5) == -math.inf


def test_mvn_covariance_ingestion():
    fam = MultivariateNormal.with_covariance(2, Const((0.0, 0.0)), Const(((4.0, 0.0), (0.0, 0.25))))
    cov = np.array([[4.0, 0.0], [0.0, 0.25]])
    x = np.array([1.0, -0.5])
    expect = sp.multivariate_normal(mean=np.zeros(2), cov=cov).logpdf(x)
    from dagsplit.exprs import evaluate

    prec = evaluate(fam.precision, {})
    assert MultivariateNormal.logpdf(x, np.zeros(2), np.asarray(prec)) == pytest.approx(expect, rel=1e-12)
