"""Graph structure, validation, log densities, and model serialization."""

import math

import mpmath
import numpy as np
import pytest
import scipy.stats as sp

from dagsplit import corpus
from dagsplit.errors import ContractError, ModelError
from dagsplit.exprs import Ref, as_expr, evaluate, parse
from dagsplit.families import (
    Bernoulli,
    Beta,
    Binomial,
    Gamma,
    ImproperFlat,
    MultivariateNormal,
    Normal,
    Uniform,
)
from dagsplit.model import (
    DagModel,
    DagNode,
    deterministic,
    load_model,
    log_density,
    markov_blanket,
    model_from_json,
    model_to_json,
    save_model,
    stochastic,
    topological_order,
    validate,
)


def kinds(report):
    return {v.kind for v in report.violations}


def chain_model():
    # a -> b -> c
    return DagModel(
        [
            stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
            stochastic("b", Normal(Ref("a"), as_expr(1.0))),
            stochastic("c", Normal(Ref("b"), as_expr(1.0))),
        ]
    )


# ---------------------------------------------------------------------------
# validate


def test_validate_minimal_chain_is_clean(beta_binomial_model):
    rep = beta_binomial_model.validate()
    assert rep.ok
    assert rep.violations == [] and rep.warnings == []


def test_validate_detects_cycle():
    m = DagModel(
        [
            stochastic("a", Normal(Ref("y"), as_expr(1.0))),
            stochastic("y", Normal(Ref("a"), as_expr(1.0)), observed=0.5),
        ]
    )
    assert kinds(m.validate()) == {"CycleDetected"}
    with pytest.raises(ModelError):
        topological_order(m)


def test_validate_observation_outside_support():
    m = DagModel(
        [
            stochastic("p", Beta(as_expr(1.0), as_expr(1.0))),
            stochastic("y", Binomial(as_expr(12), Ref("p")), observed=13.0),
        ]
    )
    assert "ObservationOutsideSupport" in kinds(m.validate())


def test_validate_structural_violations():
    rep = DagModel([stochastic("a", Normal(Ref("ghost"), as_expr(1.0)))]).validate()
    assert kinds(rep) == {"DanglingReference"}

    dup = DagModel(
        [
            stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
            stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
        ]
    )
    assert "DuplicateName" in kinds(dup.validate())

    bad = DagModel([stochastic("a b", Normal(as_expr(0.0), as_expr(1.0)))])
    assert "BadName" in kinds(bad.validate())

    # deterministic nodes carry no observation
    obs_det = DagModel(
        [
            stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
            DagNode("d", expr=Ref("a"), observed=1.0),
        ]
    )
    assert "ObservedDeterministic" in kinds(obs_det.validate())

    neither = DagModel([DagNode("n")])
    assert "BadNode" in kinds(neither.validate())


def test_validate_parameter_domains():
    rep = DagModel([stochastic("a", Normal(as_expr(0.0), as_expr(-1.0)))]).validate()
    assert "BadParameter" in kinds(rep)

    mvn = DagModel(
        [
            stochastic(
                "v",
                MultivariateNormal(2, as_expr(np.zeros(3)), as_expr(np.eye(2))),
            )
        ]
    )
    assert "ShapeMismatch" in kinds(mvn.validate())


def test_validate_cut_edges():
    nodes = [
        stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
        stochastic("y", Normal(Ref("a"), as_expr(1.0)), observed=0.0),
    ]
    assert DagModel(nodes, cut_edges=[("a", "y")]).validate().ok
    # reversed direction is not an edge
    rep = DagModel(nodes, cut_edges=[("y", "a")]).validate()
    assert "CutNotAnEdge" in kinds(rep)
    rep = DagModel(nodes, cut_edges=[("a", "ghost")]).validate()
    assert "CutNotAnEdge" in kinds(rep)


def test_validate_warnings_do_not_fail():
    m = DagModel(
        [
            stochastic("a", ImproperFlat()),
            stochastic("z", Bernoulli(as_expr(0.5))),
            stochastic("y", Normal(Ref("a"), as_expr(1.0)), observed=0.0),
        ]
    )
    rep = m.validate()
    assert rep.ok
    assert {w.kind for w in rep.warnings} == {"ImproperPrior", "DiscreteLatent"}


# ---------------------------------------------------------------------------
# topological order


def test_topological_chain_and_diamond():
    assert topological_order(chain_model()) == ("a", "b", "c")

    diamond = DagModel(
        [
            stochastic("d", Normal(parse("(+ b c)"), as_expr(1.0))),
            stochastic("b", Normal(Ref("a"), as_expr(1.0))),
            stochastic("c", Normal(Ref("a"), as_expr(1.0))),
            stochastic("a", Normal(as_expr(0.0), as_expr(1.0))),
        ]
    )
    order = topological_order(diamond)
    assert order[0] == "a" and order[-1] == "d"


def test_topological_order_stable_under_permutation():
    nodes = chain_model().nodes
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        m = DagModel([nodes[i] for i in perm])
        assert topological_order(m) == ("a", "b", "c")


def test_topological_ties_break_lexicographically():
    founders = DagModel(
        [
            stochastic("z", Normal(as_expr(0.0), as_expr(1.0))),
            stochastic("m", Normal(as_expr(0.0), as_expr(1.0))),
            stochastic("q", Normal(as_expr(0.0), as_expr(1.0))),
        ]
    )
    assert topological_order(founders) == ("m", "q", "z")


def test_topological_hiv_respects_dependencies():
    """Each deterministic probability appears after every basic parameter
    it (transitively) references."""
    m = corpus.load_model("hiv")
    order = m.topological_order()
    pos = {name: i for i, name in enumerate(order)}
    basics = {"a", "b", "c", "d", "e", "f", "g", "h", "w"}

    def ancestors(name, seen=None):
        seen = set() if seen is None else seen
        for r in m.parents[name]:
            if r not in seen:
                seen.add(r)
                ancestors(r, seen)
        return seen

    p_nodes = [n.name for n in m.nodes if not n.is_stochastic and n.name.startswith("p")]
    assert len(p_nodes) == 12
    for p in p_nodes:
        for b in ancestors(p) & basics:
            assert pos[b] < pos[p], f"{b} should precede {p}"
    # the late-alphabet founder only gates the nodes that use it
    assert pos["w"] < pos["p11"] and pos["w"] < pos["p12"]


# ---------------------------------------------------------------------------
# log density


def test_log_density_binomial_against_bigfloat():
    node = stochastic("y", Binomial(as_expr(882), Ref("p")), observed=12.0)
    got = log_density(node, 12.0, {"p": 0.014})
    with mpmath.workdps(50):
        want = float(
            mpmath.log(mpmath.binomial(882, 12))
            + 12 * mpmath.log(mpmath.mpf("0.014"))
            + 870 * mpmath.log(1 - mpmath.mpf("0.014"))
        )
    assert got == pytest.approx(want, abs=1e-10)


def test_log_density_standard_normal_at_mode():
    node = stochastic("y", Normal(as_expr(0.0), as_expr(1.0)))
    assert log_density(node, 0.0, {}) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)


def test_log_density_outside_support():
    node = stochastic("x", Beta(as_expr(0.5), as_expr(0.5)))
    assert log_density(node, 1.2, {}) == -math.inf


def test_log_density_deterministic_rejected():
    with pytest.raises(ContractError):
        log_density(deterministic("d", Ref("a")), 1.0, {"a": 1.0})


def test_factorization_matches_hand_joint():
    """Sum of node log densities equals the hand-assembled log joint on a
    conjugate model with a deterministic link in the middle."""
    theta = 0.37
    m = DagModel(
        [
            stochastic("theta", Beta(as_expr(2.0), as_expr(2.0))),
            deterministic("p", "(+ (* 0.5 theta) 0.1)"),
            stochastic("y1", Binomial(as_expr(10), Ref("theta")), observed=6.0),
            stochastic("y2", Binomial(as_expr(5), Ref("p")), observed=2.0),
        ]
    )
    assert m.validate().ok
    p = 0.5 * theta + 0.1
    values = {"theta": theta, "p": p, "y1": 6.0, "y2": 2.0}
    total = sum(
        log_density(n, values[n.name], values) for n in m.nodes if n.is_stochastic
    )
    hand = (
        sp.beta(2, 2).logpdf(theta)
        + sp.binom(10, theta).logpmf(6)
        + sp.binom(5, p).logpmf(2)
    )
    assert total == pytest.approx(hand, abs=1e-12)


# ---------------------------------------------------------------------------
# markov blanket


def test_markov_blanket_chain():
    assert markov_blanket(chain_model(), "b") == {"a", "c"}


def test_markov_blanket_hierarchy_with_global_parameter():
    # beta -> theta_i -> y_i <- gamma: blanket(theta_1) = {beta, y_1, gamma}
    nodes = [
        stochastic("beta", Normal(as_expr(0.0), as_expr(100.0))),
        stochastic("gamma", Gamma(as_expr(2.0), as_expr(2.0))),
    ]
    for i in (1, 2, 3):
        nodes.append(stochastic(f"theta{i}", Normal(Ref("beta"), as_expr(1.0))))
        nodes.append(
            stochastic(f"y{i}", Normal(Ref(f"theta{i}"), parse("(/ 1 gamma)")), observed=0.3)
        )
    m = DagModel(nodes)
    assert m.validate().ok
    assert markov_blanket(m, "theta1") == {"beta", "y1", "gamma"}
    assert markov_blanket(m, "beta") == {"theta1", "theta2", "theta3"}


def test_markov_blanket_collapses_deterministic_links():
    """Blanket of an HIV basic parameter, derived independently by expanding
    the deterministic probability expressions by hand."""
    m = corpus.load_model("hiv")

    def expand(name, out):
        n = m.node_map[name]
        if n.is_stochastic:
            out.add(name)
            return
        for r in n.references():
            if r in m.node_map:
                expand(r, out)

    children, coparents = set(), set()
    for n in m.nodes:
        if not (n.is_stochastic and n.is_observed):
            continue
        srcs = set()
        for r in n.references():
            if r in m.node_map:
                expand(r, srcs)
        if "c" in srcs:
            children.add(n.name)
            coparents |= srcs - {"c"}
    assert children == {"y3", "y6", "y7", "y9"}
    assert markov_blanket(m, "c") == children | coparents


def test_markov_blanket_errors():
    m = corpus.load_model("hiv")
    with pytest.raises(ContractError):
        markov_blanket(m, "ghost")
    with pytest.raises(ContractError):
        markov_blanket(m, "p3")  # deterministic


# ---------------------------------------------------------------------------
# determinism and serialization


def test_identical_models_agree():
    a, b = chain_model(), chain_model()
    assert topological_order(a) == topological_order(b)
    assert str(a.validate()) == str(b.validate())
    assert a.hash() == b.hash()


def test_json_round_trip_corpus_models():
    for name in ("disease", "hiv", "rats"):
        m = corpus.load_model(name)
        m2 = model_from_json(model_to_json(m))
        assert m2.hash() == m.hash()
        assert m2.shapes() == m.shapes()
        assert m2.cut_edges == m.cut_edges
        assert topological_order(m2) == topological_order(m)


def test_json_round_trip_preserves_constants_and_observations():
    m = DagModel(
        [
            stochastic(
                "v", MultivariateNormal(2, Ref("m0"), as_expr(np.eye(2) * 4.0))
            ),
            stochastic("y", Normal(parse("(dot x v)"), as_expr(2.0)), observed=1.5),
            stochastic("z", Uniform(as_expr(0.0), as_expr(1.0)), observed=0.25),
        ],
        cut_edges=[("v", "y")],
        constants={"m0": np.array([1.0, -1.0]), "x": np.array([0.5, 2.0])},
        name="toy",
    )
    assert m.validate().ok
    m2 = model_from_json(model_to_json(m))
    assert m2.hash() == m.hash()
    assert m2.node_map["y"].observed_value == 1.5
    assert np.array_equal(m2.constant_value("m0"), np.array([1.0, -1.0]))
    assert m2.name == "toy"


def test_save_and_load_model_file(tmp_path):
    m = corpus.load_model("rats")
    path = tmp_path / "rats.json"
    save_model(m, path)
    assert load_model(path).hash() == m.hash()
