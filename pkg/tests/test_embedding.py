import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowflake import embedding as emb
from snowflake import graphs


def cycle4():
    return graphs.geodesic_distances(graphs.cycle_graph(4))


def test_critical_exponent_values():
    assert emb.critical_exponent(2) == 0.5
    assert emb.critical_exponent(3) == pytest.approx(0.2924813, abs=1e-7)
    assert emb.critical_exponent(17, is_tree=True) == 0.5
    with pytest.raises(ValueError):
        emb.critical_exponent(1)


def test_two_points_embed_in_a_line():
    res = emb.schoenberg_embed(np.array([[0, 3.0], [3.0, 0]]), 0.7)
    assert res.feasible and res.dim == 1
    assert res.residual <= 1e-12
    assert abs(res.coords[0, 0] - res.coords[1, 0]) == pytest.approx(3 ** 0.7)


def test_cycle_at_critical_exponent_is_feasible():
    res = emb.schoenberg_embed(cycle4(), emb.critical_exponent(4))
    assert res and res.residual <= 1e-8
    assert res.dim <= 3


def test_cycle_without_snowflake_is_infeasible():
    res = emb.schoenberg_embed(cycle4(), 1.0)
    assert not res and not res.feasible
    assert res.min_eigenvalue < -emb.PSD_TOLERANCE * res.max_eigenvalue
    assert res.min_eigenvalue == pytest.approx(-1.0)


def test_infeasible_json():
    data = json.loads(emb.schoenberg_embed(cycle4(), 1.0).to_json())
    assert data["feasible"] is False and data["epsilon"] == 1.0


def test_result_json():
    data = json.loads(emb.schoenberg_embed(cycle4(), 0.2).to_json())
    assert data["feasible"] is True and len(data["coords"]) == 4


def test_coincident_points():
    res = emb.schoenberg_embed(np.zeros((3, 3)), 0.5)
    assert res and res.dim == 0


@pytest.mark.parametrize("bad", [
    np.array([[0, 1.0], [2.0, 0]]), np.array([[0, -1.0], [-1.0, 0]]), np.zeros((2, 3)),
])
def test_invalid_matrices(bad):
    with pytest.raises(ValueError):
        emb.schoenberg_embed(bad, 0.5)


def test_invalid_epsilon():
    with pytest.raises(ValueError):
        emb.schoenberg_embed(cycle4(), 0.0)
    with pytest.raises(ValueError):
        emb.schoenberg_embed(cycle4(), 1.5)


def test_euclidean_input_is_feasible_at_one():
    pts = np.random.default_rng(2).standard_normal((7, 3))
    res = emb.schoenberg_embed(graphs.pairwise_euclidean(pts), 1.0)
    assert res and res.dim == 3 and res.residual < 1e-10


def test_universality_two_nodes():
    rep = emb.verify_snowflake_universality(graphs.WeightedGraph([(0, 1)], [2.5]))
    assert rep.exact and rep.triangle_constant == 2.0


def test_universality_cycle_and_five_node():
    for g in (graphs.cycle_graph(4), graphs.five_node_graph()):
        rep = emb.verify_snowflake_universality(g)
        assert rep.exact
        s, L = rep.distortion
        assert abs(s - 1) <= 1e-6 and abs(L - 1) <= 1e-6
        assert rep.to_dict()["exact"] is True


def test_universality_tree_exponent():
    star = graphs.WeightedGraph([(0, 1), (0, 2), (0, 3)], [1.0, 2.0, 3.0])
    rep = emb.verify_snowflake_universality(star, is_tree=True)
    assert rep.epsilon == 0.5 and rep.exact


@settings(max_examples=100, deadline=None)
@given(n=st.integers(3, 8), seed=st.integers(0, 2**30))
def test_universality_random_graphs(n, seed):
    g = graphs.random_connected_graph(n, np.random.default_rng(seed))
    rep = emb.verify_snowflake_universality(g)
    assert rep.feasible and rep.residual <= 1e-6 and rep.exact


def test_exponential_sum_single_term_recovery():
    ts = np.array([0.0, 1.0, 3.0])
    ys = 2.0 * (1 - np.exp(-0.5 * ts))
    fit = emb.fit_exponential_sum(ts, ys, 1)
    assert fit.betas[0] == pytest.approx(2.0, abs=1e-8)
    assert fit.alphas[0] == pytest.approx(0.5, abs=1e-8)
    assert fit(0.0) == 0.0


def test_exponential_sum_zero_data():
    fit = emb.fit_exponential_sum(np.array([0.0, 1.0, 2.0]), np.zeros(3), 2)
    np.testing.assert_array_equal(fit.betas, 0.0)
    assert fit.residual == 0.0


def test_exponential_sum_bounded_target():
    ts = np.linspace(0, 4, 4)
    ys = graphs.synthetic_target("M3", ts)
    fit = emb.fit_exponential_sum(ts, ys, 2)
    assert fit.residual <= 1e-6
    np.testing.assert_allclose(fit(ts), ys, atol=1e-6)


def test_exponential_sum_residual_non_increasing():
    ts = np.linspace(0, 10, 12)
    ys = graphs.synthetic_target("M6", ts)
    residuals = [emb.fit_exponential_sum(ts, ys, M).residual for M in (1, 2, 3)]
    assert residuals[1] <= residuals[0] and residuals[2] <= residuals[1]


def test_exponential_sum_errors():
    with pytest.raises(ValueError):
        emb.fit_exponential_sum([0.0], [0.0], 1)
    with pytest.raises(ValueError):
        emb.fit_exponential_sum([0.0, 1.0], [0.0, 1.0], 0)
    with pytest.raises(ValueError):
        emb.fit_exponential_sum([1.0, 0.0], [0.0, 1.0], 1)


def test_exponential_sum_array_evaluation():
    fit = emb.ExponentialSum(np.array([1.0, 2.0]), np.array([0.5, 1.5]))
    t = np.array([[0.0, 1.0], [2.0, 3.0]])
    expected = 0.5 * (1 - np.exp(-t)) + 1.5 * (1 - np.exp(-2 * t))
    np.testing.assert_allclose(fit(t), expected, rtol=1e-15)
    assert fit.M == 2
    assert math.isclose(fit(1.0), float(expected[0, 1]))
