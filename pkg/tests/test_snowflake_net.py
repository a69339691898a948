import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowflake import quasimetric as qm
from snowflake import snowflake_net as sn
from snowflake.graphs import pairwise_euclidean
from snowflake.suites import central_differences, random_snowflake, relative_error


def reference_forward(net, t):
    """Loop-based evaluation of the layer recursion, written independently of the module."""
    h = np.array([t])
    for layer in net.layers:
        A, B, C = np.abs(layer.A), np.abs(layer.B), np.abs(layer.C)
        u = A @ h
        rows = []
        for uj in np.abs(u):
            rows.append([1 - math.exp(-uj), uj ** layer.a, math.log1p(uj) ** layer.b if uj > 0 else 0.0])
        h = B @ (np.array(rows) @ C)
    raw = h[0] ** (1 + abs(net.p))
    return net.skip_weight * t + (1 - net.skip_weight) * raw


def test_tensorized_activation_rows():
    out = sn.tensorized_activation(np.array([0.0, 1.0, -1.0]))
    assert out.shape == (3, 3)
    np.testing.assert_array_equal(out[0], [0, 0, 0])
    np.testing.assert_allclose(out[1], [1 - math.exp(-1), 1, math.log(2)], rtol=1e-15)
    np.testing.assert_array_equal(out[1], out[2])
    np.testing.assert_allclose(out[1], [0.632121, 1, 0.693147], atol=1e-6)


def test_tensorized_activation_general_exponents():
    out = sn.tensorized_activation(np.array([4.0]), a=0.5, b=0.5)
    np.testing.assert_allclose(out[0], [1 - math.exp(-4), 2.0, math.sqrt(math.log(5))], rtol=1e-15)


def test_identity_config_is_identity():
    net = sn.identity_config(p=0)
    t = np.array([0.0, 0.3, 1.0, 7.5])
    np.testing.assert_array_equal(sn.forward(net, t), t)


def test_identity_config_squares():
    net = sn.identity_config(p=1)
    assert sn.forward(net, 3.0) == pytest.approx(9.0, rel=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_forward_zero_is_zero(seed):
    net = random_snowflake(np.random.default_rng(seed))
    assert sn.forward(net, 0.0) == 0.0
    assert sn.forward(sn.init([1, 20, 1], seed=seed), 0.0) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_reference(seed):
    rng = np.random.default_rng(seed)
    net = random_snowflake(rng)
    for t in rng.uniform(0, 5, size=5):
        assert sn.forward(net, t) == pytest.approx(reference_forward(net, t), rel=1e-12)


def test_forward_rejects_negative():
    with pytest.raises(ValueError):
        sn.forward(sn.identity_config(), -1.0)


def test_forward_shapes():
    net = sn.init([1, 3, 1], seed=0)
    assert isinstance(sn.forward(net, 1.0), float)
    assert sn.forward(net, np.ones((2, 3))).shape == (2, 3)


def test_backward_identity_slope():
    g = sn.backward(sn.identity_config(p=0), 2.5)
    assert g.d_input == pytest.approx(1.0)


def test_backward_exponent_gradient():
    g = sn.backward(sn.identity_config(p=1.0), 3.0)
    assert g.d_p == pytest.approx(9 * math.log(3), rel=1e-12)
    assert g.d_p == pytest.approx(9.8875, abs=1e-4)
    g = sn.backward(sn.identity_config(p=-1.0), 3.0)
    assert g.d_p == pytest.approx(-9 * math.log(3), rel=1e-12)


def test_backward_two_layer_against_differences():
    rng = np.random.default_rng(11)
    net = random_snowflake(rng, chain=[1, 4, 1])
    g = sn.backward(net, 0.7)
    params = dict(net.parameters(), p=np.array([net.p]), skip=np.array([net.skip_weight]))

    def loss():
        net.p, net.skip_weight = float(params["p"][0]), float(params["skip"][0])
        return sn.forward(net, 0.7)

    num = central_differences(loss, params)
    analytic = dict(sn.gradient_dict(g), p=np.array([g.d_p]), skip=np.array([g.d_skip]))
    assert relative_error([analytic[k] for k in params], [num[k] for k in params]) < 1e-5


def test_gradient_shapes_match_parameters():
    net = sn.init([1, 5, 3, 1], seed=2)
    grads = sn.gradient_dict(sn.backward(net, np.array([0.5, 1.5])))
    for key, value in net.parameters().items():
        assert grads[key].shape == value.shape


def test_backward_at_zero_is_finite():
    g = sn.backward(sn.init([1, 20, 1], seed=0), np.array([0.0, 1.0]))
    for arr in sn.gradient_dict(g).values():
        assert np.all(np.isfinite(arr))
    assert np.isfinite(g.d_p)


def test_init_ranges_and_determinism():
    a = sn.init([1, 20, 1], seed=4)
    b = sn.init([1, 20, 1], seed=4)
    assert a.p == 1e-8 and a.skip_weight == 0.5
    layer = a.layers[0]
    assert layer.A.shape == (20, 1)
    assert np.all((layer.A >= 0) & (layer.A <= 1 / 20))
    assert np.all((layer.B >= 0) & (layer.B <= 1 / (20 * 20)))
    assert np.all((layer.C >= 0) & (layer.C <= 1 / 3))
    assert a.layers[0].a == 1 and a.layers[0].b == 1
    for key, value in a.parameters().items():
        np.testing.assert_array_equal(value, b.parameters()[key])


def test_experiment_parameter_count():
    # 847 for the stand-alone snowflake, which with the 3322-parameter encoder gives 4169
    assert sn.init([1, 20, 1], seed=0).param_count() == 847


@pytest.mark.parametrize("chain", [[2, 3, 1], [1, 3, 2], [1], [1, 0, 1]])
def test_init_rejects_bad_chain(chain):
    with pytest.raises(ValueError):
        sn.init(chain)


def test_inconsistent_layers_rejected():
    l1 = sn.SnowflakeLayer(np.ones((2, 1)), np.ones((3, 2)), np.ones(3))
    l2 = sn.SnowflakeLayer(np.ones((2, 2)), np.ones((1, 2)), np.ones(3))
    with pytest.raises(ValueError):
        sn.NeuralSnowflake([l1, l2])


def test_json_round_trip_bit_exact():
    net = random_snowflake(np.random.default_rng(8), chain=[1, 3, 2, 1])
    back = sn.NeuralSnowflake.from_json(net.to_json())
    for key, value in net.parameters().items():
        np.testing.assert_array_equal(value, back.parameters()[key])
    assert back.p == net.p and back.skip_weight == net.skip_weight
    t = np.linspace(0, 4, 9)
    np.testing.assert_array_equal(sn.forward(net, t), sn.forward(back, t))


def test_snowflake_metric():
    net = sn.identity_config()
    assert sn.snowflake_metric(net, [1, 2], [1, 2]) == 0.0
    assert sn.snowflake_metric(net, [0, 0], [3, 4]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        sn.snowflake_metric(net, [0, 0], [1, 1, 1])


def test_activation_config_matches_closed_form():
    net = sn.activation_config(c=(0.5, 2.0, 1.5), p=0.3)
    params = qm.SnowflakeParams(c1=0.5, c2=2.0, c3=1.5, p=0.3)
    t = np.linspace(0, 6, 13)
    np.testing.assert_allclose(sn.forward(net, t), qm.snowflake_profile(t, params), rtol=1e-13)


def test_triangle_constant_property():
    assert sn.identity_config(p=-1).triangle_constant == 2.0


@pytest.mark.parametrize("seed", range(100))
def test_metric_generator_at_init(seed):
    rng = np.random.default_rng(seed)
    chain = [1] + [int(v) for v in rng.integers(1, 21, size=rng.integers(1, 3))] + [1]
    net = sn.init(chain, seed=seed, p=0.0, skip_weight=0.0)
    assert qm.check_metric_generator(lambda t: sn.forward(net, t), np.linspace(0, 10, 200))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), skip=st.sampled_from([0.0, 0.5]))
def test_p_zero_network_is_metric(seed, skip):
    rng = np.random.default_rng(seed)
    net = random_snowflake(rng, p=0.0, skip_weight=skip)
    D = sn.forward(net, pairwise_euclidean(rng.uniform(-1, 1, size=(15, 3))))
    assert qm.report_from_matrix(D).implied_C <= 1 + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), sign=st.sampled_from([-1.0, 1.0]))
def test_unit_p_network_has_constant_two(seed, sign):
    rng = np.random.default_rng(seed)
    net = random_snowflake(rng, p=sign)
    D = sn.forward(net, pairwise_euclidean(rng.uniform(-1, 1, size=(15, 3))))
    assert qm.report_from_matrix(D).implied_C <= 2 + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**20), t1=st.floats(0, 50), t2=st.floats(0, 50))
def test_monotone(seed, t1, t2):
    net = random_snowflake(np.random.default_rng(seed))
    lo, hi = min(t1, t2), max(t1, t2)
    assert sn.forward(net, lo) <= sn.forward(net, hi)
