import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dffn.errors import DomainError, NumericError, ShapeError, StateError
from dffn.nnkernel import (
    EVAL,
    AdagradState,
    ConvLayer,
    FcLayer,
    Flatten,
    MaxPool,
    Mode,
    PoolSpec,
    RReLU,
    RReluConfig,
    Sequential,
    adagrad_step,
    backprop,
    conv2d_forward,
    fc_forward,
    grad_check,
    maxpool_forward,
    rrelu,
    smooth_l1,
    smooth_l1_grad,
)


def test_identity_kernel():
    x = np.arange(12.0).reshape(1, 3, 4)
    layer = ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(conv2d_forward(x, layer), x)


def test_sum_kernel():
    layer = ConvLayer(np.ones((1, 1, 2, 2)), np.zeros(1))
    assert conv2d_forward(np.ones((1, 2, 2)), layer).tolist() == [[[4.0]]]


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 7, 9))
    W, b = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out = conv2d_forward(x, ConvLayer(W, b, (2, 2)))
    np.testing.assert_allclose(out, oracles.conv2d(x, W, b, (2, 2)), atol=1e-6)


def test_conv_shape_error_names_shapes():
    layer = ConvLayer(np.ones((1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match=r"\(1, 5, 5\).*\(1, 2, 3, 3\)"):
        conv2d_forward(np.ones((1, 5, 5)), layer)
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((2, 2, 2)), layer)


def test_maxpool_small_cases():
    out, arg = maxpool_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]), PoolSpec((2, 2), (2, 2)))
    assert out.tolist() == [[[4.0]]] and arg.tolist() == [[[3]]]
    out, arg = maxpool_forward(np.full((1, 4, 4), 7.0), PoolSpec((2, 2), (2, 2)))
    assert (out == 7.0).all()
    assert arg.tolist() == [[[0, 2], [8, 10]]]
    with pytest.raises(ShapeError):
        maxpool_forward(np.ones((1, 2, 2)), PoolSpec((3, 3), (1, 1)))


def test_maxpool_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.integers(-3, 3, (3, 8, 7)).astype(float)  # many ties
    out, arg = maxpool_forward(x, PoolSpec((3, 2), (2, 2)))
    ref_out, ref_arg = oracles.maxpool(x, (3, 2), (2, 2))
    np.testing.assert_array_equal(out, ref_out)
    np.testing.assert_array_equal(arg, ref_arg)


def test_fc_cases():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(fc_forward(x, FcLayer(np.eye(3), np.zeros(3))), x)
    np.testing.assert_array_equal(fc_forward(x, FcLayer(np.zeros((2, 3)), np.array([1.0, 2.0]))), [1.0, 2.0])
    rng = np.random.default_rng(3)
    W, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
    np.testing.assert_allclose(fc_forward(x, FcLayer(W, b)), oracles.fc(x, W, b), atol=1e-6)
    with pytest.raises(ShapeError):
        fc_forward(np.ones(5), FcLayer(W, b))


def test_rrelu_eval_and_train():
    cfg = RReluConfig(0.125, 0.375)
    assert rrelu(np.array([2.0]), cfg, EVAL)[0].tolist() == [2.0]
    assert rrelu(np.array([-1.0]), cfg, EVAL)[0].tolist() == [-0.25]
    out, _ = rrelu(-np.ones(1000), cfg, Mode.train(5))
    assert ((out >= -0.375) & (out <= -0.125)).all()
    again, _ = rrelu(-np.ones(1000), cfg, Mode.train(5))
    np.testing.assert_array_equal(out, again)


def test_rrelu_literal_eval_rule():
    cfg = RReluConfig(0.125, 0.375, eval_rule="divide_by_mean")
    assert rrelu(np.array([-1.0]), cfg, EVAL)[0].tolist() == [-4.0]


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_rrelu_train_bounds(values, seed):
    cfg = RReluConfig()
    x = np.array(values)
    out, _ = rrelu(x, cfg, Mode.train(seed))
    neg = x < 0
    assert np.all(out[~neg] == x[~neg])
    assert np.all(out[neg] <= cfg.lower * x[neg] + 1e-12)
    assert np.all(out[neg] >= cfg.upper * x[neg] - 1e-12)


def test_rrelu_rejects_bad_interval():
    with pytest.raises(ValueError):
        RReluConfig(0.5, 0.25)


def test_smooth_l1_values():
    assert smooth_l1([1.0], [1.0]) == 0.0
    assert smooth_l1([0.0], [1.0]) == 0.5
    assert smooth_l1([0.5], [1.0]) == 0.125
    assert smooth_l1([3.0, 1.0], [0.0, 1.0]) == pytest.approx(1.25)
    with pytest.raises(DomainError):
        smooth_l1([], [])


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_smooth_l1_grad_is_clipped_difference(p, t):
    g = smooth_l1_grad([p], [t])[0]
    assert -1.0 <= g <= 1.0
    assert g == pytest.approx(max(-1.0, min(1.0, p - t)))


def test_fc_backprop_bias_gradient():
    layer = FcLayer(np.array([[0.5, -0.25]]), np.array([0.1]))
    net = Sequential([layer])
    x = np.array([[1.0, 2.0], [0.0, 1.0]])
    t = np.array([0.3, -0.2])
    p = net.forward(x)[:, 0]
    grads = backprop(net, smooth_l1_grad(p, t).reshape(-1, 1))
    assert grads["0.b"][0] == pytest.approx(np.sum(p - t) / 2)


def test_backward_without_forward_is_state_error():
    with pytest.raises(StateError):
        FcLayer(np.eye(2), np.zeros(2)).backward(np.ones((1, 2)))
    with pytest.raises(StateError):
        MaxPool(PoolSpec((2, 2), (2, 2))).backward(np.ones((1, 1, 1, 1)))


def test_rrelu_backward_uses_cached_slope():
    layer = RReLU(RReluConfig())
    layer.forward(np.array([-2.0, 3.0]), EVAL)
    np.testing.assert_allclose(layer.backward(np.ones(2)), [RReluConfig().eval_slope, 1.0])


def test_adagrad_hand_step():
    params = {"w": np.array([1.0])}
    state = AdagradState(learning_rate=0.1, epsilon=1e-8)
    adagrad_step(params, {"w": np.array([0.5])}, state)
    assert state.accumulators["w"][0] == 0.25
    assert params["w"][0] == pytest.approx(0.9, abs=1e-7)


def test_adagrad_zero_gradient_and_shrinking_steps():
    params = {"w": np.array([2.0])}
    state = AdagradState(0.1)
    adagrad_step(params, {"w": np.array([0.0])}, state)
    assert params["w"][0] == 2.0
    before = params["w"][0]
    adagrad_step(params, {"w": np.array([1.0])}, state)
    first = before - params["w"][0]
    before = params["w"][0]
    adagrad_step(params, {"w": np.array([1.0])}, state)
    assert 0 < before - params["w"][0] < first


def test_adagrad_rejects_non_finite():
    with pytest.raises(NumericError, match="layer.W"):
        adagrad_step({"layer.W": np.zeros(2)}, {"layer.W": np.array([0.0, np.nan])}, AdagradState())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.integers(1, 5))
def test_adagrad_accumulator_never_decreases(grad, steps):
    params = {"w": np.zeros(3)}
    state = AdagradState()
    last = np.zeros(3)
    for _ in range(steps):
        adagrad_step(params, {"w": np.array(grad)}, state)
        assert np.all(state.accumulators["w"] >= last)
        last = state.accumulators["w"].copy()


def _conv_net(rng):
    return Sequential([
        ConvLayer.init(rng, 1, 2, (3, 3)),
        MaxPool(PoolSpec((2, 2), (2, 2))),
        RReLU(),
        ConvLayer.init(rng, 2, 2, (2, 2)),
        RReLU(),
        Flatten(),
        FcLayer.init(rng, 8, 5),
        RReLU(),
        FcLayer.init(rng, 5, 1),
    ])


def test_grad_check_linear_network_is_exact():
    rng = np.random.default_rng(0)
    net = Sequential([FcLayer.init(rng, 4, 3), FcLayer.init(rng, 3, 1)])
    report = grad_check(net, rng.standard_normal((5, 4)), rng.standard_normal(5))
    assert report.passed
    assert report.max_rel_error < 1e-5


def test_grad_check_conv_network():
    rng = np.random.default_rng(4)
    net = _conv_net(rng)
    assert net.output_shape(1, 8, 8) == (1,)
    report = grad_check(net, rng.standard_normal((3, 1, 8, 8)), rng.standard_normal(3))
    assert report.passed, "\n".join(report.lines())
    assert {r.name for r in report.layers} == {"0", "3", "6", "8"}


def test_grad_check_zero_tolerance_fails():
    rng = np.random.default_rng(0)
    net = Sequential([FcLayer.init(rng, 2, 1)])
    report = grad_check(net, rng.standard_normal((2, 2)), rng.standard_normal(2), tolerance=0.0)
    assert not report.passed
    assert report.lines()[-1].startswith("FAIL")


def test_eval_forward_is_bit_identical():
    rng = np.random.default_rng(5)
    net = _conv_net(rng)
    x = rng.standard_normal((2, 1, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(net.forward(x, EVAL), net.forward(x, EVAL))
