import math

import numpy as np
import numpy.testing as npt
import pytest

from nidt import nn
from gradcheck import numeric_grad, rel_error

SEEDS = range(20)


def _check_layer(forward, backward, inputs, rng, tol=1e-4):
    """Compare analytic gradients of sum(R * forward(*inputs)) with finite differences.

    ``backward(R, cache)`` must return gradients aligned with ``inputs``.
    """
    out, cache = forward(*inputs)
    R = rng.standard_normal(out.shape)
    analytic = backward(R, cache)
    loss = lambda: float(np.sum(R * forward(*inputs)[0]))
    for arr, g in zip(inputs, analytic):
        err = rel_error(g, numeric_grad(loss, arr))
        assert err <= tol, err


# -- conv1d ---------------------------------------------------------------------


def test_conv1d_hand_example():
    x = np.array([1.0, 2, 3, 4]).reshape(1, 4, 1)
    W = np.ones((3, 1, 1))
    out, _ = nn.conv1d_forward(x, W, np.zeros(1))
    npt.assert_array_equal(out.ravel(), [3, 6, 9, 7])


def test_conv1d_zero_input_zero_bias():
    out, _ = nn.conv1d_forward(np.zeros((2, 5, 3)), np.ones((3, 3, 4)), np.zeros(4))
    assert out.shape == (2, 5, 4)
    assert not out.any()


def test_conv1d_param_count_first_layer():
    layer = nn.Conv1D(64)
    shapes = layer.param_shapes((32, 1))
    assert sum(int(np.prod(s)) for s in shapes.values()) == 256


def test_conv1d_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        nn.conv1d_forward(np.zeros((1, 4, 2)), np.zeros((3, 3, 1)), np.zeros(1))


def test_conv1d_backward_zero_grad():
    rng = np.random.default_rng(0)
    x, W = rng.standard_normal((2, 6, 3)), rng.standard_normal((3, 3, 4))
    _, cache = nn.conv1d_forward(x, W, np.zeros(4))
    dx, dW, db = nn.conv1d_backward(np.zeros((2, 6, 4)), W, cache)
    assert not dx.any() and not dW.any() and not db.any()


def test_conv1d_bias_grad_is_sum_over_time():
    rng = np.random.default_rng(1)
    x, W = rng.standard_normal((3, 7, 2)), rng.standard_normal((3, 2, 5))
    _, cache = nn.conv1d_forward(x, W, np.zeros(5))
    g = rng.standard_normal((3, 7, 5))
    _, _, db = nn.conv1d_backward(g, W, cache)
    npt.assert_allclose(db, g.sum(axis=(0, 1)))


def test_conv1d_single_element_fd():
    rng = np.random.default_rng(2)
    x, W, b = rng.standard_normal((1, 1, 1)), rng.standard_normal((3, 1, 1)), rng.standard_normal(1)
    _check_layer(nn.conv1d_forward, lambda g, c: nn.conv1d_backward(g, W, c), [x, W, b], rng, tol=1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(seed)
    B, L, C, F = 2, int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x, W, b = rng.standard_normal((B, L, C)), rng.standard_normal((3, C, F)), rng.standard_normal(F)
    _check_layer(nn.conv1d_forward, lambda g, c: nn.conv1d_backward(g, W, c), [x, W, b], rng)


# -- maxpool ------------------------------------------------------------------------


def test_maxpool_values():
    out, _ = nn.maxpool1d_forward(np.array([4.0, 2, 6, 1]).reshape(1, 4, 1))
    npt.assert_array_equal(out.ravel(), [4, 6])


def test_maxpool_tie_routes_to_first():
    x = np.array([5.0, 5.0]).reshape(1, 2, 1)
    _, cache = nn.maxpool1d_forward(x)
    dx = nn.maxpool1d_backward(np.ones((1, 1, 1)), cache)
    npt.assert_array_equal(dx.ravel(), [1, 0])


def test_maxpool_too_short():
    with pytest.raises(ValueError):
        nn.maxpool1d_forward(np.zeros((1, 1, 3)))


def test_maxpool_odd_length_drops_tail():
    out, cache = nn.maxpool1d_forward(np.arange(5.0).reshape(1, 5, 1))
    npt.assert_array_equal(out.ravel(), [1, 3])
    dx = nn.maxpool1d_backward(np.ones((1, 2, 1)), cache)
    npt.assert_array_equal(dx.ravel(), [0, 1, 0, 1, 0])


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2 * int(rng.integers(1, 5)), 3))
    _check_layer(lambda a: nn.maxpool1d_forward(a), lambda g, c: (nn.maxpool1d_backward(g, c),), [x], rng)


# -- LSTM ------------------------------------------------------------------------------


def test_lstm_param_count():
    layer = nn.LSTM(100)
    assert sum(int(np.prod(s)) for s in layer.param_shapes((4, 256)).values()) == 142_800


def test_lstm_zero_weights_give_zero_state():
    h, _ = nn.lstm_forward(np.random.default_rng(0).standard_normal((3, 4, 5)), np.zeros((5 + 2, 8)), np.zeros(8))
    assert not h.any()


def test_lstm_scalar_hand_computation():
    # input weights (i, f, g, o) = 0.1..0.4, recurrent weights unused at T=1
    W = np.array([[0.1, 0.2, 0.3, 0.4], [9.0, 9.0, 9.0, 9.0]])
    b = np.array([0.01, 0.02, 0.03, 0.04])
    h, _ = nn.lstm_forward(np.array([[[0.5]]]), W, b)
    assert h[0, 0] == pytest.approx(0.05118837960807963, rel=1e-12)


def test_lstm_empty_sequence():
    with pytest.raises(ValueError):
        nn.lstm_forward(np.zeros((1, 0, 2)), np.zeros((3, 4)), np.zeros(4))


def test_lstm_zero_upstream_grad():
    rng = np.random.default_rng(3)
    x, W, b = rng.standard_normal((2, 4, 3)), rng.standard_normal((5, 8)), rng.standard_normal(8)
    _, cache = nn.lstm_forward(x, W, b)
    dx, dW, db = nn.lstm_backward(np.zeros((2, 2)), W, cache)
    assert not dx.any() and not dW.any() and not db.any()


def test_lstm_bptt_fd_t4_c3_h2():
    rng = np.random.default_rng(4)
    x, W, b = rng.standard_normal((1, 4, 3)), rng.standard_normal((5, 8)), rng.standard_normal(8)
    _check_layer(nn.lstm_forward, lambda g, c: nn.lstm_backward(g, W, c), [x, W, b], rng, tol=1e-5)


def _cell_grad(x, W, b, dh):
    # one LSTM cell from zero state, differentiated by hand without any loop
    sig = lambda z: 1 / (1 + np.exp(-z))
    H = dh.shape[1]
    xh = np.concatenate([x, np.zeros((x.shape[0], H))], axis=1)
    z = xh @ W + b
    i, g, o = sig(z[:, :H]), np.tanh(z[:, 2 * H : 3 * H]), sig(z[:, 3 * H :])
    c = i * g
    tc = np.tanh(c)
    dc = dh * o * (1 - tc**2)
    dz = np.concatenate([dc * g * i * (1 - i), np.zeros_like(dc), dc * i * (1 - g**2), dh * tc * o * (1 - o)], axis=1)
    return (dz @ W.T)[:, : x.shape[1]], xh.T @ dz, dz.sum(axis=0)


def test_lstm_single_step_matches_cell():
    rng = np.random.default_rng(5)
    x, W, b = rng.standard_normal((3, 1, 4)), rng.standard_normal((7, 12)), rng.standard_normal(12)
    dh = rng.standard_normal((3, 3))
    _, cache = nn.lstm_forward(x, W, b)
    dx, dW, db = nn.lstm_backward(dh, W, cache)
    ex, eW, eb = _cell_grad(x[:, 0], W, b, dh)
    npt.assert_allclose(dx[:, 0], ex, rtol=1e-12, atol=1e-14)
    npt.assert_allclose(dW, eW, rtol=1e-12, atol=1e-14)
    npt.assert_allclose(db, eb, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    T, C, H = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x, W, b = rng.standard_normal((2, T, C)), 0.5 * rng.standard_normal((C + H, 4 * H)), rng.standard_normal(4 * H)
    _check_layer(nn.lstm_forward, lambda g, c: nn.lstm_backward(g, W, c), [x, W, b], rng)


# -- dense, activations, dropout -----------------------------------------------------------


def test_dense_param_count():
    assert sum(int(np.prod(s)) for s in nn.Dense(256).param_shapes((100,)).values()) == 25_856


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    x, W, b = rng.standard_normal((3, n)), rng.standard_normal((n, m)), rng.standard_normal(m)
    _check_layer(nn.dense_forward, lambda g, c: nn.dense_backward(g, W, c), [x, W, b], rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    x = rng.standard_normal((3, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    _check_layer(nn.relu_forward, lambda g, c: (nn.relu_backward(g, c),), [x], rng)


def test_sigmoid_zero():
    assert nn.sigmoid(np.array([0.0]))[0] == 0.5


def test_sigmoid_extremes_finite():
    p = nn.sigmoid(np.array([-1000.0, 1000.0]))
    npt.assert_array_equal(p, [0.0, 1.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_sigmoid_gradients(seed):
    rng = np.random.default_rng(400 + seed)
    _check_layer(nn.sigmoid_forward, lambda g, c: (nn.sigmoid_backward(g, c),), [3 * rng.standard_normal((4, 3))], rng)


def test_dropout_eval_is_identity():
    x = np.random.default_rng(0).standard_normal((4, 6))
    out, cache = nn.dropout_forward(x, 0.5, training=False)
    assert out is x
    g = np.ones_like(x)
    assert nn.dropout_backward(g, cache) is g


def test_dropout_train_scales_survivors():
    x = np.ones((200, 50))
    out, keep = nn.dropout_forward(x, 0.25, training=True, rng=np.random.default_rng(0))
    survivors = out[out != 0]
    npt.assert_allclose(survivors, 1 / 0.75)
    assert abs((out == 0).mean() - 0.25) < 0.01


@pytest.mark.parametrize("seed", SEEDS)
def test_dropout_gradients(seed):
    # a fixed mask makes training-mode dropout a deterministic linear map
    rng = np.random.default_rng(500 + seed)
    x = rng.standard_normal((3, 7))
    mask_rng_seed = int(rng.integers(1 << 30))
    fwd = lambda a: nn.dropout_forward(a, 0.3, True, np.random.default_rng(mask_rng_seed))
    _check_layer(fwd, lambda g, c: (nn.dropout_backward(g, c),), [x], rng)
    _check_layer(lambda a: nn.dropout_forward(a, 0.3, False), lambda g, c: (nn.dropout_backward(g, c),), [x], rng)


# -- BCE --------------------------------------------------------------------------------------


def test_bce_half():
    loss, _ = nn.bce_loss(np.array([0.5]), np.array([1]))
    assert loss == pytest.approx(math.log(2))


def test_bce_near_one():
    loss, _ = nn.bce_loss(np.array([1 - 1e-7]), np.array([1]))
    assert 0 <= loss <= 1.01e-7


def test_bce_rejects_nonbinary():
    with pytest.raises(ValueError):
        nn.bce_loss(np.array([0.3]), np.array([2]))


@pytest.mark.parametrize("seed", SEEDS)
def test_bce_batch_gradient(seed):
    rng = np.random.default_rng(600 + seed)
    p = rng.uniform(0.05, 0.95, 8)
    y = rng.integers(0, 2, 8)
    _, g = nn.bce_loss(p, y)
    num = numeric_grad(lambda: nn.bce_loss(p, y)[0], p)
    assert rel_error(g, num) <= 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_sigmoid_bce_chain_gradients(seed):
    rng = np.random.default_rng(700 + seed)
    z = 2 * rng.standard_normal(6)
    y = rng.integers(0, 2, 6)

    def loss():
        return nn.bce_loss(nn.sigmoid(z), y)[0]

    p, cache = nn.sigmoid_forward(z)
    _, gp = nn.bce_loss(p, y)
    gz = nn.sigmoid_backward(gp, cache)
    assert rel_error(gz, numeric_grad(loss, z)) <= 1e-4
    npt.assert_allclose(gz, (p - y) / 6, rtol=1e-9)


def test_flatten_roundtrip():
    x = np.arange(24.0).reshape(2, 4, 3)
    layer = nn.Flatten()
    out, cache = layer.forward(x)
    assert out.shape == (2, 12)
    back, _ = layer.backward(out, cache)
    npt.assert_array_equal(back, x)


def test_check_finite_rejects_nan():
    with pytest.raises(nn.NonFiniteError):
        nn.check_finite(np.array([1.0, np.nan]), "test")


def test_layer_from_spec_unknown():
    with pytest.raises(ValueError):
        nn.layer_from_spec({"kind": "attention"})
