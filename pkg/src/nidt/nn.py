"""Layer math with hand-written backward passes.

Arrays are batch-first: sequences are ``(B, L, C)``, vectors ``(B, n)``. Every
forward returns ``(output, cache)`` and the matching backward consumes the
cache, so layers hold no mutable state and can be shared across threads.
Parameters are float32 in normal use and float64 for gradient checking; the
input is cast to the parameter dtype.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {where}")


# -- conv1d: kernel 3, stride 1, one zero of padding per side ----------------

def conv1d_forward(x, W, b):
    """``out[:, t, f] = b[f] + sum_{j,c} W[j, c, f] * xpad[:, t + j, c]``; W is (k, C_in, F)."""
    B, L, C = x.shape
    k, c_in, F = W.shape
    if C != c_in:
        raise ValueError(f"conv1d expects {c_in} input channels, got {C}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, k - 1 - pad), (0, 0)))
    cols = np.concatenate([xp[:, j : j + L] for j in range(k)], axis=2).reshape(B * L, k * C)
    out = cols @ W.reshape(k * C, F) + b
    return out.reshape(B, L, F), (cols, x.shape)


def conv1d_backward(grad, W, cache):
    cols, (B, L, C) = cache
    k, _, F = W.shape
    if grad.shape != (B, L, F):
        raise ValueError(f"conv1d grad shape {grad.shape} does not match output {(B, L, F)}")
    g = grad.reshape(B * L, F)
    dW = (cols.T @ g).reshape(W.shape)
    db = g.sum(axis=0)
    dcols = (g @ W.reshape(k * C, F).T).reshape(B, L, k, C)
    pad = k // 2
    dxp = np.zeros((B, L + k - 1, C), dtype=grad.dtype)
    for j in range(k):
        dxp[:, j : j + L] += dcols[:, :, j]
    return dxp[:, pad : pad + L], dW, db


# -- pooling -----------------------------------------------------------------

def maxpool1d_forward(x, pool=2):
    """Non-overlapping max pool; a trailing partial window is dropped. Ties keep the first index."""
    B, L, C = x.shape
    if L < pool:
        raise ValueError(f"maxpool1d needs length >= {pool}, got {L}")
    Lo = L // pool
    win = x[:, : Lo * pool].reshape(B, Lo, pool, C)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0]
    return out, (arg, x.shape)


def maxpool1d_backward(grad, cache, pool=2):
    arg, (B, L, C) = cache
    Lo = L // pool
    if grad.shape != (B, Lo, C):
        raise ValueError(f"maxpool1d grad shape {grad.shape} does not match output {(B, Lo, C)}")
    dwin = np.zeros((B, Lo, pool, C), dtype=grad.dtype)
    np.put_along_axis(dwin, arg[:, :, None, :], grad[:, :, None, :], axis=2)
    dx = np.zeros((B, L, C), dtype=grad.dtype)
    dx[:, : Lo * pool] = dwin.reshape(B, Lo * pool, C)
    return dx


# -- activations ---------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad, mask):
    return grad * mask


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_forward(z):
    p = sigmoid(z)
    return p, p


def sigmoid_backward(grad, p):
    return grad * p * (1 - p)


# -- LSTM ----------------------------------------------------------------------

def lstm_forward(x, W, b):
    """Single-layer LSTM from zero state; returns the last hidden state ``(B, H)``.

    ``W`` is ``(C + H, 4H)`` acting on ``[x_t, h_{t-1}]``; gate blocks are ordered
    input, forget, candidate, output.
    """
    B, T, C = x.shape
    H = W.shape[1] // 4
    if W.shape[0] != C + H:
        raise ValueError(f"lstm expects {W.shape[0] - H} input features, got {C}")
    if T == 0:
        raise ValueError("lstm needs at least one timestep")
    h = np.zeros((B, H), dtype=W.dtype)
    c = np.zeros((B, H), dtype=W.dtype)
    steps = []
    for t in range(T):
        xh = np.concatenate([x[:, t], h], axis=1)
        z = xh @ W + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((xh, i, f, g, o, c_prev, tc))
    return h, (steps, x.shape)


def lstm_backward(grad_h, W, cache):
    """Backpropagation through time over every cached step."""
    steps, (B, T, C) = cache
    H = W.shape[1] // 4
    if grad_h.shape != (B, H):
        raise ValueError(f"lstm grad shape {grad_h.shape} does not match output {(B, H)}")
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1], dtype=W.dtype)
    dx = np.zeros((B, T, C), dtype=grad_h.dtype)
    dh = grad_h
    dc = np.zeros((B, H), dtype=grad_h.dtype)
    for t in range(T - 1, -1, -1):
        xh, i, f, g, o, c_prev, tc = steps[t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1 - i),
                dc * c_prev * f * (1 - f),
                dc * i * (1 - g * g),
                do * o * (1 - o),
            ],
            axis=1,
        )
        dW += xh.T @ dz
        db += dz.sum(axis=0)
        dxh = dz @ W.T
        dx[:, t] = dxh[:, :C]
        dh = dxh[:, C:]
        dc = dc * f
    return dx, dW, db


# -- dense / dropout -----------------------------------------------------------

def dense_forward(x, W, b):
    if x.shape[1] != W.shape[0]:
        raise ValueError(f"dense expects {W.shape[0]} inputs, got {x.shape[1]}")
    return x @ W + b, x


def dense_backward(grad, W, x):
    return grad @ W.T, x.T @ grad, grad.sum(axis=0)


def dropout_forward(x, rate, training=False, rng=None):
    """Inverted dropout; identity outside training."""
    if not training or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * keep, keep


def dropout_backward(grad, keep):
    return grad if keep is None else grad * keep


# -- loss --------------------------------------------------------------------------

def bce_loss(p, y, eps=BCE_EPS):
    """Mean binary cross-entropy and its gradient with respect to ``p``.

    ``p`` is clamped to ``[eps, 1 - eps]`` before the logs; the gradient is
    the derivative at the clamped point.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ValueError(f"p shape {p.shape} != y shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("bce targets must be 0 or 1")
    n = max(p.size, 1)
    pc = np.clip(p, eps, 1 - eps)
    loss = -(y * np.log(pc) + (1 - y) * np.log1p(-pc)).sum() / n
    grad = (pc - y) / (pc * (1 - pc)) / n
    return float(loss), grad.astype(p.dtype, copy=False)


# -- layer objects ---------------------------------------------------------------


class Layer:
    """A layer kind plus its hyperparameters and (maybe) parameters."""

    kind = ""
    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def hyper(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"kind": self.kind, **self.hyper()}

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def param_shapes(self, input_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
        return {}

    @property
    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad, cache):
        """Return ``(grad_input, {param_name: grad})``."""
        raise NotImplementedError


class Conv1D(Layer):
    kind = "conv1d"
    param_names = ("W", "b")

    def __init__(self, filters: int, kernel_size: int = 3):
        super().__init__()
        self.filters = filters
        self.kernel_size = kernel_size

    def hyper(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size}

    def output_shape(self, input_shape):
        L, _ = input_shape
        return (L, self.filters)

    def param_shapes(self, input_shape):
        _, C = input_shape
        return {"W": (self.kernel_size, C, self.filters), "b": (self.filters,)}

    def forward(self, x, training=False, rng=None):
        return conv1d_forward(x, self.params["W"], self.params["b"])

    def backward(self, grad, cache):
        dx, dW, db = conv1d_backward(grad, self.params["W"], cache)
        return dx, {"W": dW, "b": db}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        return relu_forward(x)

    def backward(self, grad, cache):
        return relu_backward(grad, cache), {}


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, pool_size: int = 2):
        super().__init__()
        self.pool_size = pool_size

    def hyper(self):
        return {"pool_size": self.pool_size}

    def output_shape(self, input_shape):
        L, C = input_shape
        if L < self.pool_size:
            raise ValueError(f"maxpool1d needs length >= {self.pool_size}, got {L}")
        return (L // self.pool_size, C)

    def forward(self, x, training=False, rng=None):
        return maxpool1d_forward(x, self.pool_size)

    def backward(self, grad, cache):
        return maxpool1d_backward(grad, cache, self.pool_size), {}


class LSTM(Layer):
    kind = "lstm"
    param_names = ("W", "b")

    def __init__(self, units: int):
        super().__init__()
        self.units = units

    def hyper(self):
        return {"units": self.units}

    def output_shape(self, input_shape):
        T, _ = input_shape
        if T < 1:
            raise ValueError("lstm needs at least one timestep")
        return (self.units,)

    def param_shapes(self, input_shape):
        _, C = input_shape
        return {"W": (C + self.units, 4 * self.units), "b": (4 * self.units,)}

    def forward(self, x, training=False, rng=None):
        return lstm_forward(x, self.params["W"], self.params["b"])

    def backward(self, grad, cache):
        dx, dW, db = lstm_backward(grad, self.params["W"], cache)
        return dx, {"W": dW, "b": db}


class Dense(Layer):
    kind = "dense"
    param_names = ("W", "b")

    def __init__(self, units: int):
        super().__init__()
        self.units = units

    def hyper(self):
        return {"units": self.units}

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"dense needs a flat input, got shape {input_shape}")
        return (self.units,)

    def param_shapes(self, input_shape):
        return {"W": (input_shape[0], self.units), "b": (self.units,)}

    def forward(self, x, training=False, rng=None):
        return dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, grad, cache):
        dx, dW, db = dense_backward(grad, self.params["W"], cache)
        return dx, {"W": dW, "b": db}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def hyper(self):
        return {"rate": self.rate}

    def forward(self, x, training=False, rng=None):
        return dropout_forward(x, self.rate, training, rng)

    def backward(self, grad, cache):
        return dropout_backward(grad, cache), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False, rng=None):
        return sigmoid_forward(x)

    def backward(self, grad, cache):
        return sigmoid_backward(grad, cache), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}


LAYER_KINDS = {cls.kind: cls for cls in (Conv1D, ReLU, MaxPool1D, LSTM, Dense, Dropout, Sigmoid, Flatten)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**spec)
