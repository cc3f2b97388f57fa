"""DNN / CNN / CNN-LSTM classifiers: construction, training and batched prediction."""

from __future__ import annotations

import copy
import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from threadpoolctl import threadpool_limits

from . import nn
from .fileio import atomic_open

log = logging.getLogger(__name__)

# Inference runs in fixed-height chunks, zero-padded at the tail. BLAS picks a
# different kernel for very short matrices, so a fixed shape is what makes a
# record's score independent of how many records it is scored with.
CHUNK_ROWS = 64


class Family(str, Enum):
    DNN = "DNN"
    CNN = "CNN"
    CNN_LSTM = "CNN_LSTM"

    @classmethod
    def parse(cls, value: "str | Family") -> "Family":
        if isinstance(value, Family):
            return value
        key = value.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown model family {value!r}; expected dnn, cnn or cnn-lstm") from None


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    family: Family
    input_features: int
    layers: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {"family": self.family.value, "input_features": self.input_features, "layers": [dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(Family.parse(d["family"]), int(d["input_features"]), tuple(dict(l) for l in d["layers"]))


def _conv_stack(dropout: float, with_lstm: bool) -> list[dict]:
    layers: list[dict] = []
    for filters in (64, 128, 256):
        for _ in range(2):
            layers += [{"kind": "conv1d", "filters": filters, "kernel_size": 3}, {"kind": "relu"}]
        layers.append({"kind": "maxpool1d", "pool_size": 2})
    layers.append({"kind": "lstm", "units": 100} if with_lstm else {"kind": "flatten"})
    return layers + _dense_tail(dropout)


def _dense_tail(dropout: float) -> list[dict]:
    return [
        {"kind": "dense", "units": 256},
        {"kind": "relu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "units": 128},
        {"kind": "relu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "units": 1},
        {"kind": "sigmoid"},
    ]


def architecture(family: "Family | str", input_features: int = 32, dropout: float = 0.5) -> ArchitectureSpec:
    family = Family.parse(family)
    if family is Family.DNN:
        if input_features < 1:
            raise ValueError("input_features must be >= 1")
        layers = _dense_tail(dropout)
    else:
        # three halvings must leave at least one timestep
        if input_features < 8:
            raise ValueError(f"{family.value} needs input_features >= 8, got {input_features}")
        layers = _conv_stack(dropout, with_lstm=family is Family.CNN_LSTM)
    return ArchitectureSpec(family, input_features, tuple(layers))


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _he(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Model:
    """A stack of ``nn`` layers built from an ``ArchitectureSpec``.

    Conv families take ``(B, F)`` input and see it as a length-F, one-channel sequence.
    """

    def __init__(self, spec: ArchitectureSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers = [nn.layer_from_spec(l) for l in spec.layers]
        self.shapes = self._infer_shapes()

    @property
    def input_shape(self) -> tuple[int, ...]:
        if self.spec.family is Family.DNN:
            return (self.spec.input_features,)
        return (self.spec.input_features, 1)

    def _infer_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def layer_input_shape(self, i: int) -> tuple[int, ...]:
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def param_shapes(self) -> list[tuple[int, str, tuple[int, ...]]]:
        """``(layer_index, name, shape)`` for every parameter tensor, in layer order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes(self.layer_input_shape(i)).items():
                out.append((i, name, shape))
        return out

    def tensors(self) -> list[np.ndarray]:
        return [self.layers[i].params[name] for i, name, _ in self.param_shapes()]

    def set_tensors(self, arrays) -> None:
        slots = self.param_shapes()
        arrays = list(arrays)
        if len(arrays) != len(slots):
            raise ValueError(f"expected {len(slots)} tensors, got {len(arrays)}")
        for (i, name, shape), arr in zip(slots, arrays):
            arr = np.asarray(arr, dtype=self.dtype)
            if arr.shape != shape:
                raise ValueError(f"layer {i} {name}: expected shape {shape}, got {arr.shape}")
            self.layers[i].params[name] = arr

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, _, s in self.param_shapes())

    def initialize(self, seed: int = 42) -> "Model":
        """He-uniform weights for layers feeding a ReLU, Glorot-uniform elsewhere;
        zero biases, forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        for i, layer in enumerate(self.layers):
            in_shape = self.layer_input_shape(i)
            relu_next = i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu"
            if layer.kind == "conv1d":
                k, c, f = layer.param_shapes(in_shape)["W"]
                if relu_next:
                    layer.params["W"] = _he(rng, (k, c, f), k * c, self.dtype)
                else:
                    layer.params["W"] = _glorot(rng, (k, c, f), k * c, k * f, self.dtype)
                layer.params["b"] = np.zeros(f, dtype=self.dtype)
            elif layer.kind == "dense":
                n_in, n_out = layer.param_shapes(in_shape)["W"]
                if relu_next:
                    layer.params["W"] = _he(rng, (n_in, n_out), n_in, self.dtype)
                else:
                    layer.params["W"] = _glorot(rng, (n_in, n_out), n_in, n_out, self.dtype)
                layer.params["b"] = np.zeros(n_out, dtype=self.dtype)
            elif layer.kind == "lstm":
                C, H = in_shape[1], layer.units
                W_in = _glorot(rng, (C, 4 * H), C, 4 * H, self.dtype)
                W_rec = _glorot(rng, (H, 4 * H), H, 4 * H, self.dtype)
                layer.params["W"] = np.concatenate([W_in, W_rec], axis=0)
                b = np.zeros(4 * H, dtype=self.dtype)
                b[H : 2 * H] = 1.0
                layer.params["b"] = b
        return self

    def astype(self, dtype) -> "Model":
        other = Model(self.spec, dtype)
        other.set_tensors([t.astype(dtype) for t in self.tensors()])
        return other

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def _prepare(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.input_features:
            raise ValueError(f"model expects (n, {self.spec.input_features}) input, got {x.shape}")
        return x if self.spec.family is Family.DNN else x[:, :, None]

    def forward(self, X, training=False, rng=None):
        """Run all layers; returns ``(scores (B,), caches)``."""
        x = self._prepare(X)
        nn.check_finite(x, "model input")
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, training=training, rng=rng)
            nn.check_finite(x, f"output of layer {i} ({layer.kind})")
            caches.append(cache)
        return x[:, 0], caches

    def backward(self, grad_scores, caches):
        """Gradients for every parameter, aligned with ``param_shapes()``."""
        grad = grad_scores[:, None]
        per_layer: list[dict] = [{}] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, grads = self.layers[i].backward(grad, caches[i])
            per_layer[i] = grads
        return [per_layer[i][name] for i, name, _ in self.param_shapes()]

    def summary(self) -> list[tuple[str, str, tuple[int, ...], int]]:
        """Keras-style rows ``(name, kind, output_shape, n_params)``; activations are folded away."""
        names = {"conv1d": "conv1d", "maxpool1d": "max_pooling1d", "lstm": "lstm", "dense": "dense", "dropout": "dropout", "flatten": "flatten"}
        counters: dict[str, int] = {}
        rows = []
        for i, layer in enumerate(self.layers):
            if layer.kind not in names:
                continue
            base = names[layer.kind]
            counters[base] = counters.get(base, 0) + 1
            n = sum(int(np.prod(s)) for s in layer.param_shapes(self.layer_input_shape(i)).values())
            rows.append((f"{base}_{counters[base]}", layer.kind, self.shapes[i], n))
        return rows


def build(family: "Family | str", input_features: int = 32, seed: int = 42, dropout: float = 0.5, dtype=np.float32) -> Model:
    return Model(architecture(family, input_features, dropout), dtype).initialize(seed)


# -- prediction -------------------------------------------------------------------


def _score_chunk(model: Model, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if n < CHUNK_ROWS:
        x = np.concatenate([x, np.zeros((CHUNK_ROWS - n, x.shape[1]), dtype=x.dtype)])
    scores, _ = model.forward(x, training=False)
    return scores[:n]


def predict_proba(model: Model, X, threads: int = 1) -> np.ndarray:
    """Scores in [0, 1], one per row, in eval mode.

    Rows are scored in fixed-size chunks with single-threaded BLAS; ``threads``
    only sets how many chunks run concurrently, so the output bits do not depend on it.
    """
    x = np.asarray(getattr(X, "values", X), dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != model.spec.input_features:
        raise ValueError(f"model expects (n, {model.spec.input_features}) input, got {x.shape}")
    n = x.shape[0]
    if n == 0:
        return np.empty(0, dtype=model.dtype)
    starts = range(0, n, CHUNK_ROWS)
    with threadpool_limits(limits=1, user_api="blas"):
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda s: _score_chunk(model, x[s : s + CHUNK_ROWS]), starts))
        else:
            parts = [_score_chunk(model, x[s : s + CHUNK_ROWS]) for s in starts]
    return np.concatenate(parts)


def classify(scores, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores) >= threshold).astype(np.int64)


# -- training -------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 50
    early_stop_patience: int = 5
    dropout_rate: float = 0.5
    seed: int = 42
    threshold: float = 0.5

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("max_epochs must be >= 0 and early_stop_patience >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None
    wall_seconds: float = 0.0

    @property
    def best_val_acc(self) -> float | None:
        if self.best_epoch is None:
            return None
        return self.epochs[self.best_epoch - 1].val_acc

    def to_csv(self, path: str | os.PathLike) -> None:
        with atomic_open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_acc)])


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (scale * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


def _with_dropout(model: Model, rate: float) -> Model:
    spec = model.spec
    layers = tuple({**l, "rate": rate} if l["kind"] == "dropout" else l for l in spec.layers)
    out = Model(ArchitectureSpec(spec.family, spec.input_features, layers), model.dtype)
    out.set_tensors([t.copy() for t in model.tensors()])
    return out


def train(model: Model, train_data, val_data, config: TrainConfig = TrainConfig(), threads: int = 1):
    """Mini-batch Adam on mean BCE with early stopping on validation accuracy.

    Returns a new model holding the weights of the best validation epoch (ties
    go to the earliest) and the per-epoch report. The input model is untouched.
    """
    X_tr, y_tr = train_data
    X_va, y_va = val_data
    X_tr = np.asarray(getattr(X_tr, "values", X_tr), dtype=model.dtype)
    X_va = np.asarray(getattr(X_va, "values", X_va), dtype=model.dtype)
    y_tr = np.asarray(y_tr)
    y_va = np.asarray(y_va)
    if len(X_tr) == 0 or len(X_va) == 0:
        raise ValueError("training and validation data must be non-empty")
    if len(X_tr) != len(y_tr) or len(X_va) != len(y_va):
        raise ValueError("feature and label row counts differ")

    net = _with_dropout(model, config.dropout_rate)
    report = TrainReport()
    if config.max_epochs == 0:
        return net, report

    rng = np.random.default_rng(config.seed)
    params = net.tensors()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    y_tr_f = y_tr.astype(model.dtype)
    best_acc = -1.0
    best_weights = [p.copy() for p in params]
    stale = 0
    t0 = time.perf_counter()
    with threadpool_limits(limits=threads, user_api="blas"):
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(X_tr))
            loss_sum = 0.0
            correct = 0
            for bi, s in enumerate(range(0, len(order), config.batch_size)):
                idx = order[s : s + config.batch_size]
                try:
                    p, caches = net.forward(X_tr[idx], training=True, rng=rng)
                except nn.NonFiniteError as exc:
                    raise TrainingDivergedError(f"non-finite activations at epoch {epoch}, batch {bi}: {exc}") from exc
                loss, _ = nn.bce_loss(p, y_tr_f[idx])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {bi}")
                # fused sigmoid + BCE gradient on the logit: (p - y) / n
                grad_logit = (p - y_tr_f[idx]) / np.asarray(len(idx), dtype=model.dtype)
                grads = _backward_from_logit(net, grad_logit, caches)
                opt.step(params, grads)
                loss_sum += loss * len(idx)
                correct += int((classify(p, config.threshold) == y_tr[idx]).sum())
            val_acc = float((classify(predict_proba(net, X_va), config.threshold) == y_va).mean())
            stats = EpochStats(epoch, loss_sum / len(order), correct / len(order), val_acc)
            report.epochs.append(stats)
            log.info("epoch %d loss %.5f train_acc %.4f val_acc %.4f", epoch, stats.train_loss, stats.train_acc, val_acc)
            if val_acc > best_acc:
                best_acc = val_acc
                best_weights = [p.copy() for p in params]
                report.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    net.set_tensors(best_weights)
    report.wall_seconds = time.perf_counter() - t0
    return net, report


def _backward_from_logit(net: Model, grad_logit, caches):
    # skip the final sigmoid: its gradient is folded into grad_logit
    if net.layers[-1].kind != "sigmoid":
        raise ValueError("training expects a sigmoid output layer")
    grad = grad_logit[:, None]
    per_layer: list[dict] = [{}] * len(net.layers)
    for i in range(len(net.layers) - 2, -1, -1):
        grad, grads = net.layers[i].backward(grad, caches[i])
        per_layer[i] = grads
    return [per_layer[i][name] for i, name, _ in net.param_shapes()]
