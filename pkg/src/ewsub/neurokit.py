"""Small numpy network kernel: a fixed layer vocabulary, a static tape, Adam.

Models take ``(B, 2, d)`` I/Q frames; internally activations are laid out
channels-last, ``(batch, length, channels)``, so convolutions reduce to
large contiguous matrix products. Every layer implements an
explicit forward/backward pair; a model is an ordered list of layers whose
forward caches are replayed in reverse to obtain gradients.
"""
from __future__ import annotations

import copy
import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

LOG_CLIP = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)
    children: tuple["LayerSpec", ...] = ()

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "args": dict(self.args)}
        if self.children:
            out["children"] = [c.to_json() for c in self.children]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LayerSpec":
        return cls(obj["kind"], dict(obj.get("args", {})), tuple(cls.from_json(c) for c in obj.get("children", [])))


def conv1d(out_channels: int, width: int) -> LayerSpec:
    return LayerSpec("conv1d", {"out_channels": out_channels, "width": width})


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", {"units": units})


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool1d(width: int) -> LayerSpec:
    return LayerSpec("maxpool1d", {"width": width})


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


def lstm(hidden: int) -> LayerSpec:
    return LayerSpec("lstm_cell_layer", {"hidden": hidden})


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def residual(*children: LayerSpec) -> LayerSpec:
    """Skip connection around ``children``: ``x + f(x)``."""
    return LayerSpec("residual", {}, tuple(children))


# --------------------------------------------------------------------------
# layers


def _glorot(rng, shape, fan_in, fan_out, dtype):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Layer:
    def __init__(self, spec: LayerSpec, in_shape: tuple[int, ...]):
        self.spec = spec
        self.in_shape = in_shape
        self.out_shape = in_shape

    def init(self, rng, dtype) -> dict[str, np.ndarray]:
        return {}

    def init_buffers(self, dtype) -> dict[str, np.ndarray]:
        return {}

    def forward(self, p, buf, x, train):
        raise NotImplementedError

    def backward(self, p, cache, dy):
        raise NotImplementedError


class Conv1D(Layer):
    """'Same'-padded convolution over the length axis.

    One GEMM against all taps at once, ``(B*(L+K-1), C) @ (C, K*O)``, then
    the K shifted partial products are summed.
    """

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(in_shape) != 2:
            raise ShapeError(f"conv1d expects (length, channels), got {in_shape}")
        self.length, self.c_in = in_shape
        self.c_out = spec.args["out_channels"]
        self.k = spec.args["width"]
        self.pad_l = (self.k - 1) // 2
        self.pad_r = self.k // 2
        self.out_shape = (self.length, self.c_out)

    def init(self, rng, dtype):
        fan_in, fan_out = self.c_in * self.k, self.c_out * self.k
        return {"W": _glorot(rng, (self.k, self.c_in, self.c_out), fan_in, fan_out, dtype),
                "b": np.zeros(self.c_out, dtype)}

    def forward(self, p, buf, x, train):
        b = x.shape[0]
        lp = self.length + self.k - 1
        xp = np.zeros((b, lp, self.c_in), dtype=x.dtype)
        xp[:, self.pad_l:self.pad_l + self.length] = x
        w_all = p["W"].transpose(1, 0, 2).reshape(self.c_in, self.k * self.c_out)
        y = (xp.reshape(b * lp, self.c_in) @ w_all).reshape(b, lp, self.k, self.c_out)
        out = y[:, 0:self.length, 0, :] + p["b"]
        for j in range(1, self.k):
            out += y[:, j:j + self.length, j, :]
        return out, xp

    def backward(self, p, xp, dy):
        b = dy.shape[0]
        lp = self.length + self.k - 1
        dyf = dy.reshape(b * self.length, self.c_out)
        dw = np.empty_like(p["W"])
        for j in range(self.k):
            dw[j] = xp[:, j:j + self.length].reshape(b * self.length, self.c_in).T @ dyf
        w_t = p["W"].transpose(2, 0, 1).reshape(self.c_out, self.k * self.c_in)
        dz = (dyf @ w_t).reshape(b, self.length, self.k, self.c_in)
        dxp = np.zeros((b, lp, self.c_in), dtype=dy.dtype)
        for j in range(self.k):
            dxp[:, j:j + self.length] += dz[:, :, j, :]
        return dxp[:, self.pad_l:self.pad_l + self.length], {"W": dw, "b": dyf.sum(axis=0)}


class Dense(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        self.n_in = in_shape[0]
        self.n_out = spec.args["units"]
        self.out_shape = (self.n_out,)

    def init(self, rng, dtype):
        return {"W": _glorot(rng, (self.n_in, self.n_out), self.n_in, self.n_out, dtype),
                "b": np.zeros(self.n_out, dtype)}

    def forward(self, p, buf, x, train):
        return x @ p["W"] + p["b"], x

    def backward(self, p, x, dy):
        return dy @ p["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}


class ReLU(Layer):
    def forward(self, p, buf, x, train):
        mask = x > 0
        return x * mask, mask

    def backward(self, p, mask, dy):
        return dy * mask, {}


class MaxPool1D(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        length, c = in_shape
        self.w = min(spec.args["width"], length)
        self.out_shape = (length // self.w, c)

    def forward(self, p, buf, x, train):
        b, length, c = x.shape
        lo = self.out_shape[0]
        xr = x[:, :lo * self.w].reshape(b, lo, self.w, c)
        arg = xr.argmax(axis=2)
        out = np.take_along_axis(xr, arg[:, :, None], axis=2)[:, :, 0]
        return out, (arg, x.shape)

    def backward(self, p, cache, dy):
        arg, shape = cache
        b, length, c = shape
        lo = self.out_shape[0]
        dxr = np.zeros((b, lo, self.w, c), dtype=dy.dtype)
        np.put_along_axis(dxr, arg[:, :, None], dy[:, :, None], axis=2)
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :lo * self.w] = dxr.reshape(b, lo * self.w, c)
        return dx, {}


class BatchNorm(Layer):
    """Per-channel normalization over the last axis, statistics pooled over the rest."""

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        self.c = in_shape[-1]

    def init(self, rng, dtype):
        return {"gamma": np.ones(self.c, dtype), "beta": np.zeros(self.c, dtype)}

    def init_buffers(self, dtype):
        return {"running_mean": np.zeros(self.c, dtype), "running_var": np.ones(self.c, dtype)}

    def forward(self, p, buf, x, train):
        if train:
            flat = x.reshape(-1, self.c)
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
        else:
            mean, var = buf["running_mean"], buf["running_var"]
        inv = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        xhat = (x - mean) * inv
        return xhat * p["gamma"] + p["beta"], (xhat, inv, mean, var)

    def backward(self, p, cache, dy):
        xhat, inv, _, _ = cache
        shape = dy.shape
        dyf = dy.reshape(-1, self.c)
        xf = xhat.reshape(-1, self.c)
        m = dyf.shape[0]
        grads = {"gamma": (dyf * xf).sum(axis=0), "beta": dyf.sum(axis=0)}
        dxhat = dyf * p["gamma"]
        dx = (inv / m) * (m * dxhat - dxhat.sum(axis=0) - xf * (dxhat * xf).sum(axis=0))
        return dx.reshape(shape), grads


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LSTMLayer(Layer):
    """Runs an LSTM over the length axis and returns the last hidden state."""

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(in_shape) != 2:
            raise ShapeError(f"lstm expects (length, channels), got {in_shape}")
        self.length, self.c_in = in_shape
        self.h = spec.args["hidden"]
        self.out_shape = (self.h,)

    def init(self, rng, dtype):
        h = self.h
        wx = _glorot(rng, (self.c_in, 4 * h), self.c_in, 4 * h, dtype)
        q, _ = np.linalg.qr(rng.standard_normal((4 * h, h)))
        b = np.zeros(4 * h, dtype)
        b[h:2 * h] = 1.0  # forget gate
        return {"Wx": wx, "Wh": q.T.astype(dtype), "b": b}

    def forward(self, p, buf, x, train):
        bsz = x.shape[0]
        h = self.h
        xs = np.ascontiguousarray(x.transpose(1, 0, 2))  # L,B,C
        zx = (xs.reshape(-1, self.c_in) @ p["Wx"] + p["b"]).reshape(self.length, bsz, 4 * h)
        hs = np.zeros((self.length + 1, bsz, h), dtype=x.dtype)
        cs = np.zeros((self.length + 1, bsz, h), dtype=x.dtype)
        gates = np.empty((self.length, bsz, 4 * h), dtype=x.dtype)
        for t in range(self.length):
            z = zx[t] + hs[t] @ p["Wh"]
            g = np.empty_like(z)
            g[:, :2 * h] = _sigmoid(z[:, :2 * h])
            g[:, 2 * h:3 * h] = np.tanh(z[:, 2 * h:3 * h])
            g[:, 3 * h:] = _sigmoid(z[:, 3 * h:])
            gates[t] = g
            cs[t + 1] = g[:, h:2 * h] * cs[t] + g[:, :h] * g[:, 2 * h:3 * h]
            hs[t + 1] = g[:, 3 * h:] * np.tanh(cs[t + 1])
        return hs[-1], (xs, hs, cs, gates)

    def backward(self, p, cache, dy):
        xs, hs, cs, gates = cache
        h = self.h
        dwh = np.zeros_like(p["Wh"])
        dz_all = np.empty_like(gates)
        dh = dy
        dc = np.zeros_like(dy)
        for t in range(self.length - 1, -1, -1):
            g = gates[t]
            i, f, gg, o = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
            tc = np.tanh(cs[t + 1])
            dc = dc + dh * o * (1 - tc**2)
            dz = dz_all[t]
            dz[:, :h] = dc * gg * i * (1 - i)
            dz[:, h:2 * h] = dc * cs[t] * f * (1 - f)
            dz[:, 2 * h:3 * h] = dc * i * (1 - gg**2)
            dz[:, 3 * h:] = dh * tc * o * (1 - o)
            dwh += hs[t].T @ dz
            dh = dz @ p["Wh"].T
            dc = dc * f
        length, bsz, c = xs.shape
        flat_dz = dz_all.reshape(length * bsz, 4 * h)
        dwx = xs.reshape(length * bsz, c).T @ flat_dz
        dxs = (flat_dz @ p["Wx"].T).reshape(length, bsz, c)
        return dxs.transpose(1, 0, 2), {"Wx": dwx, "Wh": dwh, "b": flat_dz.sum(axis=0)}


class Flatten(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, p, buf, x, train):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, p, shape, dy):
        return dy.reshape(shape), {}


class Softmax(Layer):
    def forward(self, p, buf, x, train):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=1, keepdims=True)
        return out, out

    def backward(self, p, out, dy):
        return out * (dy - (dy * out).sum(axis=1, keepdims=True)), {}


class Residual(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        self.layers = build_layers(spec.children, in_shape)
        inner = self.layers[-1].out_shape if self.layers else in_shape
        if inner != in_shape:
            raise ShapeError(f"residual branch maps {in_shape} to {inner}")

    def forward(self, p, buf, x, train):
        y = x
        caches = []
        for j, layer in enumerate(self.layers):
            y, c = layer.forward(_sub(p, j), _sub(buf, j), y, train)
            caches.append(c)
        return x + y, caches

    def backward(self, p, caches, dy):
        grads = {}
        g = dy
        for j in range(len(self.layers) - 1, -1, -1):
            g, gj = self.layers[j].backward(_sub(p, j), caches[j], g)
            grads.update({f"{j}.{k}": v for k, v in gj.items()})
        return dy + g, grads


def _sub(store: dict, j: int) -> dict:
    prefix = f"{j}."
    return {k[len(prefix):]: v for k, v in store.items() if k.startswith(prefix)}


LAYER_KINDS = {
    "conv1d": Conv1D,
    "dense": Dense,
    "relu": ReLU,
    "maxpool1d": MaxPool1D,
    "batchnorm": BatchNorm,
    "lstm_cell_layer": LSTMLayer,
    "flatten": Flatten,
    "softmax": Softmax,
    "residual": Residual,
}


def build_layers(specs: Sequence[LayerSpec], in_shape: tuple[int, ...]) -> list[Layer]:
    layers = []
    shape = tuple(in_shape)
    for spec in specs:
        try:
            cls = LAYER_KINDS[spec.kind]
        except KeyError:
            raise ValueError(f"unknown layer kind {spec.kind!r}") from None
        layer = cls(spec, shape)
        layers.append(layer)
        shape = layer.out_shape
    return layers


def _init_layer(layer: Layer, rng, dtype) -> tuple[dict, dict]:
    if isinstance(layer, Residual):
        params, bufs = {}, {}
        for j, sub in enumerate(layer.layers):
            p, b = _init_layer(sub, rng, dtype)
            params.update({f"{j}.{k}": v for k, v in p.items()})
            bufs.update({f"{j}.{k}": v for k, v in b.items()})
        return params, bufs
    return layer.init(rng, dtype), layer.init_buffers(dtype)


# --------------------------------------------------------------------------
# model


class Model:
    """Architecture plus a flat parameter store keyed ``"<layer>.<tensor>"``.

    Batchnorm running statistics live in ``buffers`` under the same naming.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: tuple[int, ...], seed: int = 0,
                 dtype=np.float32, params: dict | None = None, buffers: dict | None = None):
        self.specs = tuple(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(self.specs, self.input_shape[::-1])
        if not self.layers or self.specs[-1].kind != "softmax":
            raise ValueError("the last layer must be softmax")
        rng = np.random.default_rng(seed)
        init_p, init_b = {}, {}
        for i, layer in enumerate(self.layers):
            p, b = _init_layer(layer, rng, self.dtype)
            init_p.update({f"{i}.{k}": v for k, v in p.items()})
            init_b.update({f"{i}.{k}": v for k, v in b.items()})
        self.params = init_p if params is None else {k: np.asarray(v) for k, v in params.items()}
        self.buffers = init_b if buffers is None else {k: np.asarray(v) for k, v in buffers.items()}
        if set(self.params) != set(init_p) or any(self.params[k].shape != init_p[k].shape for k in init_p):
            raise ShapeError("parameter store does not match the architecture")

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.layers[-1].out_shape

    def astype(self, dtype) -> "Model":
        return Model(self.specs, self.input_shape, dtype=dtype,
                     params={k: v.astype(dtype) for k, v in self.params.items()},
                     buffers={k: v.astype(dtype) for k, v in self.buffers.items()})

    def copy(self) -> "Model":
        return Model(self.specs, self.input_shape, dtype=self.dtype,
                     params=copy.deepcopy(self.params), buffers=copy.deepcopy(self.buffers))

    def _check(self, x):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {x.shape[1:]} does not match model input {self.input_shape}")

    def run(self, x, train=False, params=None):
        """Forward pass returning ``(probabilities, caches)``."""
        params = self.params if params is None else params
        x = np.asarray(x, dtype=self.dtype)
        self._check(x)
        x = np.ascontiguousarray(x.transpose(0, 2, 1))  # internal layout is (B, L, C)
        caches = []
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(_sub(params, i), _sub(self.buffers, i), x, train)
            caches.append(c)
        return x, caches

    def backprop(self, caches, dlast, params=None) -> dict[str, np.ndarray]:
        """Gradient store for ``dlast``, the gradient w.r.t. the pre-softmax logits."""
        params = self.params if params is None else params
        grads = {}
        g = dlast
        for i in range(len(self.layers) - 2, -1, -1):
            g, gi = self.layers[i].backward(_sub(params, i), caches[i], g)
            grads.update({f"{i}.{k}": v for k, v in gi.items()})
        return grads

    def update_running_stats(self, caches) -> None:
        def walk(layers, caches, prefix):
            for j, (layer, cache) in enumerate(zip(layers, caches)):
                if isinstance(layer, BatchNorm):
                    _, _, mean, var = cache
                    km, kv = f"{prefix}{j}.running_mean", f"{prefix}{j}.running_var"
                    self.buffers[km] = (BN_MOMENTUM * self.buffers[km] + (1 - BN_MOMENTUM) * mean).astype(self.dtype)
                    self.buffers[kv] = (BN_MOMENTUM * self.buffers[kv] + (1 - BN_MOMENTUM) * var).astype(self.dtype)
                elif isinstance(layer, Residual):
                    walk(layer.layers, cache, f"{prefix}{j}.")
        walk(self.layers, caches, "")


def forward(model: Model, batch, chunk: int = 4096) -> np.ndarray:
    """Inference-mode class probabilities, ``(B, n_classes)``."""
    batch = np.asarray(batch)
    if batch.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match model input {model.input_shape}")
    if len(batch) <= chunk:
        return model.run(batch)[0]
    return np.concatenate([model.run(batch[i:i + chunk])[0] for i in range(0, len(batch), chunk)])


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_CLIP))))


def loss_and_grad(model: Model, batch, labels, params: dict | None = None, train: bool = True):
    """Mean cross-entropy and its gradient for every parameter tensor.

    Batchnorm layers use batch statistics when ``train`` is set. The caches
    are returned as a third element so callers can update running statistics.
    """
    labels = np.asarray(labels)
    n_cls = model.output_shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    probs, caches = model.run(batch, train=train, params=params)
    loss = cross_entropy(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    grads = model.backprop(caches, dlogits.astype(model.dtype), params=params)
    return loss, grads, caches


# --------------------------------------------------------------------------
# optimizer and training


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("batch_size, max_epochs and patience must be non-negative")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> tuple[dict, AdamState]:
    if set(grads) - set(params):
        raise ShapeError(f"gradients for unknown tensors: {sorted(set(grads) - set(params))}")
    t = state.t + 1
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    c1 = 1 - cfg.beta1**t
    c2 = 1 - cfg.beta2**t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter has {p.shape}")
        mk = cfg.beta1 * m.get(k, 0.0) + (1 - cfg.beta1) * g
        vk = cfg.beta2 * v.get(k, 0.0) + (1 - cfg.beta2) * g * g
        m[k], v[k] = mk, vk
        step = cfg.learning_rate * (mk / c1) / (np.sqrt(vk / c2) + cfg.eps)
        new_params[k] = (p - step).astype(p.dtype)
    return new_params, AdamState(t, m, v)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.epoch_seconds))


def train(arch: Sequence[LayerSpec], x_train, y_train, x_val, y_val, cfg: TrainConfig,
          input_shape: tuple[int, ...] | None = None) -> tuple[Model, History]:
    """Adam with early stopping on validation loss; returns the best snapshot."""
    x_train = np.asarray(x_train, dtype=np.float32)
    y_train = np.asarray(y_train)
    if len(x_train) == 0:
        raise ValueError("training split is empty")
    shape = tuple(input_shape) if input_shape is not None else x_train.shape[1:]
    model = Model(arch, shape, seed=cfg.seed)
    hist = History()
    if cfg.max_epochs == 0:
        return model, hist
    has_val = x_val is not None and len(x_val) > 0
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState()
    best = (math.inf, model.copy())
    stale = 0
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_train))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads, caches = loss_and_grad(model, x_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            model.params, state = adam_step(model.params, grads, state, cfg)
            model.update_running_stats(caches)
            losses.append(loss * len(idx))
        hist.train_loss.append(float(sum(losses) / len(order)))
        if has_val:
            probs = forward(model, x_val)
            vloss = cross_entropy(probs, np.asarray(y_val))
            hist.val_acc.append(float(np.mean(probs.argmax(axis=1) == y_val)))
        else:
            vloss = hist.train_loss[-1]
        if not math.isfinite(vloss):
            raise TrainingDiverged(epoch, vloss)
        hist.val_loss.append(vloss)
        hist.epoch_seconds.append(time.perf_counter() - t0)
        if vloss < best[0]:
            best = (vloss, model.copy())
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best[1], hist


def evaluate(model: Model, frames, labels, masked_indices=()) -> float:
    """Accuracy with both I and Q of every masked sample index set to zero."""
    frames = np.asarray(frames)
    idx = np.asarray(sorted(set(int(i) for i in masked_indices)), dtype=np.int64)
    d = frames.shape[-1]
    if idx.size and (idx[0] < 0 or idx[-1] >= d):
        raise IndexError(f"masked index outside [0, {d})")
    if len(frames) == 0:
        return 0.0
    x = frames.copy()
    x[:, :, idx] = 0
    return float(np.mean(forward(model, x).argmax(axis=1) == np.asarray(labels)))


# --------------------------------------------------------------------------
# checkpoints

MSNN_MAGIC = b"MSNN"
MSNN_VERSION = 1


def save_checkpoint(model: Model) -> bytes:
    arch = json.dumps({"input_shape": list(model.input_shape),
                       "layers": [s.to_json() for s in model.specs]}, sort_keys=True).encode()
    out = [MSNN_MAGIC, struct.pack("<I", MSNN_VERSION), struct.pack("<I", len(arch)), arch]
    tensors = [(k, model.params[k]) for k in sorted(model.params)]
    tensors += [(k, model.buffers[k]) for k in sorted(model.buffers)]
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode()
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def load_checkpoint(blob: bytes) -> Model:
    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"truncated checkpoint at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4) != MSNN_MAGIC:
        raise ValueError("not an MSNN checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != MSNN_VERSION:
        raise ValueError(f"unsupported MSNN version {version}")
    (alen,) = struct.unpack("<I", take(4))
    arch = json.loads(take(alen))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode()
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    specs = [LayerSpec.from_json(s) for s in arch["layers"]]
    probe = Model(specs, tuple(arch["input_shape"]))
    params = {k: tensors[k] for k in probe.params}
    buffers = {k: tensors[k] for k in probe.buffers}
    return Model(specs, tuple(arch["input_shape"]), params=params, buffers=buffers)
