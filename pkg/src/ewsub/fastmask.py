"""Fast accuracies for "base mask plus one more zeroed sample".

A wrapper ranking pass scores every candidate ``j`` by the accuracy of the
model with ``base_mask | {j}`` zeroed. Each of those inputs differs from
the base input in a single sample, so for the position-local front of a
network (convolutions, batchnorm, ReLU, residual units, max-pooling) only
a window around ``j`` changes. Layer by layer, only that dirty window is
recomputed, reading its context from cached base activations, and the
result is spliced into the global part of the network:

* flatten followed by dense: the dense output moves by
  ``delta_patch @ W[rows of the patch]``;
* LSTM: the recurrence restarts from the cached base state just before
  the first changed step.

Architectures outside this pattern fall back to full stacked evaluation.
The results match full evaluation up to float rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import neurokit as nk

_LOCAL = (nk.Conv1D, nk.ReLU, nk.BatchNorm, nk.MaxPool1D, nk.Residual)


@dataclass
class _Plan:
    prefix: list[int]      # indices of position-local layers
    head: int              # index of the first global layer (dense after flatten, or lstm)
    kind: str              # "dense" or "lstm"
    flatten: int | None    # index of the flatten layer when kind == "dense"


def _is_local(layer) -> bool:
    if isinstance(layer, nk.Residual):
        return all(isinstance(c, _LOCAL) and not isinstance(c, (nk.MaxPool1D, nk.Residual))
                   for c in layer.layers)
    return isinstance(layer, _LOCAL)


def plan_for(model: nk.Model) -> _Plan | None:
    """Split a model into local prefix and global head, or ``None`` if unsupported."""
    layers = model.layers
    i = 0
    while i < len(layers) and _is_local(layers[i]):
        i += 1
    if i < len(layers) and isinstance(layers[i], nk.LSTMLayer):
        return _Plan(list(range(i)), i, "lstm", None)
    if i + 1 < len(layers) and isinstance(layers[i], nk.Flatten) and isinstance(layers[i + 1], nk.Dense):
        return _Plan(list(range(i)), i + 1, "dense", i)
    return None


# --------------------------------------------------------------------------
# dirty-window propagation


def _expand(patch, lo, ext_l, ext_r, base_pad, margin, length):
    """Widen ``patch`` (n, B, W, C) starting at ``lo`` by base context on both sides.

    Positions outside ``[0, length)`` are zeroed, matching the zero padding
    the full network applies at layer boundaries.
    """
    n, b, w, c = patch.shape
    width = w + ext_l + ext_r
    pos = lo[:, None] - ext_l + np.arange(width)[None, :]
    out = base_pad[:, pos + margin].transpose(1, 0, 2, 3).copy()   # (n, B, width, C)
    out[:, :, ext_l:ext_l + w] = patch
    bad = (pos < 0) | (pos >= length)
    if bad.any():
        out[np.broadcast_to(bad[:, None, :], out.shape[:3])] = 0
    return out, lo - ext_l


def _conv_valid(layer: nk.Conv1D, p, x):
    n, b, w, c = x.shape
    wo = w - layer.k + 1
    w_all = p["W"].transpose(1, 0, 2).reshape(c, layer.k * layer.c_out)
    y = (x.reshape(n * b * w, c) @ w_all).reshape(n * b, w, layer.k, layer.c_out)
    out = y[:, 0:wo, 0, :] + p["b"]
    for j in range(1, layer.k):
        out += y[:, j:j + wo, j, :]
    return out.reshape(n, b, wo, layer.c_out)


class _Tape:
    """Base-pass inputs of every local layer, zero-padded along the length axis."""

    def __init__(self, margin: int):
        self.margin = margin
        self.inputs: dict[tuple, np.ndarray] = {}

    def keep(self, key, x):
        b, length, c = x.shape
        pad = np.zeros((b, length + 2 * self.margin, c), dtype=x.dtype)
        pad[:, self.margin:self.margin + length] = x
        self.inputs[key] = pad


def _base_forward(layer, p, buf, x, key, tape: _Tape):
    tape.keep(key, x)
    if isinstance(layer, nk.Residual):
        y = x
        for j, child in enumerate(layer.layers):
            y = _base_forward(child, nk._sub(p, j), nk._sub(buf, j), y, key + (j,), tape)
        return x + y
    return layer.forward(p, buf, x, False)[0]


def _dirty_forward(layer, p, buf, patch, lo, key, tape: _Tape):
    """Recompute the dirty window of one local layer; returns (patch, lo)."""
    base = tape.inputs[key]
    length = base.shape[1] - 2 * tape.margin
    if isinstance(layer, nk.Conv1D):
        x, start = _expand(patch, lo, layer.k - 1, layer.k - 1, base, tape.margin, length)
        return _conv_valid(layer, p, x), start + layer.pad_l
    if isinstance(layer, nk.ReLU):
        return np.maximum(patch, 0), lo
    if isinstance(layer, nk.BatchNorm):
        return layer.forward(p, buf, patch, False)[0], lo
    if isinstance(layer, nk.Residual):
        inner, ilo = patch, lo
        for j, child in enumerate(layer.layers):
            inner, ilo = _dirty_forward(child, nk._sub(p, j), nk._sub(buf, j), inner, ilo, key + (j,), tape)
        ext_l = int(lo[0] - ilo[0])
        ext_r = inner.shape[2] - patch.shape[2] - ext_l
        skip, _ = _expand(patch, lo, ext_l, ext_r, base, tape.margin, length)
        return skip + inner, ilo
    if isinstance(layer, nk.MaxPool1D):
        w = layer.w
        hi = lo + patch.shape[2] - 1
        # lo mod w is shared by every candidate in a group, so extensions are uniform
        ext_l = int(lo[0] - (lo[0] // w) * w)
        ext_r = int((hi[0] // w) * w + w - 1 - hi[0])
        x, start = _expand(patch, lo, ext_l, ext_r, base, tape.margin, length)
        n, b, width, c = x.shape
        return x.reshape(n, b, width // w, w, c).max(axis=3), start // w
    raise TypeError(type(layer).__name__)  # pragma: no cover - guarded by plan_for


def _reach(layers) -> int:
    """Upper bound on how far a dirty window can extend past the sequence ends."""
    total = 0
    for layer in layers:
        if isinstance(layer, nk.Residual):
            total += _reach(layer.layers)
        elif isinstance(layer, nk.Conv1D):
            total += layer.k
        elif isinstance(layer, nk.MaxPool1D):
            total += layer.w
    return total


def _pool_alignment(layers) -> int:
    a = 1
    for layer in layers:
        if isinstance(layer, nk.MaxPool1D):
            a *= layer.w
    return a


# --------------------------------------------------------------------------
# evaluator


class SingleRemovalEvaluator:
    """Accuracies of ``base_mask | {j}`` for many ``j``, sharing the base pass."""

    def __init__(self, model: nk.Model, x, y, base_mask: Sequence[int] = (), rows_per_chunk: int = 16384):
        self.model = model
        self.y = np.asarray(y)
        x = np.array(x, dtype=model.dtype, copy=True)
        d = x.shape[-1]
        base = sorted(set(int(i) for i in base_mask))
        if base and (base[0] < 0 or base[-1] >= d):
            raise IndexError(f"masked index outside [0, {d})")
        x[:, :, base] = 0
        self.d = d
        self.base_mask = frozenset(base)
        self.x = np.ascontiguousarray(x.transpose(0, 2, 1))  # (B, L, C)
        self.plan = plan_for(model)
        self.rows_per_chunk = rows_per_chunk
        self._base_pass()

    def _p(self, i):
        return nk._sub(self.model.params, i)

    def _b(self, i):
        return nk._sub(self.model.buffers, i)

    def _base_pass(self):
        model = self.model
        self.base_probs = model.run(self.x.transpose(0, 2, 1))[0]
        if self.plan is None or len(self.y) == 0:
            return
        self.tape = _Tape(margin=self.d + _reach(model.layers[i] for i in self.plan.prefix))
        h = self.x
        for i in self.plan.prefix:
            h = _base_forward(model.layers[i], self._p(i), self._b(i), h, (i,), self.tape)
        self.feat = h  # (B, Lf, C) prefix output
        head = model.layers[self.plan.head]
        p = self._p(self.plan.head)
        if self.plan.kind == "dense":
            self.head_out = h.reshape(len(h), -1) @ p["W"] + p["b"]
        else:
            out, (xs, hs, cs, _) = head.forward(p, {}, h, False)
            self.zx = (xs.reshape(-1, xs.shape[2]) @ p["Wx"] + p["b"]).reshape(xs.shape[0], xs.shape[1], -1)
            self.hs, self.cs = hs, cs
            self.head_out = out
        self.align = _pool_alignment([model.layers[i] for i in self.plan.prefix])

    def _tail(self, z):
        for i in range(self.plan.head + 1, len(self.model.layers)):
            z, _ = self.model.layers[i].forward(self._p(i), self._b(i), z, False)
        return z

    @property
    def base_accuracy(self) -> float:
        if len(self.y) == 0:
            return 0.0
        return float(np.mean(self.base_probs.argmax(axis=1) == self.y))

    def probabilities(self, candidates: Sequence[int]) -> np.ndarray:
        """Class probabilities ``(n_candidates, B, n_classes)``."""
        cand = self._check(candidates)
        out = np.empty((len(cand), len(self.y), self.base_probs.shape[1]), dtype=self.base_probs.dtype)
        if len(cand) == 0 or len(self.y) == 0:
            return out
        per = max(1, self.rows_per_chunk // len(self.y))
        if self.plan is None:
            for s in range(0, len(cand), per):
                out[s:s + per] = self._stacked(cand[s:s + per])
            return out
        for r in range(self.align):
            sel = np.flatnonzero(cand % self.align == r)
            for s in range(0, len(sel), per):
                idx = sel[s:s + per]
                out[idx] = self._group(cand[idx])
        return out

    def accuracies(self, candidates: Sequence[int]) -> np.ndarray:
        cand = self._check(candidates)
        if len(self.y) == 0:
            return np.zeros(len(cand))
        out = np.empty(len(cand))
        per = max(1, self.rows_per_chunk // len(self.y))
        for s in range(0, len(cand), per):
            probs = self.probabilities(cand[s:s + per])
            out[s:s + per] = (probs.argmax(axis=2) == self.y).mean(axis=1)
        return out

    def _check(self, candidates):
        cand = np.asarray(list(candidates), dtype=np.int64).reshape(-1)
        if cand.size and (cand.min() < 0 or cand.max() >= self.d):
            raise IndexError(f"candidate index outside [0, {self.d})")
        return cand

    def _stacked(self, cand):
        b = len(self.y)
        base = self.x.transpose(0, 2, 1)
        stacked = np.repeat(base[None], len(cand), axis=0)
        stacked[np.arange(len(cand)), :, :, cand] = 0
        probs = self.model.run(stacked.reshape(-1, *base.shape[1:]))[0]
        return probs.reshape(len(cand), b, -1)

    def _group(self, cand):
        model = self.model
        n, b = len(cand), len(self.y)
        patch = np.zeros((n, b, 1, self.x.shape[2]), dtype=self.x.dtype)  # the zeroed sample
        lo = cand.copy()
        for i in self.plan.prefix:
            patch, lo = _dirty_forward(model.layers[i], self._p(i), self._b(i), patch, lo, (i,), self.tape)
        length = self.feat.shape[1]
        hi = lo + patch.shape[2] - 1
        result = np.broadcast_to(self.base_probs, (n,) + self.base_probs.shape).copy()
        live = np.flatnonzero(np.maximum(lo, 0) <= np.minimum(hi, length - 1))
        if live.size == 0:
            return result
        patch, lo, hi = patch[live], lo[live], hi[live]
        if self.plan.kind == "dense":
            z = self._dense_delta(patch, lo)
        else:
            z = self._lstm_resume(patch, lo, np.maximum(lo, 0), np.minimum(hi, length - 1))
        result[live] = self._tail(z.reshape(len(live) * b, -1)).reshape(len(live), b, -1)
        return result

    def _dense_delta(self, patch, lo):
        """Dense pre-activation after replacing the window starting at ``lo`` with ``patch``."""
        n, b, span, c = patch.shape
        lf = self.feat.shape[1]
        if not hasattr(self, "_feat_pad") or self._feat_pad[0] < span:
            w = self._p(self.plan.head)["W"].reshape(lf, c, -1)
            feat = np.zeros((b, lf + 2 * span, c), dtype=self.feat.dtype)
            feat[:, span:span + lf] = self.feat
            wp = np.zeros((lf + 2 * span, c, w.shape[2]), dtype=w.dtype)
            wp[span:span + lf] = w
            self._feat_pad = (span, feat, wp)
        m, feat, wp = self._feat_pad
        steps = np.arange(span)[None, :]
        rows = lo[:, None] + m + steps                      # (n, span) in padded coordinates
        old = feat[:, rows]                                 # (B, n, span, C)
        delta = patch - old.transpose(1, 0, 2, 3)
        w = wp[rows].reshape(n, span * c, -1)
        return self.head_out[None] + np.matmul(delta.reshape(n, b, span * c), w)

    def _lstm_resume(self, patch, start, lo, hi):
        """Final LSTM state with steps ``[lo, hi]`` taken from ``patch`` (which begins at ``start``)."""
        n, b, width, c = patch.shape
        p = self._p(self.plan.head)
        hdim = self.model.layers[self.plan.head].h
        length = self.zx.shape[0]
        order = np.argsort(lo, kind="stable")
        lo, hi, start, patch = lo[order], hi[order], start[order], patch[order]
        span = int((hi - lo).max()) + 1
        steps = lo[:, None] + np.arange(span)[None, :]
        valid = steps <= hi[:, None]
        off = np.clip(steps - start[:, None], 0, width - 1)
        vals = patch[np.arange(n)[:, None], :, off]        # (n, span, B, C)
        pz = (vals.reshape(-1, c) @ p["Wx"] + p["b"]).reshape(n, span, b, 4 * hdim)
        # one tanh per step: sigmoid(z) = (1 + tanh(z / 2)) / 2 on the i, f, o gates
        scale = np.full(4 * hdim, 0.5, dtype=pz.dtype)
        scale[2 * hdim:3 * hdim] = 1.0
        hstate = np.empty((n, b, hdim), dtype=pz.dtype)
        cstate = np.empty_like(hstate)
        active = 0
        for t in range(int(lo[0]), length):
            while active < n and lo[active] == t:
                hstate[active] = self.hs[t]
                cstate[active] = self.cs[t]
                active += 1
            m = active
            z = (hstate[:m].reshape(m * b, hdim) @ p["Wh"]).reshape(m, b, 4 * hdim)
            k = t - lo[:m]
            inside = (k < span) & valid[np.arange(m), np.minimum(k, span - 1)]
            hit = np.flatnonzero(inside)
            z += self.zx[t]
            if hit.size:
                z[hit] += pz[hit, k[hit]] - self.zx[t]
            g = np.tanh(z * scale)
            g[..., :2 * hdim] = 0.5 * (1 + g[..., :2 * hdim])
            g[..., 3 * hdim:] = 0.5 * (1 + g[..., 3 * hdim:])
            cstate[:m] = g[..., hdim:2 * hdim] * cstate[:m] + g[..., :hdim] * g[..., 2 * hdim:3 * hdim]
            hstate[:m] = g[..., 3 * hdim:] * np.tanh(cstate[:m])
        out = np.empty_like(hstate)
        out[order] = hstate
        return out
