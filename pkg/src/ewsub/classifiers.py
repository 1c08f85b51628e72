"""Ranker architectures, the trained-ranker wrapper, and Gaussian naive Bayes."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import fastmask
from . import neurokit as nk
from .dataset import NUM_CLASSES, LabeledDataset


class ArchKind(str, Enum):
    MiniCNN = "cnn"
    MiniCLDNN = "cldnn"
    MiniResNet = "resnet"


def mini_cnn(n_classes: int = NUM_CLASSES) -> list[nk.LayerSpec]:
    return [nk.conv1d(16, 3), nk.relu(), nk.conv1d(16, 3), nk.relu(), nk.flatten(),
            nk.dense(64), nk.relu(), nk.dense(n_classes), nk.softmax()]


def mini_cldnn(n_classes: int = NUM_CLASSES) -> list[nk.LayerSpec]:
    return [nk.conv1d(16, 3), nk.relu(), nk.lstm(32), nk.dense(n_classes), nk.softmax()]


def _residual_unit(channels: int) -> nk.LayerSpec:
    return nk.residual(nk.conv1d(channels, 5), nk.batchnorm(), nk.relu(),
                       nk.conv1d(channels, 5), nk.batchnorm())


def mini_resnet(n_classes: int = NUM_CLASSES, channels: int = 16) -> list[nk.LayerSpec]:
    """One residual stack (conv, two residual units, max-pool) and a dense head."""
    return [nk.conv1d(channels, 5), nk.batchnorm(), nk.relu(),
            _residual_unit(channels), nk.relu(),
            _residual_unit(channels), nk.relu(),
            nk.maxpool1d(2), nk.flatten(),
            nk.dense(32), nk.relu(), nk.dense(n_classes), nk.softmax()]


ARCHITECTURES = {
    ArchKind.MiniCNN: mini_cnn,
    ArchKind.MiniCLDNN: mini_cldnn,
    ArchKind.MiniResNet: mini_resnet,
}


def architecture(kind: ArchKind | str, n_classes: int = NUM_CLASSES) -> list[nk.LayerSpec]:
    return ARCHITECTURES[ArchKind(kind)](n_classes)


def _mask_batches(n_frames: int, masks: Sequence[Iterable[int]], chunk: int):
    per = max(1, chunk // max(1, n_frames))
    for s in range(0, len(masks), per):
        yield s, masks[s:s + per]


class RankerModel:
    """A trained classifier scored with arbitrary sample indices zeroed."""

    def __init__(self, kind: ArchKind | str, model: nk.Model, val_acc_per_snr: dict[int, float] | None = None,
                 history: nk.History | None = None):
        self.kind = ArchKind(kind)
        self.model = model
        self.val_acc_per_snr = dict(val_acc_per_snr or {})
        self.history = history

    @property
    def d(self) -> int:
        return self.model.input_shape[-1]

    def predict_proba(self, x) -> np.ndarray:
        return nk.forward(self.model, x)

    def accuracy(self, x, y, mask: Iterable[int] = ()) -> float:
        return nk.evaluate(self.model, x, y, mask)

    def accuracies(self, x, y, masks: Sequence[Iterable[int]], chunk: int = 4096) -> np.ndarray:
        """Accuracy for each mask, evaluated in stacked batches."""
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y)
        n = len(x)
        masks = [sorted(set(m)) for m in masks]
        out = np.empty(len(masks))
        if n == 0:
            out[:] = 0.0
            return out
        for s, group in _mask_batches(n, masks, chunk):
            stacked = np.repeat(x[None], len(group), axis=0)
            for j, m in enumerate(group):
                if m:
                    if m[0] < 0 or m[-1] >= x.shape[-1]:
                        raise IndexError("masked index out of range")
                    stacked[j][:, :, m] = 0
            pred = nk.forward(self.model, stacked.reshape(-1, *x.shape[1:]), chunk=chunk).argmax(axis=1)
            out[s:s + len(group)] = (pred.reshape(len(group), n) == y).mean(axis=1)
        return out

    def removal_accuracies(self, x, y, base_mask: Iterable[int], candidates: Sequence[int]) -> np.ndarray:
        """Accuracy with ``base_mask | {j}`` zeroed, for each candidate ``j``.

        Shares one base pass across candidates and only recomputes the
        window each extra zeroed sample can influence.
        """
        ev = fastmask.SingleRemovalEvaluator(self.model, x, y, tuple(base_mask))
        return ev.accuracies(candidates)


def make_ranker(kind: ArchKind | str, fit: LabeledDataset, val: LabeledDataset, cfg: nk.TrainConfig,
                n_classes: int = NUM_CLASSES) -> RankerModel:
    """Train one ranker on SNR-pooled data; record its validation accuracy per SNR."""
    model, hist = nk.train(architecture(kind, n_classes), fit.x, fit.labels, val.x, val.labels, cfg)
    per_snr = {}
    if len(val):
        pred = nk.forward(model, val.x).argmax(axis=1)
        for s in val.snr_values:
            sel = val.snr == s
            per_snr[s] = float(np.mean(pred[sel] == val.labels[sel]))
    return RankerModel(kind, model, per_snr, hist)


# --------------------------------------------------------------------------
# Gaussian naive Bayes

VAR_FLOOR = 1e-6


@dataclass
class GnbModel:
    classes: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray
    var_floor: float = VAR_FLOOR
    floored: np.ndarray = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"classes": self.classes.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "priors": self.priors.tolist(),
                "var_floor": self.var_floor}

    @classmethod
    def from_json(cls, obj: dict) -> "GnbModel":
        return cls(np.asarray(obj["classes"]), np.asarray(obj["means"]), np.asarray(obj["variances"]),
                   np.asarray(obj["priors"]), obj.get("var_floor", VAR_FLOOR))


def gnb_fit(features, labels, var_floor: float = VAR_FLOOR) -> GnbModel:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (N, F) with one label per row")
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < 2):
        raise ValueError(f"classes with fewer than 2 examples: {classes[counts < 2].tolist()}")
    means = np.stack([x[y == c].mean(axis=0) for c in classes])
    raw = np.stack([x[y == c].var(axis=0) for c in classes])
    return GnbModel(classes, means, np.maximum(raw, var_floor), counts / counts.sum(), var_floor, raw < var_floor)


def gnb_log_likelihood(model: GnbModel, x) -> np.ndarray:
    """Joint log-likelihood per class, ``(N, n_classes)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.means.shape[1]:
        raise ValueError(f"expected {model.means.shape[1]} features, got {x.shape[1]}")
    var = model.variances
    ll = -0.5 * (np.log(2 * np.pi * var).sum(axis=1)[None, :]
                 + (((x[:, None, :] - model.means[None]) ** 2) / var[None]).sum(axis=2))
    return ll + np.log(model.priors)[None, :]


def gnb_predict_many(model: GnbModel, x) -> np.ndarray:
    # argmax returns the first maximum: ties go to the lower class index
    return model.classes[gnb_log_likelihood(model, x).argmax(axis=1)]


def gnb_predict(model: GnbModel, x) -> int:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("gnb_predict takes a single feature vector")
    return int(gnb_predict_many(model, x[None])[0])
