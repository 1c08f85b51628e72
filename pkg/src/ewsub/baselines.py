"""Conventional subsamplers and filter/wrapper feature-selection baselines.

Frames are ``(N, 2, d)``; flattened features put the in-phase row first, so
feature ``j`` is I of sample ``j`` and feature ``d + j`` is its Q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fastmask
from . import neurokit as nk


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")


def _top_k(scores: np.ndarray, k: int, higher_is_better: bool = True) -> list[int]:
    """Indices of the ``k`` best scores, ties to the lower index, returned ascending."""
    key = -scores if higher_is_better else scores
    order = np.argsort(key, kind="stable")
    return sorted(int(i) for i in order[:k])


def uniform_indices(d: int, k: int) -> list[int]:
    _check_k(k, d)
    return [j * d // k for j in range(k)]


def random_indices(d: int, k: int, seed: int) -> list[int]:
    _check_k(k, d)
    return sorted(int(i) for i in np.random.default_rng(seed).choice(d, size=k, replace=False))


def magnitude_indices(frame, k: int) -> list[int]:
    """Top-``k`` samples of one frame by ``sqrt(I^2 + Q^2)``, ascending."""
    frame = np.asarray(frame)
    _check_k(k, frame.shape[-1])
    return _top_k(np.hypot(frame[0], frame[1]), k)


def magnitude_reduce(frames, k: int) -> np.ndarray:
    """Per-frame magnitude selection applied to a batch, ``(N, 2, k)``."""
    frames = np.asarray(frames)
    _check_k(k, frames.shape[-1])
    mag = np.hypot(frames[:, 0], frames[:, 1])
    order = np.argsort(-mag, axis=1, kind="stable")[:, :k]
    order.sort(axis=1)
    return np.take_along_axis(frames, order[:, None, :], axis=2)


# --------------------------------------------------------------------------
# principal-component subsampling


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray          # (F,)
    components: np.ndarray    # (F, m), orthonormal columns
    eigenvalues: np.ndarray   # (m,), descending, >= 0
    rank_safe: bool = True    # False when fitted on fewer frames than features

    def transform(self, features) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) @ self.components

    def inverse(self, scores) -> np.ndarray:
        return np.asarray(scores) @ self.components.T + self.mean


def fit_pca(features) -> PcaModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("PCA needs at least two feature rows")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False).reshape(x.shape[1], x.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return PcaModel(mean, vecs[:, order], np.clip(vals[order], 0.0, None), len(x) >= x.shape[1])


def pcs_sample_scores(pca: PcaModel, d: int) -> np.ndarray:
    """Eigenvalue-weighted absolute loadings, summed over each sample's I and Q."""
    weighted = (np.abs(pca.components) * pca.eigenvalues[None, :]).sum(axis=1)
    return weighted[:d] + weighted[d:]


def pcs_indices(frames, k: int) -> tuple[PcaModel, list[int]]:
    frames = np.asarray(frames)
    if frames.ndim != 3 or len(frames) < 2:
        raise ValueError("PCS needs at least two (2, d) frames")
    d = frames.shape[-1]
    _check_k(k, d)
    pca = fit_pca(frames.reshape(len(frames), -1))
    return pca, _top_k(pcs_sample_scores(pca, d), k)


# --------------------------------------------------------------------------
# filter scores


@dataclass(frozen=True)
class FeatureScoreTable:
    scores: np.ndarray        # (2d,) per real feature
    higher_is_better: bool
    flagged: np.ndarray       # features whose score is degenerate
    method: str = ""

    @property
    def d(self) -> int:
        return self.scores.shape[0] // 2

    @property
    def sample_scores(self) -> np.ndarray:
        return self.scores[:self.d] + self.scores[self.d:]

    def top_k(self, k: int) -> list[int]:
        _check_k(k, self.d)
        return _top_k(self.sample_scores, k, self.higher_is_better)


def fisher_scores(features, labels) -> np.ndarray:
    """``sum_y n_y (mu_y - mu)^2 / sum_y n_y var_y`` per feature (higher is better)."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("the Fisher score needs at least two classes")
    mu = x.mean(axis=0)
    num = np.zeros(x.shape[1])
    den = np.zeros(x.shape[1])
    for c, n in zip(classes, counts):
        xc = x[y == c]
        num += n * (xc.mean(axis=0) - mu) ** 2
        den += n * xc.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out[(den == 0) & (num == 0)] = 0.0
    out[(den == 0) & (num > 0)] = np.inf
    return out


def laplacian_scores(features, knn: int = 5, max_rows: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Laplacian score per feature (lower is better) and a flag for constant features.

    The similarity graph joins each row to its ``knn`` nearest neighbours
    (symmetrized) with heat-kernel weights ``exp(-dist^2 / (2 sigma^2))``,
    ``sigma`` being the median pairwise distance. At most ``max_rows`` rows
    are used. Constant features have no defined score; they get ``inf``.
    """
    x = np.asarray(features, dtype=np.float64)
    if len(x) > max_rows:
        x = x[np.sort(np.random.default_rng(seed).choice(len(x), max_rows, replace=False))]
    n = len(x)
    if n < 2:
        raise ValueError("the Laplacian score needs at least two rows")
    sq = (x * x).sum(axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    np.fill_diagonal(dist2, 0.0)
    iu = np.triu_indices(n, 1)
    sigma = float(np.median(np.sqrt(dist2[iu])))
    sigma = sigma if sigma > 0 else 1.0
    kk = min(knn, n - 1)
    masked = dist2 + np.diag(np.full(n, np.inf))
    nbr = np.argpartition(masked, kk - 1, axis=1)[:, :kk]
    adj = np.zeros((n, n), dtype=bool)
    adj[np.repeat(np.arange(n), kk), nbr.ravel()] = True
    adj |= adj.T
    s = np.where(adj, np.exp(-dist2 / (2 * sigma**2)), 0.0)
    deg = s.sum(axis=1)
    centred = x - (deg @ x) / deg.sum()
    lap = deg[:, None] * centred - s @ centred           # L f for every feature column
    num = (centred * lap).sum(axis=0)
    den = (deg[:, None] * centred**2).sum(axis=0)
    flagged = den <= 1e-12 * max(1.0, float(den.max(initial=0.0)))
    out = np.full(x.shape[1], np.inf)
    out[~flagged] = num[~flagged] / den[~flagged]
    return out, flagged


def filter_scores(frames, labels=None, method: str = "fisher", **kw) -> FeatureScoreTable:
    frames = np.asarray(frames)
    feats = frames.reshape(len(frames), -1)
    if method == "fisher":
        if labels is None:
            raise ValueError("the Fisher score needs labels")
        sc = fisher_scores(feats, labels)
        return FeatureScoreTable(sc, True, ~np.isfinite(sc), "fisher")
    if method == "laplacian":
        sc, flagged = laplacian_scores(feats, **kw)
        return FeatureScoreTable(sc, False, flagged, "laplacian")
    raise ValueError(f"unknown filter method {method!r}")


# --------------------------------------------------------------------------
# feature quality index


def fqi_scores(model, frames) -> np.ndarray:
    """Mean squared change of the class probabilities when each sample is zeroed.

    ``model`` is a :class:`~ewsub.neurokit.Model`, anything exposing one as
    ``.model`` (a ranker), or any object with ``predict_proba``.
    """
    frames = np.asarray(frames, dtype=np.float32)
    d = frames.shape[-1]
    net = model if isinstance(model, nk.Model) else getattr(model, "model", None)
    out = np.zeros(d)
    if len(frames) == 0:
        return out
    if isinstance(net, nk.Model):
        ev = fastmask.SingleRemovalEvaluator(net, frames, np.zeros(len(frames), dtype=np.int64))
        base = ev.base_probs.astype(np.float64)
        for s in range(0, d, 16):
            probs = ev.probabilities(range(s, min(d, s + 16))).astype(np.float64)
            out[s:s + len(probs)] = ((probs - base[None]) ** 2).sum(axis=2).mean(axis=1)
        return out
    base = np.asarray(model.predict_proba(frames), dtype=np.float64)
    for j in range(d):
        x = frames.copy()
        x[:, :, j] = 0
        out[j] = float(((np.asarray(model.predict_proba(x)) - base) ** 2).sum(axis=1).mean())
    return out


def fqi_indices(model, frames, k: int) -> list[int]:
    scores = fqi_scores(model, frames)
    _check_k(k, len(scores))
    return _top_k(scores, k)
