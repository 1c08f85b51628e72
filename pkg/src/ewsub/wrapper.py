"""Wrapper subsampling: standardization, the greedy Subsampler Net, and the
three-ranker Holistic Subsampler with its tier partition.

Rankers are duck-typed. Anything with ``accuracy(x, y, mask) -> float``
works; rankers that also provide ``removal_accuracies(x, y, base_mask,
candidates)`` are asked for a whole ranking pass at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .dataset import LabeledDataset

STD_FLOOR = 1e-6


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizeStats:
    """Per real feature z-score statistics, shaped ``(2, d)`` like a frame."""

    mean: np.ndarray
    std: np.ndarray
    flagged: np.ndarray
    std_floor: float = STD_FLOOR

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.shape[1:] != self.mean.shape:
            raise ValueError(f"frames of shape {x.shape[1:]} do not match statistics {self.mean.shape}")
        return ((x - self.mean) / self.std).astype(np.float32)

    def apply_dataset(self, ds: LabeledDataset) -> LabeledDataset:
        meta = dict(ds.meta, standardized=True)
        return LabeledDataset(self.apply(ds.x), ds.labels, ds.snr, meta, ds.clean)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "flagged": self.flagged.tolist(), "std_floor": self.std_floor}

    @classmethod
    def from_json(cls, obj: dict) -> "StandardizeStats":
        return cls(np.asarray(obj["mean"], dtype=np.float32), np.asarray(obj["std"], dtype=np.float32),
                   np.asarray(obj["flagged"], dtype=bool), float(obj.get("std_floor", STD_FLOOR)))


def fit_standardizer(x, std_floor: float = STD_FLOOR) -> StandardizeStats:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or len(x) == 0:
        raise ValueError("need a non-empty (N, 2, d) training block")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flagged = std < std_floor
    return StandardizeStats(mean.astype(np.float32), np.maximum(std, std_floor).astype(np.float32),
                            flagged, std_floor)


def standardize(train: LabeledDataset, std_floor: float = STD_FLOOR) -> tuple[StandardizeStats, LabeledDataset]:
    """Fit statistics on ``train`` and return it standardized.

    Apply the returned statistics to validation and test data with
    :meth:`StandardizeStats.apply_dataset` so nothing leaks from them.
    Constant features get the floor as their scale and are listed in
    ``stats.flagged``.
    """
    stats = fit_standardizer(train.x, std_floor)
    return stats, stats.apply_dataset(train)


# --------------------------------------------------------------------------
# rankers and removal scores


class Ranker(Protocol):
    def accuracy(self, x, y, mask: Iterable[int] = ()) -> float: ...


@dataclass(frozen=True)
class RemovalScore:
    sample_index: int
    accuracy: float


def _removal_accuracies(ranker, x, y, mask: frozenset, candidates: list[int]) -> np.ndarray:
    fast = getattr(ranker, "removal_accuracies", None)
    if fast is not None:
        return np.asarray(fast(x, y, sorted(mask), candidates), dtype=np.float64)
    return np.array([ranker.accuracy(x, y, sorted(mask | {j})) for j in candidates], dtype=np.float64)


class ScoreCache:
    """Memo of ranking passes keyed by (ranker slot, mask).

    Valid for one fixed ranking data set; create one per SNR partition.
    """

    def __init__(self):
        self._store: dict[tuple[int, frozenset], list[RemovalScore]] = {}
        self.passes = 0

    def get(self, slot: int, mask: frozenset):
        return self._store.get((slot, mask))

    def put(self, slot: int, mask: frozenset, scores: list[RemovalScore]):
        self._store[(slot, mask)] = scores
        self.passes += 1


def removal_scores(ranker, frames, labels, permanent_mask: Iterable[int] = (), d: int | None = None,
                   cache: ScoreCache | None = None, slot: int = 0) -> list[RemovalScore]:
    """Score every unmasked index by the accuracy obtained when it is zeroed too.

    Sorted ascending by accuracy with ties to the lower index, so the head
    of the list is the sample whose removal hurts most.
    """
    d = np.asarray(frames).shape[-1] if d is None else d
    mask = frozenset(int(i) for i in permanent_mask)
    if any(i < 0 or i >= d for i in mask):
        raise IndexError(f"mask index outside [0, {d})")
    if cache is not None:
        hit = cache.get(slot, mask)
        if hit is not None:
            return hit
    candidates = [j for j in range(d) if j not in mask]
    if not candidates:
        raise ValueError("every sample index is already masked")
    acc = _removal_accuracies(ranker, frames, labels, mask, candidates)
    scores = sorted((RemovalScore(j, float(a)) for j, a in zip(candidates, acc)),
                    key=lambda s: (s.accuracy, s.sample_index))
    if cache is not None:
        cache.put(slot, mask, scores)
    return scores


@dataclass(frozen=True)
class SelectionStep:
    index: int
    tier: int       # 0 for single-ranker selection
    priority: float


@dataclass
class SelectionResult:
    indices: list[int]
    steps: list[SelectionStep] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.indices)


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")


def subsampler_net(k: int, frames, labels, ranker, cache: ScoreCache | None = None) -> SelectionResult:
    """Greedy wrapper selection with one ranker.

    Each step zeroes every remaining candidate in turn on top of the
    permanent mask, picks the one whose removal costs the most accuracy,
    and adds it to both the result and the permanent mask.
    """
    d = np.asarray(frames).shape[-1]
    _check_k(k, d)
    mask: set[int] = set()
    out = SelectionResult([])
    for _ in range(k):
        best = removal_scores(ranker, frames, labels, mask, d, cache)[0]
        out.indices.append(best.sample_index)
        out.steps.append(SelectionStep(best.sample_index, 0, best.accuracy))
        mask.add(best.sample_index)
    return out


# --------------------------------------------------------------------------
# holistic subsampler


@dataclass
class TierTable:
    tier1: list[tuple[int, float]]
    tier2: list[tuple[int, float]]
    tier3: list[tuple[int, float]]

    def tiers(self) -> tuple[list[tuple[int, float]], ...]:
        return self.tier1, self.tier2, self.tier3

    def head(self) -> tuple[int, int, float] | None:
        """First entry of the highest non-empty tier as ``(index, tier, priority)``."""
        for t, tier in enumerate(self.tiers(), start=1):
            if tier:
                return tier[0][0], t, tier[0][1]
        return None


def tier_divide(sets: Sequence[Iterable[int]], scores: Sequence[dict[int, float]]) -> TierTable:
    """Partition the union of three candidate sets by how many sets hold each index.

    An index's priority is the sum of ``accuracy_when_removed`` over the
    rankers whose set contains it; each tier is sorted by ascending
    priority, ties to the lower index.
    """
    if len(sets) != 3 or len(scores) != 3:
        raise ValueError("tier division needs exactly three candidate sets")
    sets = [set(int(i) for i in s) for s in sets]
    tiers: dict[int, list[tuple[int, float]]] = {1: [], 2: [], 3: []}
    for j in sorted(set().union(*sets)):
        owners = [r for r in range(3) if j in sets[r]]
        priority = float(sum(scores[r][j] for r in owners))
        tiers[4 - len(owners)].append((j, priority))
    for t in tiers.values():
        t.sort(key=lambda e: (e[1], e[0]))
    return TierTable(tiers[1], tiers[2], tiers[3])


@dataclass(frozen=True)
class RankedCandidate:
    index: int
    tier: int        # 1-3 from the tier table, 4 for candidates in no set
    priority: float


def holistic_ranking(rankers: Sequence, frames, labels, mask: Iterable[int], budget: int,
                     cache: ScoreCache | None = None) -> list[RankedCandidate]:
    """Every unmasked candidate, ordered best first by the tier procedure.

    Each ranker contributes its ``budget`` most important candidates; the
    tier table orders the union, and candidates outside every set follow
    as a fourth tier ordered by their summed accuracy over all rankers.
    The head of this list is the holistic choice; the ε-greedy search
    branches on its first few entries.
    """
    if len(rankers) != 3:
        raise ValueError("the holistic subsampler needs exactly three rankers")
    d = np.asarray(frames).shape[-1]
    mask = frozenset(int(i) for i in mask)
    passes = [removal_scores(r, frames, labels, mask, d, cache, slot) for slot, r in enumerate(rankers)]
    budget = max(1, budget)
    cand_sets = [{s.sample_index for s in p[:budget]} for p in passes]
    lookup = [{s.sample_index: s.accuracy for s in p} for p in passes]
    table = tier_divide(cand_sets, lookup)
    ranked = [RankedCandidate(j, t, pr) for t, tier in enumerate(table.tiers(), start=1) for j, pr in tier]
    chosen = {c.index for c in ranked}
    rest = sorted(((j, sum(lk[j] for lk in lookup)) for j in lookup[0] if j not in chosen),
                  key=lambda e: (e[1], e[0]))
    ranked.extend(RankedCandidate(j, 4, pr) for j, pr in rest)
    return ranked


def holistic_select(k: int, frames, labels, rankers: Sequence, cache: ScoreCache | None = None) -> SelectionResult:
    """Holistic Subsampler: re-rank with all three rankers after every pick.

    At step ``t`` each ranker's candidate set is its top ``k - t``
    candidates under the current permanent mask; the head of tier 1 is
    taken, else tier 2, else tier 3.
    """
    d = np.asarray(frames).shape[-1]
    _check_k(k, d)
    if len(rankers) != 3:
        raise ValueError("the holistic subsampler needs exactly three rankers")
    out = SelectionResult([])
    for t in range(k):
        head = holistic_ranking(rankers, frames, labels, out.indices, k - t, cache)[0]
        out.indices.append(head.index)
        out.steps.append(SelectionStep(head.index, head.tier, head.priority))
    return out
