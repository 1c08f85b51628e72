"""Deterministic ε-greedy tree search over sample combinations and the
per-SNR orchestrator that doubles ε until a plan beats the previous SNR.

The search tree is implicit: the children of a node (a partial selection)
are the top ``⌊εd⌋`` candidates of the holistic ranking under the node's
mask, and a leaf is a full selection of ``k`` indices. Leaves are scored by
a caller-supplied ``final_trainer(indices) -> validation accuracy``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .dataset import SnrPartition
from .wrapper import ScoreCache, holistic_ranking

LeafTrainer = Callable[[Sequence[int]], float]
DEFAULT_LEAF_BUDGET = 4096


@dataclass(frozen=True)
class SearchConfig:
    d: int
    k: int
    epsilon: float
    prev_snr_acc: float = 0.0
    leaf_budget: int = DEFAULT_LEAF_BUDGET

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.d:
            raise ValueError(f"k must lie in [1, {self.d}], got {self.k}")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.epsilon * self.d < 1 - 1e-9:
            raise ValueError("epsilon * d must be at least 1")
        if not 0 <= self.prev_snr_acc <= 1:
            raise ValueError("prev_snr_acc must lie in [0, 1]")
        if self.leaf_budget < 1:
            raise ValueError("leaf_budget must be positive")

    @property
    def arity(self) -> int:
        # the tolerance keeps ε = m/d from flooring to m - 1
        return max(1, math.floor(self.epsilon * self.d + 1e-9))


@dataclass
class SearchOutcome:
    """Result of one tree search. ``found`` is False for NotFound."""

    found: bool
    indices: list[int] | None
    accuracy: float | None
    best_indices: list[int]
    best_accuracy: float
    leaves_visited: int
    leaf_paths: list[tuple[int, ...]] = field(default_factory=list)
    budget_exhausted: bool = False


class LeafCache:
    """Leaf accuracies keyed by the selected index set (order does not matter for training)."""

    def __init__(self):
        self._store: dict[frozenset, float] = {}
        self.trainings = 0

    def score(self, indices: Sequence[int], trainer: LeafTrainer) -> float:
        key = frozenset(indices)
        if key not in self._store:
            self._store[key] = float(trainer(list(indices)))
            self.trainings += 1
        return self._store[key]


def epsilon_greedy(cfg: SearchConfig, frames, labels, rankers: Sequence, final_trainer: LeafTrainer,
                   score_cache: ScoreCache | None = None, leaf_cache: LeafCache | None = None) -> SearchOutcome:
    """Depth-first, left-to-right search for the first leaf beating ``prev_snr_acc``.

    Child ``c`` of a node is the ``c``-th best candidate of the holistic
    ranking under the node's mask, so the leftmost leaf is exactly the
    holistic selection. Leaves are visited in lexicographic order of their
    child-rank paths until one scores strictly above ``prev_snr_acc``,
    the tree is exhausted, or ``leaf_budget`` leaves have been visited.
    """
    score_cache = ScoreCache() if score_cache is None else score_cache
    leaf_cache = LeafCache() if leaf_cache is None else leaf_cache
    arity = cfg.arity
    state = {"visited": 0, "best": None, "best_acc": -math.inf, "hit": None}
    paths: list[tuple[int, ...]] = []

    def visit(selected: list[int], path: tuple[int, ...]) -> bool:
        """Returns True when the search must stop."""
        depth = len(selected)
        if depth == cfg.k:
            acc = leaf_cache.score(selected, final_trainer)
            state["visited"] += 1
            paths.append(path)
            if acc > state["best_acc"]:
                state["best"], state["best_acc"] = list(selected), acc
            if acc > cfg.prev_snr_acc:
                state["hit"] = (list(selected), acc)
                return True
            return state["visited"] >= cfg.leaf_budget
        ranking = holistic_ranking(rankers, frames, labels, selected, cfg.k - depth, score_cache)
        for c, cand in enumerate(ranking[:arity]):
            if visit(selected + [cand.index], path + (c,)):
                return True
        return False

    visit([], ())
    hit = state["hit"]
    return SearchOutcome(
        found=hit is not None,
        indices=hit[0] if hit else None,
        accuracy=hit[1] if hit else None,
        best_indices=state["best"] or [],
        best_accuracy=float(state["best_acc"]),
        leaves_visited=state["visited"],
        leaf_paths=paths,
        budget_exhausted=hit is None and state["visited"] >= cfg.leaf_budget,
    )


# --------------------------------------------------------------------------
# selection plans


class PlanValidationError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class SelectionPlan:
    """Per-SNR ordered index lists plus how each was obtained."""

    d: int
    k: int
    per_snr: dict[int, list[int]]
    epsilon_used: dict[int, float] = field(default_factory=dict)
    val_acc: dict[int, float] = field(default_factory=dict)
    missed: list[int] = field(default_factory=list)
    method: str = "ensemble"

    @property
    def rate(self) -> float:
        return self.k / self.d

    def indices_for(self, snr: int) -> list[int]:
        return self.per_snr[int(snr)]

    def problems(self, snr_grid: Sequence[int] | None = None) -> list[str]:
        out = []
        if self.d < 1:
            out.append(f"d must be positive, got {self.d}")
        if not 1 <= self.k <= max(self.d, 1):
            out.append(f"k must lie in [1, d], got {self.k}")
        for snr, idx in sorted(self.per_snr.items()):
            if len(idx) != self.k:
                out.append(f"SNR {snr}: {len(idx)} indices, expected {self.k}")
            bad = [i for i in idx if not 0 <= i < self.d]
            if bad:
                out.append(f"SNR {snr}: indices out of range [0, {self.d}): {bad}")
            if len(set(idx)) != len(idx):
                out.append(f"SNR {snr}: duplicate indices")
        for snr in snr_grid or ():
            if int(snr) not in self.per_snr:
                out.append(f"SNR {snr}: missing from plan")
        return out

    def validate(self, snr_grid: Sequence[int] | None = None) -> "SelectionPlan":
        problems = self.problems(snr_grid)
        if problems:
            raise PlanValidationError(problems)
        return self

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "per_snr": {str(s): list(map(int, v)) for s, v in sorted(self.per_snr.items())},
            "epsilon_used": {str(s): float(v) for s, v in sorted(self.epsilon_used.items())},
            "val_acc": {str(s): float(v) for s, v in sorted(self.val_acc.items())},
            "missed": sorted(int(s) for s in self.missed),
            "method": self.method,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "SelectionPlan":
        problems = []
        for key in ("d", "k", "per_snr"):
            if key not in obj:
                problems.append(f"missing field {key!r}")
        if problems:
            raise PlanValidationError(problems)
        try:
            return cls(
                d=int(obj["d"]),
                k=int(obj["k"]),
                per_snr={int(s): [int(i) for i in v] for s, v in obj["per_snr"].items()},
                epsilon_used={int(s): float(v) for s, v in obj.get("epsilon_used", {}).items()},
                val_acc={int(s): float(v) for s, v in obj.get("val_acc", {}).items()},
                missed=[int(s) for s in obj.get("missed", [])],
                method=str(obj.get("method", "ensemble")),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise PlanValidationError([f"malformed plan: {exc}"]) from None

    @classmethod
    def uniform_over(cls, snrs: Sequence[int], d: int, indices: Sequence[int], method: str) -> "SelectionPlan":
        """The same index list for every SNR."""
        idx = [int(i) for i in indices]
        return cls(d, len(idx), {int(s): list(idx) for s in snrs}, method=method)


# --------------------------------------------------------------------------
# orchestrator


@dataclass
class EnsembleTrace:
    """Per-SNR search log: each attempted ε with its outcome."""

    attempts: dict[int, list[tuple[float, SearchOutcome]]] = field(default_factory=dict)


def ensemble_subsample(k: int, partitions: Sequence[SnrPartition], rankers: Sequence,
                       trainer_for: Callable[[SnrPartition], LeafTrainer],
                       leaf_budget: int = DEFAULT_LEAF_BUDGET,
                       trace: EnsembleTrace | None = None) -> SelectionPlan:
    """Per-SNR plans, each required to beat the accuracy accepted at the previous SNR.

    SNRs are processed in ascending order. Each starts at ε = 1/d and
    doubles ε whenever the search finds nothing; once ε reaches 1 without
    success the best leaf seen is accepted and the SNR is flagged as
    missed. Ranking uses the validation part of each partition;
    ``trainer_for(partition)`` supplies the leaf scorer.
    """
    if not partitions:
        raise ValueError("need at least one SNR partition")
    d = partitions[0].d
    plan = SelectionPlan(d, k, {}, method="ensemble")
    prev = 0.0
    for part in sorted(partitions, key=lambda p: p.snr):
        scores, leaves = ScoreCache(), LeafCache()
        trainer = trainer_for(part)
        eps = 1.0 / d
        attempts = []
        while True:
            cfg = SearchConfig(d, k, eps, prev, leaf_budget)
            out = epsilon_greedy(cfg, part.val_x, part.val_y, rankers, trainer, scores, leaves)
            attempts.append((eps, out))
            if out.found:
                indices, acc = out.indices, out.accuracy
                break
            if eps >= 1.0:
                indices, acc = out.best_indices, out.best_accuracy
                plan.missed.append(part.snr)
                break
            eps = min(1.0, 2 * eps)
        plan.per_snr[part.snr] = list(indices)
        plan.epsilon_used[part.snr] = eps
        plan.val_acc[part.snr] = float(acc)
        prev = float(acc)
        if trace is not None:
            trace.attempts[part.snr] = attempts
    return plan
