"""End-to-end pipeline: split, standardize, select, train the final classifier, report.

Stages are plain functions so the CLI subcommands and the benchmark
harness can run them separately and reuse rankers and plans.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines as bl
from . import classifiers as cls
from . import neurokit as nk
from .dataset import NUM_CLASSES, LabeledDataset, SnrPartition, partition_by_snr, stratified_split
from .io import atomic_write
from .search import SelectionPlan, ensemble_subsample
from .wrapper import ScoreCache, StandardizeStats, holistic_select, standardize, subsampler_net

log = logging.getLogger(__name__)

METHODS = ("ensemble", "holistic", "subnet-cnn", "subnet-cldnn", "subnet-resnet", "uniform", "random",
           "magnitude", "pcs", "fisher", "laplacian", "fqi", "none")
RANKER_KINDS = (cls.ArchKind.MiniCNN, cls.ArchKind.MiniCLDNN, cls.ArchKind.MiniResNet)
SUBNET_KIND = {"subnet-cnn": cls.ArchKind.MiniCNN, "subnet-cldnn": cls.ArchKind.MiniCLDNN,
               "subnet-resnet": cls.ArchKind.MiniResNet}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    method: str = "none"
    k: int | None = None
    seed: int = 0
    out: str | None = None
    plan: str | None = None
    rankers: str | None = None
    batch_size: int = 128
    learning_rate: float = 1e-3
    ranker_epochs: int = 30
    final_epochs: int = 30
    patience: int = 5
    leaf_epochs: int = 15
    leaf_patience: int = 3
    leaf_budget: int = 4096

    def validate(self, d: int | None = None) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if d is not None:
            k = self.k_for(d)
            if not 1 <= k <= d:
                raise ConfigError(f"k must lie in [1, {d}], got {k}")
            if self.method == "none" and k != d:
                raise ConfigError("method 'none' keeps every sample, so k must equal d")
        for name in ("batch_size", "leaf_budget"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        return self

    def k_for(self, d: int) -> int:
        return d if self.k is None else int(self.k)

    def train_config(self, epochs: int | None = None, patience: int | None = None, seed: int | None = None):
        return nk.TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                              max_epochs=self.final_epochs if epochs is None else epochs,
                              patience=self.patience if patience is None else patience,
                              seed=self.seed if seed is None else seed)


# --------------------------------------------------------------------------
# splits


@dataclass
class Splits:
    """Standardized fit / validation / test data.

    The training side is split 3:1 into train and test per (class, SNR)
    cell; train is split 3:1 again into fit (gradient steps) and val
    (early stopping and ranking). Statistics come from train only.
    """

    stats: StandardizeStats
    fit: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset

    @property
    def d(self) -> int:
        return self.fit.d

    @property
    def train(self) -> LabeledDataset:
        return LabeledDataset(np.concatenate([self.fit.x, self.val.x]),
                              np.concatenate([self.fit.labels, self.val.labels]),
                              np.concatenate([self.fit.snr, self.val.snr]))

    @property
    def snr_values(self) -> list[int]:
        return sorted(set(self.fit.snr_values) | set(self.test.snr_values))

    def partitions(self) -> list[SnrPartition]:
        return partition_by_snr(self.fit, self.val)


def make_splits(ds: LabeledDataset) -> Splits:
    train, test = stratified_split(ds, 0.25)
    fit, val = stratified_split(train, 0.25)
    stats = standardize(train)[0]
    return Splits(stats, stats.apply_dataset(fit), stats.apply_dataset(val), stats.apply_dataset(test))


# --------------------------------------------------------------------------
# rankers


def train_rankers(splits: Splits, cfg: RunConfig) -> list[cls.RankerModel]:
    out = []
    for kind in RANKER_KINDS:
        t0 = time.perf_counter()
        ranker = cls.make_ranker(kind, splits.fit, splits.val, cfg.train_config(cfg.ranker_epochs))
        log.info("ranker %s: %d epochs, %.1fs, val acc per SNR %s", kind.value, ranker.history.epochs,
                 time.perf_counter() - t0, {s: round(a, 3) for s, a in ranker.val_acc_per_snr.items()})
        out.append(ranker)
    return out


def save_rankers(directory, rankers: Sequence[cls.RankerModel]) -> None:
    directory = Path(directory)
    meta = {}
    for r in rankers:
        atomic_write(directory / f"{r.kind.value}.msnn", nk.save_checkpoint(r.model))
        meta[r.kind.value] = {str(s): a for s, a in sorted(r.val_acc_per_snr.items())}
    atomic_write(directory / "rankers.json", json.dumps(meta, indent=2) + "\n")


def load_rankers(directory) -> list[cls.RankerModel]:
    directory = Path(directory)
    meta_path = directory / "rankers.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    out = []
    for kind in RANKER_KINDS:
        model = nk.load_checkpoint((directory / f"{kind.value}.msnn").read_bytes())
        acc = {int(s): float(a) for s, a in meta.get(kind.value, {}).items()}
        out.append(cls.RankerModel(kind, model, acc))
    return out


# --------------------------------------------------------------------------
# selection


def leaf_trainer_factory(cfg: RunConfig) -> Callable[[SnrPartition], Callable[[Sequence[int]], float]]:
    """Leaf scorer for the tree search: a MiniResNet on the partition's kept samples."""

    def for_partition(part: SnrPartition):
        def score(indices: Sequence[int]) -> float:
            idx = sorted(indices)
            model, _ = nk.train(cls.architecture(cls.ArchKind.MiniResNet), part.fit_x[:, :, idx], part.fit_y,
                                part.val_x[:, :, idx], part.val_y,
                                cfg.train_config(cfg.leaf_epochs, cfg.leaf_patience))
            return nk.evaluate(model, part.val_x[:, :, idx], part.val_y)
        return score

    return for_partition


def select(method: str, k: int, splits: Splits, rankers: Sequence[cls.RankerModel] | None = None,
           cfg: RunConfig | None = None) -> SelectionPlan | None:
    """Index plan for ``method``; ``None`` for per-example magnitude selection."""
    cfg = cfg or RunConfig()
    d = splits.d
    snrs = splits.snr_values
    if method == "magnitude":
        return None
    if method == "none":
        return SelectionPlan.uniform_over(snrs, d, range(d), "none")
    if method == "uniform":
        return SelectionPlan.uniform_over(snrs, d, bl.uniform_indices(d, k), method)
    if method == "random":
        return SelectionPlan.uniform_over(snrs, d, bl.random_indices(d, k, cfg.seed), method)
    train = splits.train
    plan = SelectionPlan(d, k, {}, method=method)
    if method in ("pcs", "fisher", "laplacian"):
        for s in snrs:
            part = train.where(snr=s)
            if method == "pcs":
                plan.per_snr[s] = bl.pcs_indices(part.x, k)[1]
            elif method == "laplacian":
                plan.per_snr[s] = bl.filter_scores(part.x, method="laplacian", seed=cfg.seed).top_k(k)
            else:
                plan.per_snr[s] = bl.filter_scores(part.x, part.labels, "fisher").top_k(k)
        return plan
    if rankers is None or len(rankers) != 3:
        raise ConfigError(f"method {method!r} needs the three trained rankers")
    by_kind = {r.kind: r for r in rankers}
    parts = splits.partitions()
    if method == "fqi":
        for p in parts:
            plan.per_snr[p.snr] = bl.fqi_indices(by_kind[cls.ArchKind.MiniResNet], p.val_x, k)
        return plan
    if method == "ensemble":
        return ensemble_subsample(k, parts, list(rankers), leaf_trainer_factory(cfg), cfg.leaf_budget)
    for p in parts:
        t0 = time.perf_counter()
        if method == "holistic":
            res = holistic_select(k, p.val_x, p.val_y, list(rankers), ScoreCache())
        else:
            res = subsampler_net(k, p.val_x, p.val_y, by_kind[SUBNET_KIND[method]], ScoreCache())
        plan.per_snr[p.snr] = res.indices
        log.info("%s SNR %d: %.1fs", method, p.snr, time.perf_counter() - t0)
    return plan


def reduce_frames(ds: LabeledDataset, plan: SelectionPlan | None, k: int) -> np.ndarray:
    """``(N, 2, k)`` inputs: each frame keeps its SNR's indices in ascending order."""
    if plan is None:
        return bl.magnitude_reduce(ds.x, k)
    out = np.empty((len(ds), 2, plan.k), dtype=np.float32)
    for s in np.unique(ds.snr):
        if int(s) not in plan.per_snr:
            raise ConfigError(f"plan has no entry for SNR {int(s)}")
        rows = np.flatnonzero(ds.snr == s)
        idx = sorted(plan.per_snr[int(s)])
        out[rows] = ds.x[rows][:, :, idx]
    return out


# --------------------------------------------------------------------------
# evaluation and reports


@dataclass
class EvalReport:
    method: str
    d: int
    k: int
    seed: int
    per_snr_accuracy: dict[int, float]
    confusion: dict[int, np.ndarray]
    epochs: int
    total_seconds: float
    epoch_seconds: list[float] = field(default_factory=list)

    @property
    def seconds_per_epoch(self) -> float:
        return self.total_seconds / self.epochs if self.epochs else 0.0

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_snr_accuracy"] = {str(s): a for s, a in sorted(self.per_snr_accuracy.items())}
        out["confusion"] = {str(s): m.tolist() for s, m in sorted(self.confusion.items())}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(obj["method"], int(obj["d"]), int(obj["k"]), int(obj["seed"]),
                   {int(s): float(a) for s, a in obj["per_snr_accuracy"].items()},
                   {int(s): np.asarray(m, dtype=np.int64) for s, m in obj["confusion"].items()},
                   int(obj["epochs"]), float(obj["total_seconds"]), list(obj.get("epoch_seconds", [])))


def confusion(predictions, labels, snr, n_classes: int = NUM_CLASSES) -> dict[int, np.ndarray]:
    """Per-SNR ``counts[true, predicted]``."""
    predictions, labels, snr = (np.asarray(a) for a in (predictions, labels, snr))
    if not len(predictions) == len(labels) == len(snr):
        raise ValueError("predictions, labels and SNR tags must have equal lengths")
    out = {}
    for s in np.unique(snr):
        sel = snr == s
        m = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(m, (labels[sel], predictions[sel]), 1)
        out[int(s)] = m
    return out


def accuracy_from_confusion(m: np.ndarray) -> float:
    total = m.sum()
    return float(np.trace(m) / total) if total else 0.0


def report_csv(report: EvalReport) -> tuple[str, dict[int, str]]:
    """Main accuracy/timing CSV and one confusion CSV per SNR."""
    lines = ["snr_db,accuracy,epochs,seconds_per_epoch,total_seconds"]
    for s in sorted(report.per_snr_accuracy):
        lines.append(f"{s},{report.per_snr_accuracy[s]:.6f},{report.epochs},"
                     f"{report.seconds_per_epoch:.6f},{report.total_seconds:.6f}")
    main = "\n".join(lines) + "\n"
    conf = {}
    for s, m in sorted(report.confusion.items()):
        rows = ["true\\pred," + ",".join(str(c) for c in range(m.shape[1]))]
        rows += [f"{i}," + ",".join(str(int(v)) for v in row) for i, row in enumerate(m)]
        conf[s] = "\n".join(rows) + "\n"
    return main, conf


def write_report(directory, report: EvalReport) -> None:
    directory = Path(directory)
    main, conf = report_csv(report)
    atomic_write(directory / "report.csv", main)
    for s, text in conf.items():
        atomic_write(directory / f"confusion_{s}.csv", text)
    atomic_write(directory / "report.json", json.dumps(report.to_json(), indent=2) + "\n")


def train_final(fit_x, fit_y, val_x, val_y, cfg: RunConfig, seed: int | None = None):
    return nk.train(cls.architecture(cls.ArchKind.MiniResNet), fit_x, fit_y, val_x, val_y,
                    cfg.train_config(seed=seed))


def evaluate_plan(splits: Splits, plan: SelectionPlan | None, k: int, cfg: RunConfig, method: str,
                  seed: int | None = None) -> EvalReport:
    """Train the shared final classifier on reduced inputs and score it per SNR on test."""
    seed = cfg.seed if seed is None else seed
    fx = reduce_frames(splits.fit, plan, k)
    vx = reduce_frames(splits.val, plan, k)
    tx = reduce_frames(splits.test, plan, k)
    model, hist = train_final(fx, splits.fit.labels, vx, splits.val.labels, cfg, seed)
    pred = nk.forward(model, tx).argmax(axis=1) if len(tx) else np.zeros(0, dtype=np.int64)
    conf = confusion(pred, splits.test.labels, splits.test.snr)
    acc = {s: accuracy_from_confusion(m) for s, m in conf.items()}
    return EvalReport(method, splits.d, k, seed, acc, conf, hist.epochs, hist.total_seconds,
                      list(hist.epoch_seconds))


def run_pipeline(cfg: RunConfig, ds: LabeledDataset | None = None,
                 rankers: Sequence[cls.RankerModel] | None = None,
                 plan: SelectionPlan | None = None) -> EvalReport:
    """standardize -> select -> reduce -> train final MiniResNet -> per-SNR test report.

    On failure a ``FAILED`` marker (plus any plan already computed) is
    written to ``cfg.out`` before the error propagates.
    """
    from .io import load_dataset, load_plan, save_plan

    out = Path(cfg.out) if cfg.out else None
    stage = "load"
    try:
        if ds is None:
            if not cfg.dataset:
                raise ConfigError("no dataset given")
            ds = load_dataset(cfg.dataset)
        cfg.validate(ds.d)
        k = cfg.k_for(ds.d)
        splits = make_splits(ds)
        stage = "select"
        if plan is None and cfg.plan:
            plan = load_plan(cfg.plan, splits.snr_values, ds.d)
            if plan.k != k:
                raise ConfigError(f"plan has k={plan.k}, run asks for k={k}")
        if plan is None:
            needs_rankers = cfg.method in ("ensemble", "holistic", "fqi") or cfg.method in SUBNET_KIND
            if needs_rankers and rankers is None:
                rankers = load_rankers(cfg.rankers) if cfg.rankers else train_rankers(splits, cfg)
            plan = select(cfg.method, k, splits, rankers, cfg)
        if out is not None and plan is not None:
            save_plan(out / "plan.json", plan)
        stage = "train"
        report = evaluate_plan(splits, plan, k, cfg, cfg.method)
        if out is not None:
            write_report(out, report)
        return report
    except Exception as exc:
        if out is not None:
            atomic_write(out / "FAILED", f"stage={stage}\nerror={type(exc).__name__}: {exc}\n")
        raise
