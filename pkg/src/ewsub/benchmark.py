"""Desk-scale benchmark: ensemble selection against uniform, random and full-width input.

One dataset, one set of rankers and one ensemble plan per rate are shared
by every seed; the seed drives the final classifier's initialization and
batch order (and the random baseline's draw). Results are written as JSON
so the acceptance checks can be re-read without re-running.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pipeline as pl
from . import sigstream as ss
from .io import atomic_write

log = logging.getLogger(__name__)


@dataclass
class DeskConfig:
    d: int = 64
    shift: int = 32
    snr_grid: tuple[int, ...] = (-10, 0, 10, 18)
    frames_per_class_per_snr: int = 300
    k: int = 32
    seeds: tuple[int, ...] = (0, 1, 2)
    data_seed: int = 0
    ranker_epochs: int = 20
    final_epochs: int = 30
    leaf_epochs: int = 15
    leaf_budget: int = 4

    @property
    def trend_ks(self) -> tuple[int, int, int]:
        return self.d, self.d // 2, self.d // 4


@dataclass
class DeskResult:
    config: dict
    accuracy_18db: dict[str, list[float]] = field(default_factory=dict)   # "<method>@<k>" -> per seed
    total_seconds: dict[str, list[float]] = field(default_factory=dict)
    per_snr: dict[str, list[dict[str, float]]] = field(default_factory=dict)
    plans: dict[str, dict] = field(default_factory=dict)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    wall_seconds: float = 0.0

    def mean_acc(self, key: str) -> float:
        return float(np.mean(self.accuracy_18db[key]))

    def mean_seconds(self, key: str) -> float:
        return float(np.mean(self.total_seconds[key]))

    def to_json(self) -> dict:
        return asdict(self)


def run_desk_benchmark(cfg: DeskConfig = DeskConfig(), out: str | None = None) -> DeskResult:
    start = time.perf_counter()
    result = DeskResult(config=asdict(cfg))
    top = max(cfg.snr_grid)

    def stage(name, t0):
        result.stage_seconds[name] = round(time.perf_counter() - t0, 2)
        log.info("stage %s done in %.1fs", name, result.stage_seconds[name])

    t0 = time.perf_counter()
    gen = ss.GenConfig(d=cfg.d, shift=cfg.shift, snr_grid=tuple(cfg.snr_grid),
                       frames_per_class_per_snr=cfg.frames_per_class_per_snr, seed=cfg.data_seed)
    splits = pl.make_splits(ss.generate_dataset(gen))
    stage("generate", t0)

    run = pl.RunConfig(seed=cfg.data_seed, ranker_epochs=cfg.ranker_epochs, final_epochs=cfg.final_epochs,
                       leaf_epochs=cfg.leaf_epochs, leaf_budget=cfg.leaf_budget)
    t0 = time.perf_counter()
    rankers = pl.train_rankers(splits, run)
    stage("rankers", t0)

    plans = {}
    for k in cfg.trend_ks[1:]:
        t0 = time.perf_counter()
        plans[f"ensemble@{k}"] = pl.select("ensemble", k, splits, rankers, run)
        stage(f"ensemble@{k}", t0)
    plans[f"uniform@{cfg.k}"] = pl.select("uniform", cfg.k, splits)
    plans[f"none@{cfg.d}"] = pl.select("none", cfg.d, splits)
    result.plans = {key: p.to_json() for key, p in plans.items()}

    t0 = time.perf_counter()
    for seed in cfg.seeds:
        seeded = dict(plans)
        seeded[f"random@{cfg.k}"] = pl.select("random", cfg.k, splits, cfg=pl.RunConfig(seed=seed))
        for key, plan in sorted(seeded.items()):
            method, k = key.split("@")
            rep = pl.evaluate_plan(splits, plan, int(k), run, method, seed=seed)
            result.accuracy_18db.setdefault(key, []).append(rep.per_snr_accuracy[top])
            result.total_seconds.setdefault(key, []).append(rep.total_seconds)
            result.per_snr.setdefault(key, []).append({str(s): a for s, a in rep.per_snr_accuracy.items()})
            log.info("seed %d %s: acc@%ddB=%.3f epochs=%d %.1fs", seed, key, top,
                     rep.per_snr_accuracy[top], rep.epochs, rep.total_seconds)
    stage("final classifiers", t0)
    result.wall_seconds = time.perf_counter() - start
    if out:
        atomic_write(out, json.dumps(result.to_json(), indent=2) + "\n")
    return result


def main() -> None:  # pragma: no cover - manual entry point
    import argparse

    ap = argparse.ArgumentParser(description="Run the desk-scale benchmark")
    ap.add_argument("--out", default="desk_benchmark.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    res = run_desk_benchmark(out=args.out)
    for key in sorted(res.accuracy_18db):
        print(f"{key:16s} acc18={res.mean_acc(key):.4f} train_s={res.mean_seconds(key):.1f}")
    print(f"wall {res.wall_seconds:.0f}s")


if __name__ == "__main__":  # pragma: no cover
    main()
