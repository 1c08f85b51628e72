"""Command-line entry point: ``ewsub {gen,train-rankers,select,eval,report}``.

Settings come from an optional plain ``key=value`` file (``--config``);
explicit flags override it. Exit codes: 0 success, 2 invalid input or
configuration, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import sigstream as ss
from .io import MsubFormatError, atomic_write, load_dataset, save_dataset, save_plan
from .search import PlanValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def read_config(path: str | None) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    if not path:
        return {}
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise pl.ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _build(cls, settings: dict[str, str], **fixed):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(settings) - set(known) - set(fixed))
    if unknown:
        raise pl.ConfigError(f"unknown setting(s) for {cls.__name__}: {', '.join(unknown)}")
    kwargs = dict(fixed)
    defaults = cls()
    for key, value in settings.items():
        if key in fixed:
            continue
        like = getattr(defaults, key)
        try:
            kwargs[key] = _coerce(value, like) if like is not None else (int(value) if key == "k" else value)
        except ValueError:
            raise pl.ConfigError(f"setting {key}={value!r} has the wrong type") from None
    return cls(**kwargs)


def gen_config(settings: dict[str, str]) -> ss.GenConfig:
    settings = dict(settings)
    kw = {}
    if "snr_grid" in settings:
        try:
            kw["snr_grid"] = tuple(int(s) for s in settings.pop("snr_grid").replace(",", " ").split())
        except ValueError:
            raise pl.ConfigError("snr_grid must be a list of integers") from None
    for key in ("dataset", "out", "workers"):
        settings.pop(key, None)
    cfg = _build(ss.GenConfig, {k: v for k, v in settings.items() if k not in ("channel", "classes")}, **kw)
    try:
        cfg.validate()
    except ValueError as exc:
        raise pl.ConfigError(str(exc)) from None
    return cfg


def _settings(args) -> dict[str, str]:
    settings = read_config(args.config)
    for key in ("method", "k", "seed", "dataset", "plan", "rankers"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = str(value)
    if args.out is not None:
        settings["out"] = args.out
    return settings


def _run_config(settings: dict[str, str]) -> pl.RunConfig:
    return _build(pl.RunConfig, settings)


def cmd_gen(args) -> int:
    settings = _settings(args)
    out = settings.get("out")
    if not out:
        raise pl.ConfigError("gen needs --out")
    workers = int(settings.get("workers", "1"))
    cfg = gen_config(settings)
    ds = ss.generate_dataset(cfg, workers=workers)
    save_dataset(out, ds)
    print(f"wrote {len(ds)} frames (d={ds.d}, {len(cfg.snr_grid)} SNRs) to {out}")
    return EXIT_OK


def _dataset(cfg: pl.RunConfig):
    if not cfg.dataset:
        raise pl.ConfigError("no dataset given (set dataset= in --config or pass --dataset)")
    return load_dataset(cfg.dataset)


def cmd_train_rankers(args) -> int:
    cfg = _run_config(_settings(args)).validate()
    if not cfg.out:
        raise pl.ConfigError("train-rankers needs --out (a directory)")
    splits = pl.make_splits(_dataset(cfg))
    rankers = pl.train_rankers(splits, cfg)
    pl.save_rankers(cfg.out, rankers)
    for r in rankers:
        print(f"{r.kind.value}: epochs={r.history.epochs} val_acc={json.dumps(r.val_acc_per_snr)}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _run_config(_settings(args))
    ds = _dataset(cfg)
    cfg.validate(ds.d)
    if not cfg.out:
        raise pl.ConfigError("select needs --out (a plan JSON path)")
    if cfg.method == "magnitude":
        raise pl.ConfigError("magnitude selection is per example and has no plan; use eval directly")
    splits = pl.make_splits(ds)
    rankers = pl.load_rankers(cfg.rankers) if cfg.rankers else None
    if rankers is None and (cfg.method in ("ensemble", "holistic", "fqi") or cfg.method in pl.SUBNET_KIND):
        rankers = pl.train_rankers(splits, cfg)
    plan = pl.select(cfg.method, cfg.k_for(ds.d), splits, rankers, cfg)
    save_plan(cfg.out, plan)
    print(f"wrote {cfg.method} plan (k={plan.k}, d={plan.d}) to {cfg.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(_settings(args))
    if not cfg.out:
        raise pl.ConfigError("eval needs --out (a directory)")
    report = pl.run_pipeline(cfg)
    print(pl.report_csv(report)[0], end="")
    return EXIT_OK


def cmd_report(args) -> int:
    settings = _settings(args)
    src = settings.get("report") or args.report
    if not src:
        raise pl.ConfigError("report needs a report.json (positional argument or report= in --config)")
    try:
        report = pl.EvalReport.from_json(json.loads(Path(src).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise pl.ConfigError(f"{src} is not a saved report: {exc}") from None
    main, conf = pl.report_csv(report)
    out = settings.get("out")
    if out:
        pl.write_report(out, report)
    print(main, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewsub", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method=False):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--dataset", help="MSUB dataset path")
        if method:
            p.add_argument("--method", choices=pl.METHODS)
            p.add_argument("--k", type=int)
            p.add_argument("--plan", help="precomputed plan JSON")
            p.add_argument("--rankers", help="directory written by train-rankers")

    p = sub.add_parser("gen", help="synthesize an MSUB dataset")
    common(p)
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("train-rankers", help="train the three ranker networks")
    common(p)
    p.set_defaults(func=cmd_train_rankers)
    p = sub.add_parser("select", help="compute a selection plan")
    common(p, method=True)
    p.set_defaults(func=cmd_select)
    p = sub.add_parser("eval", help="train the final classifier on selected samples and report")
    common(p, method=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("report", help="re-emit CSVs from a saved report.json")
    common(p)
    p.add_argument("report", nargs="?")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (pl.ConfigError, MsubFormatError, PlanValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
