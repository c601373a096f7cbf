"""Command-line entry points.

Exit codes: 0 success, 1 validation problem (bad flags, config, or file
format), 2 numerical failure.  MANIFOLDNORM_SEED overrides the config
seed for every subcommand that reads a config.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .data import generate_synthetic, split_dataset
from .errors import (
    ConfigError,
    ConvergenceError,
    FormatError,
    GeometryError,
    NumericalError,
)
from .model import load_model, save_model
from .selftest import run_selftest
from .tensorio import read_grid, write_grid
from .train import evaluate, run_experiment, train_model

__all__ = ["main"]


def _seed_override() -> dict[str, str]:
    env = os.environ.get("MANIFOLDNORM_SEED")
    return {} if env is None else {"seed": env}


def _load(path: str, extra: dict[str, str] | None = None):
    overrides = dict(extra or {})
    overrides.update(_seed_override())
    return load_config(path, overrides or None)


def _cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    grid, labels = generate_synthetic(cfg, cfg.seed)
    write_grid(args.out, grid, labels)
    print(f"wrote {grid.dims[3]} samples to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args.config)
    grid, labels = read_grid(args.data)
    if labels is None:
        raise ConfigError(f"{args.data} carries no labels")
    train_grid, train_y, _, _ = split_dataset(grid, labels, cfg)
    model, report = train_model(cfg, train_grid, train_y)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, args.out)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    sys.stdout.write(report.to_text())
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    grid, labels = read_grid(args.data)
    if labels is None:
        raise ConfigError(f"{args.data} carries no labels")
    report = evaluate(model, grid, np.asarray(labels))
    sys.stdout.write(report.to_text())
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    key, _, raw = args.vary.partition("=")
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if key.strip() != "norm" or not values:
        raise ConfigError("--vary expects norm=<comma-separated list>")
    os.makedirs(args.out, exist_ok=True)
    results = os.path.join(args.out, "results.tsv")
    if os.path.exists(results):
        os.remove(results)
    for value in values:
        cfg = _load(args.config, {"norm": value})
        run_dir = os.path.join(args.out, cfg.variant_name())
        _, _, test_report = run_experiment(cfg, run_dir, results_path=results)
        print(
            f"{test_report.variant}\tparams={test_report.param_count}\t"
            f"time/epoch={test_report.wall_per_epoch:.3f}s\t"
            f"test_accuracy={test_report.accuracy:.4f}"
        )
    print(f"rows written to {results}")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    return run_selftest()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifoldnorm",
        description="Train and evaluate normalized networks on manifold-valued grids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep", help="run one experiment per requested variant")
    p.add_argument("--config", required=True)
    p.add_argument("--vary", required=True, metavar="norm=<list>")
    p.add_argument("--out", default="sweep-out")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("selftest", help="run the reduced property suite")
    p.set_defaults(fn=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; fold the
        # latter into the validation exit code.
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except (ConfigError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GeometryError, ConvergenceError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
