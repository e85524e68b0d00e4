"""``icplab`` command line: prepare, run, aggregate, plot, validate-config.

Exit codes: 0 success, 2 I/O failure, 3 validation failure, 4 runtime
compute failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from icplab import data as data_mod
from icplab.experiment import (ConfigError, ExperimentError, IncompleteTableError,
                               ResultsTable, aggregate_experiment, load_config,
                               run_experiment, write_aggregate_csv, write_outputs)
from icplab.metrics import FORMULAS, STATISTICS
from icplab.plot import SchemaError, plot_aggregate

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("icplab")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _out_root(args) -> Path:
    return Path(args.out_dir or os.environ.get("ICPLAB_OUT", "results"))


def _load_data(path) -> data_mod.Dataset:
    try:
        return data_mod.load_covtype(path)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"data file not found: {path}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
    except data_mod.DataError as exc:
        raise CliError(EXIT_VALIDATION, f"{path}: {exc}") from None


def _load_config(path):
    try:
        return load_config(path)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"config file not found: {path}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
    except (ConfigError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, f"invalid config {path}: {exc}") from None


def cmd_prepare(args) -> int:
    path = args.data_path or data_mod.default_data_path()
    data = _load_data(path)
    rng = np.random.default_rng(args.seed)
    try:
        balanced = data_mod.balance_undersample(data, args.per_class, rng)
    except (data_mod.InsufficientClassError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    out = Path(args.out or f"balanced_{args.per_class}_seed{args.seed}.data")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        data_mod.write_covtype(out, balanced)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from None
    print(f"source: {path} ({len(data)} examples)")
    for label, count in enumerate(balanced.class_counts):
        print(f"class {label + 1}: {count}")
    print(f"total: {len(balanced)}")
    print(f"written: {out}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    config = _load_config(args.config)
    print(f"ok: protocol {config.protocol}, {len(config.grid)} grid values, "
          f"{len(config.epsilons)} significance levels, {config.repetitions} repetitions")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config(args.config)
    path = args.data_path or config.data_path or data_mod.default_data_path()
    data = _load_data(path)
    workers = args.workers or config.workers
    try:
        table = run_experiment(config, data, workers=workers)
    except (ConfigError, data_mod.InsufficientClassError) as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    except ExperimentError as exc:
        raise CliError(EXIT_RUNTIME, str(exc)) from None
    aggregates = None
    if config.repetitions >= 2:
        aggregates = aggregate_experiment(table)
    else:
        print("note: one repetition, aggregate.csv not written", file=sys.stderr)
    stamp = args.timestamp or datetime.now().strftime("%Y%m%dT%H%M%S")
    out = write_outputs(_out_root(args) / config.protocol / stamp, config, table, aggregates)
    print(f"results: {out}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    raw = Path(args.raw)
    try:
        table = ResultsTable.read_csv(raw)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"raw results not found: {raw}") from None
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_VALIDATION, f"{raw}: {exc}") from None
    try:
        rows = aggregate_experiment(table)
    except (IncompleteTableError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    out = Path(args.out) if args.out else raw.with_name("aggregate.csv")
    write_aggregate_csv(out, rows)
    print(f"aggregate: {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    agg = Path(args.aggregate)
    out_dir = Path(args.out_dir) if args.out_dir else agg.parent / "plots"
    try:
        written = plot_aggregate(agg, args.statistic, out_dir, args.epsilon, args.formula)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"aggregate file not found: {agg}") from None
    except (SchemaError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from None
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icplab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-repetition progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="write a class-balanced copy of the data")
    s.add_argument("--data-path", help="covtype.data[.gz] (default: $ICPLAB_DATA)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--per-class", type=int, default=2747)
    s.add_argument("--out", help="output file (default: balanced_<per-class>_seed<seed>.data)")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("run", help="run an experiment config and aggregate it")
    s.add_argument("--config", required=True)
    s.add_argument("--data-path")
    s.add_argument("--out-dir", help="output root (default: $ICPLAB_OUT or ./results)")
    s.add_argument("--workers", type=int)
    s.add_argument("--timestamp", help="fixed results subdirectory name")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("aggregate", help="re-aggregate an existing raw.csv")
    s.add_argument("--raw", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("plot", help="SVG charts from aggregate.csv")
    s.add_argument("--aggregate", required=True)
    s.add_argument("--statistic", choices=STATISTICS, required=True)
    s.add_argument("--epsilon", type=float, action="append",
                   help="significance level to draw (repeatable; default all)")
    s.add_argument("--formula", choices=FORMULAS)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("validate-config", help="check a config file without running it")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_validate_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"icplab: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
