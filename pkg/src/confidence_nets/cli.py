"""``confidence-nets`` command line: train, predict, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import prepare_split, read_table
from .ensemble import predict_intervals, train_confidence_net
from .errors import DataError, NumericalError
from .evaluation import evaluate_model, write_aggregate_csv, write_records_csv, write_summary_csv, \
    aggregate
from .modelfile import FORMAT_VERSION, load_model, save_model

logger = logging.getLogger("confidence_nets")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

PREDICT_COLUMNS = ["y_f", "lower", "upper", "half_width", "y_hat", "y_c", "d_e", "l_n"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flags with a name different from their RunConfig field
_FLAG_ALIASES = {"train_fraction": "--fraction"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    for f in fields(RunConfig):
        flag = _FLAG_ALIASES.get(f.name, "--" + f.name.replace("_", "-"))
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper(),
                            help=f"default: {getattr(RunConfig(), f.name)}")


def _run_config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confidence-nets", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write the model file")
    _add_config_flags(p)
    p.add_argument("--model", help="model file path (default: <out>/model.cnet)")

    p = sub.add_parser("predict", help="prediction intervals for the rows of a CSV file")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("--output", "-o", help="write CSV here instead of standard output")

    p = sub.add_parser("evaluate", help="inclusion-rate experiment over fractions and seeds")
    _add_config_flags(p)

    p = sub.add_parser("inspect", help="describe a model file")
    p.add_argument("model")
    return parser


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifests = cfg.manifests()
    if len(manifests) != 1:
        raise UsageError("train takes exactly one dataset")
    manifest = manifests[0]
    raw = manifest.load()
    train, _, _ = prepare_split(raw, cfg.train_fraction, cfg.seed, cfg.normalize_target)
    model = train_confidence_net(train, cfg.model_config(), cfg.seed, cfg.snapshot())
    path = Path(args.model) if args.model else Path(cfg.out) / "model.cnet"
    save_model(model, path)
    losses = model.report.epoch_losses
    print(f"model: {path}")
    print(f"dataset: {manifest.name} ({raw.n_samples} rows, {raw.n_columns} columns, target {raw.target_name!r})")
    print(f"train rows: {train.n_samples}")
    print(f"l_n: {model.l_n!r}")
    print(f"omega: {model.omega!r}")
    if losses.size:
        print(f"first epoch loss: {float(losses[0])!r}")
        print(f"final epoch loss: {float(losses[-1])!r}")
    return 0


def _read_inputs(path, model) -> np.ndarray:
    header, table = read_table(path, allow_empty=True)
    names = list(model.feature_names)
    for col in header:
        if col not in names and col != model.target_name:
            raise DataError(f"{path}: unexpected column {col!r} (model inputs: {', '.join(names)})")
    for col in names:
        if col not in header:
            raise DataError(f"{path}: missing input column {col!r}")
    return table[:, [header.index(c) for c in names]]


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X = _read_inputs(args.input, model)
    intervals = predict_intervals(model, X) if X.shape[0] else []
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(PREDICT_COLUMNS)
        for iv in intervals:
            writer.writerow([repr(float(getattr(iv, c))) for c in PREDICT_COLUMNS])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cell_name(name: str, fraction: float, seed: int) -> str:
    return f"{name}_f{fraction:g}_s{seed}.csv"


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out)
    fractions, seeds = cfg.fraction_list(), cfg.seed_list()
    if not fractions or not seeds:
        raise UsageError("evaluate needs at least one fraction and one seed")
    summaries, log_cells = [], []
    started = time.time()
    for manifest in cfg.manifests():
        try:
            raw = manifest.load()
            for fraction in fractions:
                for seed in seeds:
                    t0 = time.time()
                    train, test, _ = prepare_split(raw, fraction, seed, cfg.normalize_target)
                    model = train_confidence_net(train, cfg.model_config(), seed, cfg.snapshot())
                    summary = evaluate_model(model, test, manifest.name, fraction, seed, train.n_samples)
                    records_path = out / "records" / _cell_name(manifest.name, fraction, seed)
                    write_records_csv(records_path, summary.records)
                    summaries.append(summary)
                    log_cells.append({**summary.row(), "records": str(records_path),
                                      "seconds": round(time.time() - t0, 3)})
                    print(f"{manifest.name} fraction={fraction:g} seed={seed} "
                          f"inclusion={summary.inclusion_rate_confidence:.4f} "
                          f"ann={summary.inclusion_rate_ann:.4f} "
                          f"mae_raw={summary.mae_raw:.4g} mae_corrected={summary.mae_corrected:.4g}")
        except (DataError, NumericalError) as exc:
            raise type(exc)(f"dataset {manifest.name!r}: {exc}") from exc
    write_summary_csv(out / "summary.csv", summaries)
    write_aggregate_csv(out / "aggregate.csv", summaries)
    log = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
           "seconds": round(time.time() - started, 3), "config": cfg.snapshot(),
           "cells": log_cells, "aggregate": aggregate(summaries)}
    (out / "run_log.json").write_text(json.dumps(log, indent=2) + "\n", encoding="utf-8")
    for row in aggregate(summaries):
        print(f"{row['dataset']} fraction={row['train_fraction']:g} seeds={row['n_seeds']} "
              f"inclusion={row['inclusion_rate_confidence_mean']:.4f}+/-{row['inclusion_rate_confidence_std']:.4f} "
              f"ann={row['inclusion_rate_ann_mean']:.4f}")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    net, forest = model.net, model.forest
    print(f"format version: {FORMAT_VERSION}")
    print(f"inputs ({model.n_x}): {', '.join(model.feature_names)}")
    print(f"target: {model.target_name}")
    print(f"conv: W{tuple(net.conv.W.shape)} b{tuple(net.conv.b.shape)} padding={net.conv.padding} "
          f"stride={net.conv.stride}")
    for name in ("hidden1", "hidden2", "output"):
        layer = getattr(net, name)
        print(f"{name}: W{tuple(layer.W.shape)} b{tuple(layer.b.shape)} activation={layer.activation}")
    print(f"network parameters: {net.n_params}")
    print(f"huber delta: {net.huber_delta!r}")
    print(f"n_trees={forest.n_trees} max_depth={forest.params.max_depth} shrinkage={forest.shrinkage!r} "
          f"reg_lambda={forest.params.reg_lambda!r} base_score={forest.base_score!r}")
    print(f"forest nodes: {sum(t.n_nodes for t in forest.trees)}")
    print(f"memory rows: {model.memory.size} (fraction {model.memory.memory_fraction!r})")
    print(f"omega: {model.omega!r}")
    print(f"l_n: {model.l_n!r}")
    print(f"split hash: {model.split_hash}")
    for key, value in sorted(model.config_snapshot.items()):
        print(f"config.{key}={value}")
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"confidence-nets: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"confidence-nets: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"confidence-nets: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
