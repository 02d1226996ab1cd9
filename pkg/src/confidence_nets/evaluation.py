"""Inclusion-rate evaluation against a plain-network baseline."""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, DatasetManifest, denormalize_target, prepare_split
from .ensemble import ConfidenceNetModel, ModelConfig, PredictionInterval, predict_normalized, \
    train_confidence_net
from .nn import NeuralNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRecord:
    """Per-sample outcome; ``d_e`` is in normalized units, everything else in target units."""

    index: int
    y_true: float
    y_hat: float
    y_f: float
    actual_error: float
    estimated_error: float
    d_e: float
    lower: float
    upper: float
    included: bool


RECORD_COLUMNS = [f.name for f in fields(EvalRecord)]


@dataclass
class EvalSummary:
    dataset: str
    train_fraction: float
    seed: int
    n_train: int
    n_test: int
    inclusion_rate_confidence: float
    inclusion_rate_ann: float
    mae_raw: float
    mse_raw: float
    mae_corrected: float
    mse_corrected: float
    omega: float
    l_n: float
    split_hash: str
    records: list[EvalRecord] = field(default_factory=list, repr=False, compare=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d


SUMMARY_COLUMNS = [f.name for f in fields(EvalSummary) if f.name != "records"]

AGGREGATE_METRICS = ["inclusion_rate_confidence", "inclusion_rate_ann", "mae_raw", "mae_corrected",
                     "mse_raw", "mse_corrected"]


def inclusion_rate(intervals: Sequence[PredictionInterval], y_true) -> float:
    """Fraction of truths inside their closed interval ``[lower, upper]``."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if len(intervals) != y.size:
        raise ValueError(f"length mismatch: {len(intervals)} intervals vs {y.size} truths")
    if y.size == 0:
        raise ValueError("inclusion rate of an empty set is undefined")
    hits = sum(1 for iv, t in zip(intervals, y) if iv.lower <= t <= iv.upper)
    return hits / y.size


def ann_baseline_inclusion(net: NeuralNet, l_n: float, test: Dataset) -> float:
    """Share of test rows whose plain-network residual is within ``l_n`` (normalized units)."""
    if test.n_samples == 0:
        raise ValueError("empty test set")
    residual = np.abs(net.predict(test.X) - test.y)
    return int(np.count_nonzero(residual <= l_n)) / test.n_samples


def error_estimation_report(model: ConfidenceNetModel, test: Dataset,
                            intervals: Sequence[PredictionInterval] | None = None) -> list[EvalRecord]:
    """One record per test row, in test order."""
    if intervals is None:
        intervals = predict_normalized(model, test.X)
    params = model.normalization
    y_true = denormalize_target(test.y, params)
    scale = params.target_range
    out = []
    for i, (iv, t) in enumerate(zip(intervals, np.atleast_1d(y_true))):
        y_hat = float(denormalize_target(iv.y_hat, params))
        out.append(EvalRecord(i, float(t), y_hat, iv.y_f, y_hat - float(t), iv.y_c * scale, iv.d_e,
                              iv.lower, iv.upper, bool(iv.lower <= t <= iv.upper)))
    return out


def evaluate_model(model: ConfidenceNetModel, test: Dataset, dataset: str = "",
                   train_fraction: float = float("nan"), seed: int = 0, n_train: int = 0) -> EvalSummary:
    intervals = predict_normalized(model, test.X)
    records = error_estimation_report(model, test, intervals)
    y = np.array([r.y_true for r in records])
    raw = np.array([r.y_hat for r in records])
    corrected = np.array([r.y_f for r in records])
    return EvalSummary(
        dataset=dataset, train_fraction=train_fraction, seed=seed, n_train=n_train, n_test=test.n_samples,
        inclusion_rate_confidence=inclusion_rate(intervals, y),
        inclusion_rate_ann=ann_baseline_inclusion(model.net, model.l_n, test),
        mae_raw=float(np.mean(np.abs(raw - y))), mse_raw=float(np.mean((raw - y) ** 2)),
        mae_corrected=float(np.mean(np.abs(corrected - y))),
        mse_corrected=float(np.mean((corrected - y) ** 2)),
        omega=model.omega, l_n=model.l_n, split_hash=model.split_hash, records=records,
    )


def run_experiment(manifest: DatasetManifest, fractions: Iterable[float], seeds: Iterable[int],
                   config: ModelConfig | None = None, normalize_target: bool = True,
                   config_snapshot: dict[str, str] | None = None) -> list[EvalSummary]:
    """Train and score one confidence net per (fraction, seed) cell.

    The baseline is the confidence net's own phase-one network: it is trained
    on the same split with the same seed stream, so a separately trained plain
    network would be bit-identical to it.
    """
    raw = manifest.load()
    seeds = list(seeds)
    out = []
    for fraction in fractions:
        for seed in seeds:
            train, test, _ = prepare_split(raw, fraction, seed, normalize_target)
            model = train_confidence_net(train, config, seed, config_snapshot)
            summary = evaluate_model(model, test, manifest.name, fraction, seed, train.n_samples)
            logger.info("%s fraction=%g seed=%d inclusion=%.3f ann=%.3f", manifest.name, fraction, seed,
                        summary.inclusion_rate_confidence, summary.inclusion_rate_ann)
            out.append(summary)
    return out


def aggregate(summaries: Sequence[EvalSummary]) -> list[dict]:
    """Mean and sample standard deviation per (dataset, fraction) over seeds."""
    groups: dict[tuple, list[EvalSummary]] = {}
    for s in summaries:
        groups.setdefault((s.dataset, s.train_fraction), []).append(s)
    rows = []
    for (name, fraction), group in groups.items():
        row = {"dataset": name, "train_fraction": fraction, "n_seeds": len(group)}
        for metric in AGGREGATE_METRICS:
            values = [getattr(s, metric) for s in group]
            row[f"{metric}_mean"] = statistics.fmean(values)
            row[f"{metric}_std"] = statistics.stdev(values) if len(values) > 1 else 0.0
        rows.append(row)
    return rows


AGGREGATE_COLUMNS = ["dataset", "train_fraction", "n_seeds"] + [
    f"{m}_{stat}" for m in AGGREGATE_METRICS for stat in ("mean", "std")]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_summary_csv(path, summaries: Sequence[EvalSummary]) -> None:
    write_csv(path, SUMMARY_COLUMNS, (s.row() for s in summaries))


def write_records_csv(path, records: Sequence[EvalRecord]) -> None:
    write_csv(path, RECORD_COLUMNS, (asdict(r) for r in records))


def write_aggregate_csv(path, summaries: Sequence[EvalSummary]) -> None:
    write_csv(path, AGGREGATE_COLUMNS, aggregate(summaries))
