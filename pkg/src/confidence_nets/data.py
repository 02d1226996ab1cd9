"""CSV ingestion, min-max normalization and seeded train/test splits."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import DataError

ColumnSelector = Union[str, int]


@dataclass(frozen=True)
class RawDataset:
    """Numeric table straight from a CSV file, in original units."""

    feature_names: list[str]
    rows: np.ndarray
    target_index: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(self.feature_names):
            raise DataError(
                f"rows have shape {rows.shape}, expected {len(self.feature_names)} columns"
            )
        if not 0 <= self.target_index < rows.shape[1]:
            raise DataError(f"target index {self.target_index} out of range")
        object.__setattr__(self, "rows", rows)

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    @property
    def n_columns(self) -> int:
        return self.rows.shape[1]

    @property
    def target_name(self) -> str:
        return self.feature_names[self.target_index]

    @property
    def input_names(self) -> list[str]:
        return [n for i, n in enumerate(self.feature_names) if i != self.target_index]

    @property
    def X(self) -> np.ndarray:
        return np.delete(self.rows, self.target_index, axis=1)

    @property
    def y(self) -> np.ndarray:
        return self.rows[:, self.target_index].copy()

    def take(self, indices) -> "RawDataset":
        return RawDataset(list(self.feature_names), self.rows[np.asarray(indices, dtype=np.intp)], self.target_index)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-column minima and maxima, fitted on training rows only.

    ``mins``/``maxs`` follow the column order of the source :class:`RawDataset`,
    target column included.
    """

    mins: np.ndarray
    maxs: np.ndarray
    target_index: int

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValueError("mins and maxs must be 1-d arrays of equal length")
        if np.any(mins > maxs):
            raise ValueError("min > max for some column")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def n_columns(self) -> int:
        return self.mins.shape[0]

    @property
    def input_columns(self) -> np.ndarray:
        return np.array([i for i in range(self.n_columns) if i != self.target_index], dtype=np.intp)

    @property
    def target_range(self) -> float:
        return float(self.maxs[self.target_index] - self.mins[self.target_index])


@dataclass(frozen=True)
class Dataset:
    """Normalized inputs ``X`` and target ``y``, with the params that produced them."""

    X: np.ndarray
    y: np.ndarray
    params: NormalizationParams
    feature_names: list[str] = field(default_factory=list)
    target_name: str = ""

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_x(self) -> int:
        return self.X.shape[1]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.params, list(self.feature_names), self.target_name)

    def content_hash(self) -> str:
        """SHA-256 over the normalized arrays; identifies a training split."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.y, dtype="<f8").tobytes())
        return h.hexdigest()


def _resolve_column(header: Sequence[str], selector: ColumnSelector, path) -> int:
    if isinstance(selector, int):
        if not -len(header) <= selector < len(header):
            raise DataError(f"{path}: target column index {selector} not found")
        return selector % len(header)
    if selector in header:
        return list(header).index(selector)
    if selector.lstrip("-").isdigit():
        return _resolve_column(header, int(selector), path)
    raise DataError(f"{path}: target column {selector!r} not found (columns: {', '.join(header)})")


def read_table(path, allow_empty: bool = False) -> tuple[list[str], np.ndarray]:
    """Read a header + numeric-rows CSV. Cells must parse as floats."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(record)} cells, header has {len(header)}"
                )
            values = []
            for col, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite cell at row {lineno}, column {col!r}")
                values.append(v)
            rows.append(values)
    if not rows and not allow_empty:
        raise DataError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, table


def load_csv(path, target: ColumnSelector, drop: Sequence[str] = ()) -> RawDataset:
    """Load a comma-separated numeric table and resolve the target column.

    ``target`` is a column name or a (possibly negative) integer index.
    Columns listed in ``drop`` are removed before the target is resolved.
    """
    header, table = read_table(path)
    missing = [d for d in drop if d not in header]
    if missing:
        raise DataError(f"{path}: cannot drop unknown column(s) {missing}")
    keep = [i for i, h in enumerate(header) if h not in set(drop)]
    header = [header[i] for i in keep]
    table = table[:, keep]
    target_index = _resolve_column(header, target, path)
    return RawDataset(header, table, target_index)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    path: Path
    target: str
    drop: tuple[str, ...] = ()

    def load(self) -> RawDataset:
        return load_csv(self.path, self.target, self.drop)


def parse_key_values(text: str, source="<string>") -> dict[str, str]:
    """Parse ``key=value`` lines. Blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_manifest(path) -> DatasetManifest:
    """Read a dataset manifest (keys: ``path``, ``target``, optional ``name``, ``drop``).

    A relative ``path`` is resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    kv = parse_key_values(path.read_text(encoding="utf-8"), path)
    for key in ("path", "target"):
        if key not in kv:
            raise DataError(f"{path}: manifest missing required key {key!r}")
    data_path = Path(kv["path"])
    if not data_path.is_absolute():
        data_path = path.parent / data_path
    drop = tuple(d.strip() for d in kv.get("drop", "").split(",") if d.strip())
    return DatasetManifest(kv.get("name", path.stem), data_path, kv["target"], drop)


def fit_normalizer(rows, target_index: int = -1, normalize_target: bool = True) -> NormalizationParams:
    """Column-wise min/max over the given (training) rows.

    With ``normalize_target=False`` the target column gets min 0 / max 1,
    which makes its normalization the identity.
    """
    rows = np.asarray(rows.rows if isinstance(rows, RawDataset) else rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("fit_normalizer needs at least one row")
    target_index %= rows.shape[1]
    mins = rows.min(axis=0)
    maxs = rows.max(axis=0)
    if not normalize_target:
        mins[target_index], maxs[target_index] = 0.0, 1.0
    return NormalizationParams(mins, maxs, target_index)


def _scale_columns(values: np.ndarray, mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    # constant columns map to 0
    return np.where(span > 0, (values - mins) / safe, 0.0)


def normalize(rows, params: NormalizationParams) -> Dataset:
    """Apply min-max scaling. Values outside the fitted range are not clipped."""
    names, target_name = [], ""
    if isinstance(rows, RawDataset):
        names, target_name = rows.input_names, rows.target_name
        rows = rows.rows
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != params.n_columns:
        raise ValueError(
            f"dimension mismatch: rows have {rows.shape[-1]} columns, params cover {params.n_columns}"
        )
    scaled = _scale_columns(rows, params.mins, params.maxs)
    X = np.delete(scaled, params.target_index, axis=1)
    y = scaled[:, params.target_index].copy()
    return Dataset(X, y, params, names, target_name)


def normalize_inputs(X_raw, params: NormalizationParams) -> np.ndarray:
    """Scale an input-only matrix (target column absent)."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    cols = params.input_columns
    if X_raw.shape[1] != cols.size:
        raise ValueError(f"dimension mismatch: got {X_raw.shape[1]} inputs, expected {cols.size}")
    return _scale_columns(X_raw, params.mins[cols], params.maxs[cols])


def denormalize(value, column: int, params: NormalizationParams):
    """Inverse of :func:`normalize` for one column. Works on scalars and arrays."""
    lo, hi = params.mins[column], params.maxs[column]
    out = np.asarray(value, dtype=np.float64) * (hi - lo) + lo
    return float(out) if out.ndim == 0 else out


def denormalize_target(value, params: NormalizationParams):
    return denormalize(value, params.target_index, params)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then a prefix/suffix cut at ``round(n * train_fraction)``.

    Rounding is half-up.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(n * train_fraction + 0.5))
    if n_train < 1 or n_train >= n:
        raise DataError(
            f"train_fraction {train_fraction} on {n} rows leaves an empty side "
            f"({n_train} train / {n - n_train} test)"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train:]


def split(dataset, train_fraction: float, seed: int):
    """Split a :class:`Dataset` or :class:`RawDataset` into (train, test)."""
    train_idx, test_idx = split_indices(dataset.n_samples, train_fraction, seed)
    return dataset.take(train_idx), dataset.take(test_idx)


def prepare_split(raw: RawDataset, train_fraction: float, seed: int,
                  normalize_target: bool = True) -> tuple[Dataset, Dataset, np.ndarray]:
    """Split raw rows, fit the normalizer on the training side only, scale both sides.

    Returns ``(train, test, train_indices)``.
    """
    train_idx, test_idx = split_indices(raw.n_samples, train_fraction, seed)
    raw_train, raw_test = raw.take(train_idx), raw.take(test_idx)
    params = fit_normalizer(raw_train.rows, raw.target_index, normalize_target)
    return normalize(raw_train, params), normalize(raw_test, params), train_idx
