"""Two-phase confidence-net training and interval prediction.

Phase one fits the network on ``(X, y)``. Its training predictions give the
bias factor ``omega`` and the adjusted residuals ``E = omega * yhat - y``,
which a boosted forest then learns from the same inputs. At prediction time

    y_f   = yhat - yhat_c
    y_e   = yhat_c + d_e - l_n
    interval = y_f +/- |y_e|

where ``d_e`` is the nearest-neighbour distance from the query to the stored
training inputs. Everything runs in normalized units and is mapped back to
target units at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, NormalizationParams, denormalize_target, normalize_inputs
from .gbt import GradientBoostedForest, TreeParams, fit_forest
from .nn import NeuralNet, TrainConfig, TrainReport, train_network

logger = logging.getLogger(__name__)

_DISTANCE_CHUNK = 256


@dataclass(frozen=True)
class MemoryBank:
    """Training inputs kept for novelty scoring. Targets are never stored."""

    stored_inputs: np.ndarray
    l_n: float
    memory_fraction: float = 1.0

    @property
    def size(self) -> int:
        return self.stored_inputs.shape[0]


L_N_MODES = ("mae", "loss")


@dataclass
class ModelConfig:
    """``l_n_mode`` picks the stored training-error constant: ``"mae"`` is the mean
    absolute training residual, ``"loss"`` the mean training Huber loss."""

    train: TrainConfig = field(default_factory=TrainConfig)
    trees: TreeParams = field(default_factory=TreeParams)
    memory_fraction: float = 1.0
    l_n_mode: str = "mae"

    def __post_init__(self):
        if self.l_n_mode not in L_N_MODES:
            raise ValueError(f"l_n_mode must be one of {L_N_MODES}, got {self.l_n_mode!r}")


@dataclass
class ConfidenceNetModel:
    net: NeuralNet
    forest: GradientBoostedForest
    memory: MemoryBank
    omega: float
    normalization: NormalizationParams
    feature_names: list[str] = field(default_factory=list)
    target_name: str = ""
    config_snapshot: dict[str, str] = field(default_factory=dict)
    split_hash: str = ""
    report: TrainReport | None = None

    @property
    def l_n(self) -> float:
        return self.memory.l_n

    @property
    def n_x(self) -> int:
        return self.memory.stored_inputs.shape[1]


@dataclass(frozen=True)
class PredictionInterval:
    """Corrected prediction and interval in target units; diagnostics stay normalized."""

    y_f: float
    half_width: float
    lower: float
    upper: float
    y_hat: float
    y_c: float
    d_e: float
    l_n: float


def compute_omega(predictions, targets) -> float:
    """One minus the mean signed residual of the predictions."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or p.shape != t.shape:
        raise ValueError(f"need equal non-empty lengths, got {p.size} and {t.size}")
    return float(1.0 - np.mean(p - t))


def build_error_dataset(X, predictions, targets, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Inputs paired with adjusted residuals ``omega * yhat - y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if not (X.shape[0] == p.size == t.size):
        raise ValueError(f"length mismatch: {X.shape[0]} rows, {p.size} predictions, {t.size} targets")
    return X, omega * p - t


def dissimilarity_batch(X, memory: MemoryBank) -> np.ndarray:
    """Minimum Euclidean distance from each query row to the memory, divided by sqrt(n_x)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    stored = memory.stored_inputs
    if stored.shape[0] == 0:
        raise ValueError("memory bank is empty")
    if X.shape[1] != stored.shape[1]:
        raise ValueError(f"dimension mismatch: query has {X.shape[1]} features, memory {stored.shape[1]}")
    out = np.empty(X.shape[0])
    # explicit differences, not the |a|^2 + |b|^2 - 2ab expansion, so memorized rows give exactly 0
    for start in range(0, X.shape[0], _DISTANCE_CHUNK):
        q = X[start:start + _DISTANCE_CHUNK]
        diff = q[:, None, :] - stored[None, :, :]
        out[start:start + q.shape[0]] = np.sqrt(np.einsum("qnk,qnk->qn", diff, diff).min(axis=1))
    return out / np.sqrt(X.shape[1])


def dissimilarity(x_p, memory: MemoryBank) -> float:
    x_p = np.asarray(x_p, dtype=np.float64)
    if x_p.ndim != 1:
        raise ValueError("dissimilarity takes a single query vector")
    return float(dissimilarity_batch(x_p[None], memory)[0])


def _memory_rows(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"memory_fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.arange(n)
    k = max(1, int(round(n * fraction)))
    return np.sort(rng.choice(n, size=k, replace=False))


def train_confidence_net(train: Dataset, config: ModelConfig | None = None, seed: int = 0,
                         config_snapshot: dict[str, str] | None = None) -> ConfidenceNetModel:
    """Fit the network, derive omega and the error table, fit the forest, fill the memory.

    All randomness comes from ``seed``: one child stream for the network and
    one for memory subsampling.
    """
    config = config or ModelConfig()
    if train.n_samples == 0:
        raise ValueError("empty training set")
    net_seed, memory_seed = np.random.SeedSequence(seed).spawn(2)
    net, report = train_network(train.X, train.y, config.train, net_seed)
    yhat = net.predict(train.X)
    omega = compute_omega(yhat, train.y)
    X_e, E = build_error_dataset(train.X, yhat, train.y, omega)
    forest = fit_forest(X_e, E, config.trees)
    rows = _memory_rows(train.n_samples, config.memory_fraction, np.random.default_rng(memory_seed))
    l_n = report.l_n if config.l_n_mode == "mae" else report.final_loss
    memory = MemoryBank(train.X[rows].copy(), l_n, config.memory_fraction)
    logger.info("trained confidence net: l_n=%.6g omega=%.6g memory=%d", l_n, omega, memory.size)
    params = train.params
    return ConfidenceNetModel(net, forest, memory, omega, params, list(train.feature_names), train.target_name,
                              dict(config_snapshot or {}), train.content_hash(), report)


def _assemble(model: ConfidenceNetModel, yhat, y_c, d_e) -> list[PredictionInterval]:
    y_f = yhat - y_c
    y_e = y_c + d_e - model.l_n
    half = np.abs(y_e)
    scale = model.normalization.target_range
    y_f_raw = denormalize_target(y_f, model.normalization)
    half_raw = half * scale
    out = []
    for i in range(y_f.shape[0]):
        c, h = float(y_f_raw[i]), float(half_raw[i])
        out.append(PredictionInterval(c, h, c - h, c + h, float(yhat[i]), float(y_c[i]),
                                      float(d_e[i]), model.l_n))
    return out


def predict_normalized(model: ConfidenceNetModel, X) -> list[PredictionInterval]:
    """Intervals for inputs that are already normalized."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return []
    if X.shape[1] != model.n_x:
        raise ValueError(f"schema mismatch: got {X.shape[1]} features, model expects {model.n_x}")
    yhat = model.net.predict(X)
    y_c = model.forest.predict(X)
    d_e = dissimilarity_batch(X, model.memory)
    return _assemble(model, yhat, y_c, d_e)


def predict_intervals(model: ConfidenceNetModel, X_raw) -> list[PredictionInterval]:
    """Intervals for a batch of inputs in original units."""
    X_raw = np.asarray(X_raw, dtype=np.float64)
    if X_raw.size == 0:
        return []
    return predict_normalized(model, normalize_inputs(X_raw, model.normalization))


def predict_interval(model: ConfidenceNetModel, x_raw) -> PredictionInterval:
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim != 1:
        raise ValueError("predict_interval takes one input vector; use predict_intervals for batches")
    return predict_intervals(model, x_raw[None])[0]
