"""Run configuration: defaults, ``key=value`` files and command-line overrides.

Precedence is flag > config file > default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import DatasetManifest, load_manifest, parse_key_values
from .ensemble import ModelConfig
from .errors import DataError
from .gbt import TreeParams
from .nn import TrainConfig


@dataclass
class RunConfig:
    # dataset: a manifest file or a CSV path; evaluate accepts a comma-separated list
    dataset: str = ""
    target: str = ""
    drop: str = ""
    train_fraction: float = 0.9
    seed: int = 0
    # network
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    huber_delta: float = 1.0
    conv_channels: int = 16
    kernel_size: int = 3
    hidden_units: int = 100
    # boosted trees
    n_trees: int = 500
    max_depth: int = 4
    shrinkage: float = 0.1
    reg_lambda: float = 1.0
    min_samples_leaf: int = 1
    # ensemble
    memory_fraction: float = 1.0
    l_n_mode: str = "mae"
    normalize_target: bool = True
    # evaluate
    fractions: str = "0.9,0.55"
    seeds: str = "0,1,2,3,4"
    out: str = "out"

    def model_config(self) -> ModelConfig:
        train = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta1, self.beta2,
                            self.adam_eps, self.huber_delta, self.conv_channels, self.kernel_size,
                            self.hidden_units)
        trees = TreeParams(self.n_trees, self.max_depth, self.shrinkage, self.reg_lambda,
                           self.min_samples_leaf)
        return ModelConfig(train, trees, self.memory_fraction, self.l_n_mode)

    def snapshot(self) -> dict[str, str]:
        """Settings recorded in the model file. ``out`` is excluded so the
        output location never changes the model bytes."""
        return {f.name: _format(getattr(self, f.name)) for f in fields(self) if f.name != "out"}

    def fraction_list(self) -> list[float]:
        return [float(v) for v in self.fractions.split(",") if v.strip()]

    def seed_list(self) -> list[int]:
        return [int(v) for v in self.seeds.split(",") if v.strip()]

    def manifests(self) -> list[DatasetManifest]:
        paths = [p.strip() for p in self.dataset.split(",") if p.strip()]
        if not paths:
            raise DataError("no dataset given (use --dataset or dataset= in the config file)")
        return [self.manifest_for(p) for p in paths]

    def manifest_for(self, path: str) -> DatasetManifest:
        p = Path(path)
        drop = tuple(d.strip() for d in self.drop.split(",") if d.strip())
        if p.suffix.lower() == ".csv":
            return DatasetManifest(p.stem, p, self.target or "-1", drop)
        manifest = load_manifest(p)
        if self.target:
            manifest = DatasetManifest(manifest.name, manifest.path, self.target, manifest.drop + drop)
        elif drop:
            manifest = DatasetManifest(manifest.name, manifest.path, manifest.target, manifest.drop + drop)
        return manifest


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def coerce(name: str, value: str):
    kind = FIELD_TYPES.get(name)
    if kind is None:
        raise DataError(f"unknown config key {name!r}")
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise DataError(f"config key {name!r}: cannot parse {value!r} as {kind}") from None
    return value


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from an optional ``key=value`` file plus overrides.

    ``overrides`` values may be strings (parsed like file values) or already typed.
    """
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        for key, raw in parse_key_values(path.read_text(encoding="utf-8"), path).items():
            values[key] = coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**values)
