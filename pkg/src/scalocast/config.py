"""Experiment configuration: nested dataclasses with JSON load/save.

Every default describes the reference model, so an empty JSON object
(``{}``) is a complete configuration.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .cwt import DEFAULT_SCALES, FAMILIES
from .errors import ConfigError
from .features import parse_features
from .nn import TrainConfig

REFERENCE_FEATURES = ("c24.d", "c168.d", "t_feels.d", "t_amb.d", "t_min.d")
SEED_ENV = "SCALOCAST_SEED"


@dataclass
class DataConfig:
    demand: str | None = None
    weather: dict[str, str] = field(default_factory=dict)
    holidays: str | None = None
    tz: str = "Europe/Copenhagen"


@dataclass
class PreprocessConfig:
    repair: bool = True
    sg_window: int = 7
    sg_polyorder: int = 3
    alpha: float = 0.05
    period: int = 24


@dataclass
class WaveletConfig:
    family: str = "morl"
    scales: list[float] = field(default_factory=lambda: list(DEFAULT_SCALES))


@dataclass
class ModelConfig:
    filters: list[int] = field(default_factory=lambda: [32, 64, 128])
    dense: list[int] = field(default_factory=lambda: [1024, 1024])
    dropout: float = 0.1
    pooling: bool = False


@dataclass
class SplitConfig:
    test_days: int = 364
    train_fraction: float = 0.8


@dataclass
class SweepConfig:
    """Value lists for a cartesian hyperparameter sweep; empty means 'keep the base value'."""

    family: list[str] = field(default_factory=list)
    dropout: list[float] = field(default_factory=list)
    dense: list[list[int]] = field(default_factory=list)
    pooling: list[bool] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    features: list[str] = field(default_factory=lambda: list(REFERENCE_FEATURES))
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    variants: dict[str, list[str]] = field(default_factory=dict)
    baselines: bool = True

    def validate(self) -> "ExperimentConfig":
        parse_features(self.features)
        for feats in self.variants.values():
            parse_features(feats)
        if self.wavelet.family not in FAMILIES:
            raise ConfigError(f"unknown wavelet family {self.wavelet.family!r}")
        if not self.wavelet.scales or any(a <= 0 for a in self.wavelet.scales):
            raise ConfigError("wavelet scales must be a non-empty list of positive numbers")
        m = self.model
        if not m.filters or any(f < 1 for f in m.filters) or any(d < 1 for d in m.dense):
            raise ConfigError("filter and dense widths must be positive")
        if not 0 <= m.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {m.dropout}")
        t = self.training
        if t.lr <= 0 or t.batch_size < 1 or t.max_epochs < 1 or t.patience < 1:
            raise ConfigError("training lr, batch_size, max_epochs and patience must be positive")
        if not 0 < t.lr_factor <= 1:
            raise ConfigError("lr_factor must lie in (0, 1]")
        if not 0 < self.split.train_fraction < 1 or self.split.test_days < 0:
            raise ConfigError("train_fraction must lie in (0, 1) and test_days be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields or dotted paths (``"model.dropout"``) overridden."""
        d = self.to_dict()
        for key, value in changes.items():
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return from_dict(d)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{path}.{name}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_NESTED = {(ExperimentConfig, "data"): DataConfig,
           (ExperimentConfig, "preprocess"): PreprocessConfig,
           (ExperimentConfig, "wavelet"): WaveletConfig,
           (ExperimentConfig, "model"): ModelConfig,
           (ExperimentConfig, "training"): TrainConfig,
           (ExperimentConfig, "split"): SplitConfig,
           (ExperimentConfig, "sweep"): SweepConfig}


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path=None, env: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (defaults when ``path`` is None); ``SCALOCAST_SEED`` overrides the seed."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = from_dict(data)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg
