"""Run configuration: a nested YAML mapping with defaults for every key.

Example (every section and key optional)::

    fiber:
      length_km: 80
      atten_db_per_km: 0.2
      raman_peak_efficiency: 0.39     # 1/(W km) at reference_pump_freq_thz
      raman_peak_shift_thz: 13.2
      reference_pump_freq_thz: 206
    grid: {n_ch: 200, start_freq_thz: 186.025, spacing_ghz: 50}
    pumps:
      wavelengths_nm: [1426, 1440, 1454, 1472, 1496]
      direction: backward
    solver: {step_m: 50, tol_db: 1.0e-4, max_iter: 50, relaxation: 0.5}
    dataset:
      p_ref_dbm: 14
      ripple_db: 3
      pump_max_w: 0.2
      ds2_totals_dbm: [15, 16, 17, 18, 19, 20, 21, 22, 23]
      validation_totals_dbm: [14, 15, 16, 17, 18, 19, 20, 21, 22, 23]
      seed: 1
      validation_seed: 2
      chunk_size: 64
    training:
      label_source: oracle            # or nn1
      train_fraction: 0.8
      nn1: {learning_rate: 1.0e-3, batch_size: 32, max_epochs: 2000, early_stop_patience: 100, seed: 0}
      nn2: {}
      conventional: {}
    evaluation: {sizes: [100, 200, 400, 640], seed: 0}
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .evaluation import SweepSettings
from .mlp import TrainConfig
from .physics import (
    DEFAULT_PUMP_WAVELENGTHS_NM,
    AmplifierSetup,
    ChannelGrid,
    FiberSpec,
    SolverOptions,
)

CONFIG_ENV = "GREYRAMAN_CONFIG"


@dataclass
class PumpConfig:
    wavelengths_nm: tuple[float, ...] = DEFAULT_PUMP_WAVELENGTHS_NM
    direction: str = "backward"


@dataclass
class DatasetConfig:
    p_ref_dbm: float = 14.0
    ripple_db: float = 3.0
    pump_max_w: float = 0.2
    ds2_totals_dbm: tuple[float, ...] = tuple(float(t) for t in range(15, 24))
    validation_totals_dbm: tuple[float, ...] = tuple(float(t) for t in range(14, 24))
    seed: int = 1
    validation_seed: int = 2
    chunk_size: int = 64


@dataclass
class TrainingConfig:
    label_source: str = "oracle"
    train_fraction: float = 0.8
    nn1: TrainConfig = field(default_factory=TrainConfig)
    nn2: TrainConfig = field(default_factory=TrainConfig)
    conventional: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EvaluationConfig:
    sizes: tuple[int, ...] = (100, 200, 400, 640)
    seed: int = 0


@dataclass
class RunConfig:
    fiber: FiberSpec = field(default_factory=FiberSpec)
    grid: ChannelGrid = field(default_factory=ChannelGrid)
    pumps: PumpConfig = field(default_factory=PumpConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    @property
    def setup(self) -> AmplifierSetup:
        return AmplifierSetup(
            fiber=self.fiber,
            grid=self.grid,
            pump_wavelengths_nm=tuple(self.pumps.wavelengths_nm),
            pump_direction=self.pumps.direction,
            solver=self.solver,
        )

    @property
    def sweep_settings(self) -> SweepSettings:
        t = self.training
        return SweepSettings(nn1=t.nn1, nn2=t.nn2, conventional=t.conventional,
                             p_ref_dbm=self.dataset.p_ref_dbm, train_fraction=t.train_fraction,
                             label_source=t.label_source)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_NESTED = {
    (RunConfig, "fiber"): FiberSpec,
    (RunConfig, "grid"): ChannelGrid,
    (RunConfig, "pumps"): PumpConfig,
    (RunConfig, "solver"): SolverOptions,
    (RunConfig, "dataset"): DatasetConfig,
    (RunConfig, "training"): TrainingConfig,
    (RunConfig, "evaluation"): EvaluationConfig,
    (TrainingConfig, "nn1"): TrainConfig,
    (TrainingConfig, "nn2"): TrainConfig,
    (TrainingConfig, "conventional"): TrainConfig,
}


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "config")
    if cfg.pumps.direction not in ("forward", "backward"):
        raise ConfigError(f"config.pumps: unknown direction {cfg.pumps.direction!r}")
    if cfg.training.label_source not in ("oracle", "nn1"):
        raise ConfigError(f"config.training: unknown label_source {cfg.training.label_source!r}")
    if not 0 < cfg.training.train_fraction <= 1:
        raise ConfigError("config.training: train_fraction must lie in (0, 1]")
    if cfg.dataset.ripple_db < 0 or cfg.dataset.pump_max_w <= 0:
        raise ConfigError("config.dataset: ripple_db must be >= 0 and pump_max_w > 0")
    return cfg


def load_config(path=None) -> RunConfig:
    """Read a YAML config; ``None`` falls back to $GREYRAMAN_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
        if not path:
            return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return config_from_dict(data)
