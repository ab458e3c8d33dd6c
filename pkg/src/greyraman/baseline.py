"""Conventional black-box model: one network fed with pumps and the full launch profile.

Input ordering is fixed: pump powers in the configured wavelength order,
then per-channel launch powers (dBm) in ascending frequency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import SampleRecord, records_as_arrays
from .errors import DimensionMismatch, EmptyInput, SchemaError
from .mlp import Mlp, TrainConfig, train
from .physics import DEFAULT_PUMP_WAVELENGTHS_NM, ChannelGrid

BUNDLE_VERSION = 1
HIDDEN = (200,)


@dataclass
class BaselineModel:
    nn: Mlp
    grid: ChannelGrid = field(default_factory=ChannelGrid)
    pump_wavelengths_nm: tuple[float, ...] = DEFAULT_PUMP_WAVELENGTHS_NM
    metrics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nn.n_in != self.grid.n_ch + len(self.pump_wavelengths_nm):
            raise DimensionMismatch("network input must be pumps + channels wide")
        if self.nn.n_out != self.grid.n_ch:
            raise DimensionMismatch("network output must be one value per channel")

    def param_count(self) -> int:
        return self.nn.param_count()

    def to_dict(self) -> dict:
        return {
            "kind": "conventional",
            "schema_version": BUNDLE_VERSION,
            "grid": {"n_ch": self.grid.n_ch, "start_freq_thz": self.grid.start_freq_thz,
                     "spacing_ghz": self.grid.spacing_ghz},
            "pump_wavelengths_nm": list(self.pump_wavelengths_nm),
            "metrics": self.metrics,
            "provenance": self.provenance,
            "nn": self.nn.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BaselineModel":
        if obj.get("kind") != "conventional":
            raise SchemaError(f"not a conventional bundle (kind={obj.get('kind')!r})")
        if obj.get("schema_version") != BUNDLE_VERSION:
            raise SchemaError(f"unsupported bundle version {obj.get('schema_version')!r}")
        try:
            return cls(
                nn=Mlp.from_dict(obj["nn"]),
                grid=ChannelGrid(**obj["grid"]),
                pump_wavelengths_nm=tuple(obj["pump_wavelengths_nm"]),
                metrics=obj.get("metrics", {}),
                provenance=obj.get("provenance", {}),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad conventional bundle: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "BaselineModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def features(pump_powers_w, launch_dbm) -> np.ndarray:
    pumps = np.atleast_2d(np.asarray(pump_powers_w, dtype=float))
    launch = np.atleast_2d(np.asarray(launch_dbm, dtype=float))
    return np.hstack([pumps, launch])


def train_conventional(train_records: Sequence[SampleRecord], test_records: Sequence[SampleRecord],
                       config: TrainConfig | None = None, grid: ChannelGrid | None = None,
                       pump_wavelengths_nm: Sequence[float] = DEFAULT_PUMP_WAVELENGTHS_NM) -> BaselineModel:
    cfg = config or TrainConfig()
    if not train_records:
        raise EmptyInput("no training records")
    pumps, launch, _, gains = records_as_arrays(train_records)
    x = features(pumps, launch)
    test = None
    if test_records:
        tp, tl, _, tg = records_as_arrays(test_records)
        test = (features(tp, tl), tg)
    net = Mlp([x.shape[1], *HIDDEN, gains.shape[1]], seed=cfg.seed)
    net, hist = train(net, (x, gains), test, cfg)
    metrics = {"n_train": len(train_records), "n_test": len(test_records or [])}
    if test is not None:
        err = net.forward(test[0]) - test[1]
        metrics["heldout_rmse_db"] = float(np.mean(np.sqrt(np.mean(err**2, axis=1))))
    return BaselineModel(
        nn=net, grid=grid or ChannelGrid(n_ch=gains.shape[1]),
        pump_wavelengths_nm=tuple(pump_wavelengths_nm), metrics=metrics,
    )


def predict_conventional(model: BaselineModel, pump_powers_w, launch) -> np.ndarray:
    launch_dbm = np.asarray(getattr(launch, "per_channel_dbm", launch), dtype=float)
    if launch_dbm.shape[-1] != model.grid.n_ch:
        raise DimensionMismatch(
            f"launch profile has {launch_dbm.shape[-1]} channels, model expects {model.grid.n_ch}"
        )
    single = launch_dbm.ndim == 1
    out = model.nn.forward(features(pump_powers_w, launch_dbm))
    return out[0] if single else out



