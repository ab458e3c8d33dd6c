"""Launch-profile-aware grey-box gain model.

Prediction runs in three steps:

1. ``nn1`` maps pump powers to the net gain at the reference total launch
   power ``p_ref_dbm`` (the base profile).
2. ``nn2`` maps (pump powers, total launch power - p_ref in dB) to three
   coefficients (offset, tilt, scale).
3. The base profile is transferred with ``G = b1 + b2 * n + b3 * G_base``
   where ``n = 1..n_ch`` is the channel index.

Only the *total* launch power enters the prediction; the per-channel profile
is deliberately ignored.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import SampleRecord, pair_ds2, records_as_arrays
from .errors import DimensionMismatch, EmptyInput, RankDeficient, SchemaError
from .mlp import Mlp, TrainConfig, train
from .physics import DEFAULT_PUMP_WAVELENGTHS_NM, ChannelGrid

BUNDLE_VERSION = 1
NN1_HIDDEN = (200,)
NN2_HIDDEN = (50, 30)
LABEL_SOURCES = ("oracle", "nn1")
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class TransferCoeffs:
    b1: float  # dB offset
    b2: float  # dB per channel index
    b3: float  # scale
    residual_rmse: float = 0.0
    rank_deficient: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.b3])


def _indices(n: int, grid: ChannelGrid | None) -> np.ndarray:
    if grid is not None and grid.n_ch != n:
        raise DimensionMismatch(f"profile has {n} channels, grid has {grid.n_ch}")
    return np.arange(1, n + 1, dtype=float)


def fit_transfer_coeffs(g, g_base, grid: ChannelGrid | None = None, fallback: bool = False) -> TransferCoeffs:
    """Least-squares (b1, b2, b3) of ``g ~ b1 + b2 * n + b3 * g_base`` via QR.

    A base profile that is (numerically) affine in the channel index makes
    the problem rank deficient: :class:`RankDeficient` is raised, or with
    ``fallback=True`` the scale is pinned to 1 and only offset and tilt are
    fitted.
    """
    g = np.asarray(g, dtype=float)
    g_base = np.asarray(g_base, dtype=float)
    if g.shape != g_base.shape or g.ndim != 1:
        raise DimensionMismatch("g and g_base must be vectors of equal length")
    if g.size < 3:
        raise DimensionMismatch("need at least 3 channels to fit 3 coefficients")
    n = _indices(g.size, grid)
    a = np.column_stack([np.ones_like(n), n, g_base])
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    if diag.min() <= _RANK_TOL * diag.max() * g.size:
        if not fallback:
            raise RankDeficient("base profile is affine in the channel index")
        q2, r2 = np.linalg.qr(a[:, :2])
        b1, b2 = solve_triangular(r2, q2.T @ (g - g_base))
        resid = g - (b1 + b2 * n + g_base)
        return TransferCoeffs(float(b1), float(b2), 1.0, float(np.sqrt(np.mean(resid**2))), True)
    b = solve_triangular(r, q.T @ g)
    resid = g - a @ b
    return TransferCoeffs(float(b[0]), float(b[1]), float(b[2]), float(np.sqrt(np.mean(resid**2))))


def apply_transfer(c, g_base, grid: ChannelGrid | None = None) -> np.ndarray:
    """Evaluate ``b1 + b2 * n + b3 * g_base``; ``c`` may be TransferCoeffs or (b1, b2, b3).

    Batched: ``g_base`` of shape (batch, n_ch) with ``c`` of shape (batch, 3).
    """
    g_base = np.asarray(g_base, dtype=float)
    coeffs = c.as_array() if isinstance(c, TransferCoeffs) else np.asarray(c, dtype=float)
    if coeffs.shape[-1] != 3:
        raise DimensionMismatch("transfer needs exactly three coefficients")
    n = _indices(g_base.shape[-1], grid)
    b = coeffs[..., :, None] if coeffs.ndim > 1 else coeffs[:, None]
    return b[..., 0, :] + b[..., 1, :] * n + b[..., 2, :] * g_base


@dataclass
class GreyboxModel:
    nn1: Mlp
    nn2: Mlp
    p_ref_dbm: float = 14.0
    grid: ChannelGrid = field(default_factory=ChannelGrid)
    pump_wavelengths_nm: tuple[float, ...] = DEFAULT_PUMP_WAVELENGTHS_NM
    pump_range_w: tuple[float, float] = (0.0, 0.2)
    metrics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nn1.n_out != self.grid.n_ch:
            raise DimensionMismatch("nn1 output width must equal the channel count")
        if self.nn1.n_in != len(self.pump_wavelengths_nm):
            raise DimensionMismatch("nn1 input width must equal the pump count")
        if self.nn2.n_in != len(self.pump_wavelengths_nm) + 1 or self.nn2.n_out != 3:
            raise DimensionMismatch("nn2 must map pumps + 1 inputs to 3 coefficients")

    def param_count(self) -> int:
        return self.nn1.param_count() + self.nn2.param_count()

    def extrapolates(self, pump_powers_w) -> bool:
        p = np.asarray(pump_powers_w, dtype=float)
        lo, hi = self.pump_range_w
        return bool(np.any(p < lo) or np.any(p > hi))

    def coefficients(self, pump_powers_w, total_launch_dbm) -> np.ndarray:
        pumps = np.atleast_2d(np.asarray(pump_powers_w, dtype=float))
        delta = np.broadcast_to(np.asarray(total_launch_dbm, dtype=float) - self.p_ref_dbm,
                                (pumps.shape[0],))
        return self.nn2.forward(np.column_stack([pumps, delta]))

    def to_dict(self) -> dict:
        return {
            "kind": "greybox",
            "schema_version": BUNDLE_VERSION,
            "p_ref_dbm": self.p_ref_dbm,
            "grid": {"n_ch": self.grid.n_ch, "start_freq_thz": self.grid.start_freq_thz,
                     "spacing_ghz": self.grid.spacing_ghz},
            "pump_wavelengths_nm": list(self.pump_wavelengths_nm),
            "pump_range_w": list(self.pump_range_w),
            "metrics": self.metrics,
            "provenance": self.provenance,
            "nn1": self.nn1.to_dict(),
            "nn2": self.nn2.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GreyboxModel":
        if obj.get("kind") != "greybox":
            raise SchemaError(f"not a greybox bundle (kind={obj.get('kind')!r})")
        if obj.get("schema_version") != BUNDLE_VERSION:
            raise SchemaError(f"unsupported bundle version {obj.get('schema_version')!r}")
        try:
            return cls(
                nn1=Mlp.from_dict(obj["nn1"]),
                nn2=Mlp.from_dict(obj["nn2"]),
                p_ref_dbm=float(obj["p_ref_dbm"]),
                grid=ChannelGrid(**obj["grid"]),
                pump_wavelengths_nm=tuple(obj["pump_wavelengths_nm"]),
                pump_range_w=tuple(obj["pump_range_w"]),
                metrics=obj.get("metrics", {}),
                provenance=obj.get("provenance", {}),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad greybox bundle: {exc}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GreyboxModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict(model: GreyboxModel, pump_powers_w, total_launch_dbm) -> np.ndarray:
    """Net gain from pump powers and the total launch power only.

    Accepts a single pump vector (returns one profile) or a batch.
    """
    pumps = np.asarray(pump_powers_w, dtype=float)
    single = pumps.ndim == 1
    pumps = np.atleast_2d(pumps)
    if pumps.shape[1] != model.nn1.n_in:
        raise DimensionMismatch(f"expected {model.nn1.n_in} pump powers, got {pumps.shape[1]}")
    g_base = model.nn1.forward(pumps)
    coeffs = model.coefficients(pumps, total_launch_dbm)
    g = apply_transfer(coeffs, g_base)
    return g[0] if single else g


def train_nn1(train_records: Sequence[SampleRecord], test_records: Sequence[SampleRecord],
              config: TrainConfig | None = None, p_ref_dbm: float = 14.0,
              total_tol_db: float = 0.01):
    """Base model: pump powers -> net gain at the reference total power.

    Returns ``(net, held-out RMSE in dB, history)``.
    """
    cfg = config or TrainConfig()
    if not train_records:
        raise EmptyInput("no ds1 training records")
    for r in list(train_records) + list(test_records):
        if abs(r.total_dbm - p_ref_dbm) > total_tol_db:
            raise ValueError(
                f"ds1 record {r.sample_id} has total {r.total_dbm:.4f} dBm, expected {p_ref_dbm}"
            )
    x, _, _, y = records_as_arrays(train_records)
    test = records_as_arrays(test_records) if test_records else None
    net = Mlp([x.shape[1], *NN1_HIDDEN, y.shape[1]], seed=cfg.seed)
    net, hist = train(net, (x, y), (test[0], test[3]) if test else None, cfg)
    if test:
        err = net.forward(test[0]) - test[3]
        rmse = float(np.mean(np.sqrt(np.mean(err**2, axis=1))))
    else:
        rmse = float("nan")
    return net, rmse, hist


def transfer_labels(ds2: Sequence[SampleRecord], ds1: Sequence[SampleRecord],
                    nn1: Mlp | None = None, label_source: str = "oracle",
                    p_ref_dbm: float = 14.0):
    """Features, fitted coefficient labels and fit residuals for ds2 records.

    Rank-deficient fits are dropped.  Returns ``(x, y, residuals, kept, dropped)``
    where ``kept`` indexes the surviving ds2 records.
    """
    if label_source not in LABEL_SOURCES:
        raise ValueError(f"label_source must be one of {LABEL_SOURCES}")
    partners = pair_ds2(ds1, ds2)
    if label_source == "nn1":
        if nn1 is None:
            raise ValueError("label_source='nn1' needs a trained nn1")
        bases = nn1.forward(np.array([p.pump_powers_w for p in partners]))
    else:
        bases = [p.gain for p in partners]
    x, y, resid, kept = [], [], [], []
    dropped = 0
    for i, (rec, base) in enumerate(zip(ds2, bases)):
        try:
            c = fit_transfer_coeffs(rec.gain, base)
        except RankDeficient:
            dropped += 1
            continue
        x.append(np.append(rec.pump_powers_w, rec.total_dbm - p_ref_dbm))
        y.append(c.as_array())
        resid.append(c.residual_rmse)
        kept.append(i)
    if dropped:
        warnings.warn(f"dropped {dropped} rank-deficient ds2 records")
    return np.array(x), np.array(y), np.array(resid), kept, dropped


def train_nn2(train_ds2: Sequence[SampleRecord], test_ds2: Sequence[SampleRecord],
              ds1: Sequence[SampleRecord], nn1: Mlp | None = None,
              config: TrainConfig | None = None, p_ref_dbm: float = 14.0,
              label_source: str = "oracle"):
    """Coefficient model trained on regression labels fitted per ds2 record.

    Returns ``(net, info)`` with the dropped count and label residuals.
    """
    cfg = config or TrainConfig()
    x, y, resid, _, dropped = transfer_labels(train_ds2, ds1, nn1, label_source, p_ref_dbm)
    if len(x) == 0:
        raise EmptyInput("no usable ds2 training records")
    test = None
    dropped_test = 0
    if test_ds2:
        xt, yt, rt, _, dropped_test = transfer_labels(test_ds2, ds1, nn1, label_source, p_ref_dbm)
        if len(xt):
            test = (xt, yt)
            resid = np.concatenate([resid, rt])
    net = Mlp([x.shape[1], *NN2_HIDDEN, 3], seed=cfg.seed)
    net, hist = train(net, (x, y), test, cfg)
    info = {
        "dropped": dropped + dropped_test,
        "label_residual_rmse_mean": float(np.mean(resid)),
        "label_residual_rmse_max": float(np.max(resid)),
        "history": hist,
    }
    return net, info


def train_greybox(ds1: Sequence[SampleRecord], ds2: Sequence[SampleRecord],
                  train_ids, test_ids, nn1_config: TrainConfig | None = None,
                  nn2_config: TrainConfig | None = None, p_ref_dbm: float = 14.0,
                  grid: ChannelGrid | None = None,
                  pump_wavelengths_nm: Sequence[float] = DEFAULT_PUMP_WAVELENGTHS_NM,
                  pump_range_w: tuple[float, float] = (0.0, 0.2),
                  label_source: str = "oracle") -> GreyboxModel:
    """Train both networks on the ds1/ds2 records whose (partner) ids fall in each split."""
    train_ids, test_ids = set(int(i) for i in train_ids), set(int(i) for i in test_ids)
    if train_ids & test_ids:
        raise ValueError("train and test ids overlap")
    d1_tr = [r for r in ds1 if r.sample_id in train_ids]
    d1_te = [r for r in ds1 if r.sample_id in test_ids]
    d2_tr = [r for r in ds2 if r.partner_id in train_ids]
    d2_te = [r for r in ds2 if r.partner_id in test_ids]
    nn1, rmse1, _ = train_nn1(d1_tr, d1_te, nn1_config, p_ref_dbm)
    nn2, info = train_nn2(d2_tr, d2_te, ds1, nn1, nn2_config, p_ref_dbm, label_source)
    grid = grid or ChannelGrid(n_ch=nn1.n_out)
    return GreyboxModel(
        nn1=nn1, nn2=nn2, p_ref_dbm=p_ref_dbm, grid=grid,
        pump_wavelengths_nm=tuple(pump_wavelengths_nm), pump_range_w=tuple(pump_range_w),
        metrics={
            "nn1_heldout_rmse_db": rmse1,
            "transfer_residual_rmse_mean_db": info["label_residual_rmse_mean"],
            "transfer_residual_rmse_max_db": info["label_residual_rmse_max"],
            "nn2_dropped": info["dropped"],
            "n_train": len(d1_tr),
            "n_test": len(d1_te),
        },
    )
