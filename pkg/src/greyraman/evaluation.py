"""Error metrics, empirical CDFs and the data-set-size sweep.

Percentiles use linear interpolation between order statistics (numpy's
``"linear"`` method): for sorted errors ``e_0 <= ... <= e_{n-1}`` the p-th
percentile is ``e_k + (e_{k+1} - e_k) * frac`` with ``k + frac = p/100 * (n-1)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baseline import BaselineModel, predict_conventional, train_conventional
from .dataset import SampleRecord, records_as_arrays, split_indices
from .errors import DimensionMismatch, EmptyInput
from .greybox import GreyboxModel, predict, train_greybox
from .mlp import TrainConfig

METHODS = ("greybox", "conventional")


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"shapes {pred.shape} and {truth.shape} differ")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def rmse_rows(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"shapes {pred.shape} and {truth.shape} differ")
    return np.sqrt(np.mean((pred - truth) ** 2, axis=-1))


def cdf(errors) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and cumulative fractions k/n, k = 1..n."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    if e.size == 0:
        raise EmptyInput("cdf of an empty error vector")
    return e, np.arange(1, e.size + 1) / e.size


def percentile(errors, p: float) -> float:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise EmptyInput("percentile of an empty error vector")
    return float(np.percentile(e, p, method="linear"))


@dataclass
class EvalReport:
    method_tag: str
    dataset_size: int
    per_sample_rmse_db: list[float]
    mean_rmse_db: float
    max_rmse_db: float
    percentile_90_db: float
    seed: int = 0
    config_digest: str = ""
    sample_ids: list[int] = field(default_factory=list)

    @classmethod
    def from_errors(cls, method_tag, dataset_size, errors, seed=0, config_digest="", sample_ids=()):
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise EmptyInput("no validation errors")
        return cls(
            method_tag=method_tag,
            dataset_size=int(dataset_size),
            per_sample_rmse_db=e.tolist(),
            mean_rmse_db=float(e.mean()),
            max_rmse_db=float(e.max()),
            percentile_90_db=percentile(e, 90),
            seed=int(seed),
            config_digest=config_digest,
            sample_ids=[int(i) for i in sample_ids],
        )

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_sample_rmse_db")
        d.pop("sample_ids")
        return d


def validation_errors(model, validation: Sequence[SampleRecord]) -> np.ndarray:
    """Per-record RMSE of a greybox or conventional model on validation records."""
    if not validation:
        raise EmptyInput("empty validation set")
    pumps, launch, totals, gains = records_as_arrays(validation)
    if isinstance(model, GreyboxModel):
        pred = predict(model, pumps, totals)
    elif isinstance(model, BaselineModel):
        pred = predict_conventional(model, pumps, launch)
    else:
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    return rmse_rows(pred, gains)


def method_of(model) -> str:
    return "greybox" if isinstance(model, GreyboxModel) else "conventional"


def evaluate_model(model, validation, dataset_size=0, seed=0, config_digest="") -> EvalReport:
    errors = validation_errors(model, validation)
    return EvalReport.from_errors(method_of(model), dataset_size, errors, seed, config_digest,
                                  [r.sample_id for r in validation])


def nested_subset_ids(ds1: Sequence[SampleRecord], size: int, seed: int) -> list[int]:
    """First ``size`` ids of one fixed permutation, so smaller subsets nest in larger ones."""
    if size > len(ds1):
        raise ValueError(f"size {size} exceeds the {len(ds1)} available ds1 records")
    ids = sorted(r.sample_id for r in ds1)
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA11])).permutation(len(ids))
    return sorted(ids[i] for i in perm[:size])


def budget_split(ids: Sequence[int], seed: int, train_fraction: float = 0.8):
    """Train/test id sets for a subset; the 80/20 split depends only on (seed, size)."""
    ids = list(ids)
    tr, te = split_indices(len(ids), seed, train_fraction)
    return [ids[i] for i in tr], [ids[i] for i in te]


@dataclass
class SweepSettings:
    nn1: TrainConfig = field(default_factory=TrainConfig)
    nn2: TrainConfig = field(default_factory=TrainConfig)
    conventional: TrainConfig = field(default_factory=TrainConfig)
    p_ref_dbm: float = 14.0
    train_fraction: float = 0.8
    label_source: str = "oracle"


def train_pair(ds1, ds2, ids, seed, settings: SweepSettings):
    """Greybox and conventional models trained on the same simulations.

    The greybox sees ds1[ids] and their ds2 partners; the conventional model
    sees the union of exactly those records, split along the same ids.
    """
    tr, te = budget_split(ids, seed, settings.train_fraction)
    gb = train_greybox(ds1, ds2, tr, te, settings.nn1, settings.nn2, settings.p_ref_dbm,
                       label_source=settings.label_source)
    tr_s, te_s = set(tr), set(te)
    conv_tr = [r for r in ds1 if r.sample_id in tr_s] + [r for r in ds2 if r.partner_id in tr_s]
    conv_te = [r for r in ds1 if r.sample_id in te_s] + [r for r in ds2 if r.partner_id in te_s]
    conv = train_conventional(conv_tr, conv_te, settings.conventional)
    return gb, conv


def sweep(ds1, ds2, validation, dataset_sizes: Sequence[int], master_seed: int = 0,
          settings: SweepSettings | None = None, config_digest: str = "",
          progress=None) -> list[EvalReport]:
    """Reports for both methods at every size, all on the same validation records."""
    settings = settings or SweepSettings()
    if not validation:
        raise EmptyInput("empty validation set")
    reports = []
    for size in dataset_sizes:
        ids = nested_subset_ids(ds1, size, master_seed)
        gb, conv = train_pair(ds1, ds2, ids, master_seed, settings)
        for model in (gb, conv):
            reports.append(evaluate_model(model, validation, size, master_seed, config_digest))
        if progress is not None:
            progress(size, reports[-2:])
    return reports


def write_report(reports: Sequence[EvalReport], out_dir, provenance: dict | None = None) -> list[Path]:
    """``summary.json`` plus per-(method, size) error and CDF tables as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {
        "tool_version": __version__,
        "provenance": provenance or {},
        "reports": [r.summary() for r in reports],
    }
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    for r in reports:
        stem = f"{r.method_tag}_{r.dataset_size}"
        path = out / f"errors_{stem}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "rmse_db"])
            ids = r.sample_ids or range(len(r.per_sample_rmse_db))
            for sid, e in zip(ids, r.per_sample_rmse_db):
                w.writerow([sid, repr(e)])
        written.append(path)
        path = out / f"cdf_{stem}.csv"
        values, fractions = cdf(r.per_sample_rmse_db)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rmse_db", "cumulative_fraction"])
            for v, f in zip(values, fractions):
                w.writerow([repr(float(v)), repr(float(f))])
        written.append(path)
    return written


def read_summary(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    return json.loads(p.read_text(encoding="utf-8"))
