"""Sampling, oracle labelling and persistence of training/validation records.

Three record families exist:

* ``ds1``: random pump powers, rippled launch profiles at the reference total
  power ``p_ref_dbm``.
* ``ds2``: one record per ds1 record with the *same* pump powers but a total
  launch power drawn from ``ds2_totals_dbm``.  ``partner_id`` points back to
  the ds1 ``sample_id``.
* ``validation``: independent draws over ``validation_totals_dbm``.

Every record carries its own ``rng_seed``, derived from the master seed, the
family and the sample id through :class:`numpy.random.SeedSequence`, so any
subset of records can be regenerated independently of the others.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput, RamanError, SchemaError, UnpairedRecord
from .physics import AmplifierSetup, dbm_to_w, w_to_dbm

SCHEMA_VERSION = 1
TAGS = ("ds1", "ds2", "validation")
_TAG_CODES = {"ds1": 1, "ds2": 2, "validation": 3}

DEFAULT_P_REF_DBM = 14.0
DEFAULT_RIPPLE_DB = 3.0
DEFAULT_PUMP_MAX_W = 0.2
DEFAULT_DS2_TOTALS_DBM = tuple(float(t) for t in range(15, 24))
DEFAULT_VALIDATION_TOTALS_DBM = tuple(float(t) for t in range(14, 24))
DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class LaunchProfile:
    per_channel_dbm: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.per_channel_dbm, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionMismatch("launch profile must be a nonempty vector")
        object.__setattr__(self, "per_channel_dbm", arr)

    @property
    def n_ch(self) -> int:
        return self.per_channel_dbm.size

    @property
    def total_dbm(self) -> float:
        return float(w_to_dbm(dbm_to_w(self.per_channel_dbm).sum()))

    @property
    def ripple_db(self) -> float:
        return float(self.per_channel_dbm.max() - self.per_channel_dbm.min())

    def __eq__(self, other):
        if not isinstance(other, LaunchProfile):
            return NotImplemented
        return np.array_equal(self.per_channel_dbm, other.per_channel_dbm)

    __hash__ = None


@dataclass
class SampleRecord:
    sample_id: int
    dataset_tag: str
    rng_seed: int
    pump_powers_w: np.ndarray
    launch: LaunchProfile
    gain: np.ndarray
    partner_id: int | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def total_dbm(self) -> float:
        return self.launch.total_dbm

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.dataset_tag == other.dataset_tag
            and self.rng_seed == other.rng_seed
            and self.partner_id == other.partner_id
            and self.provenance == other.provenance
            and np.array_equal(self.pump_powers_w, other.pump_powers_w)
            and self.launch == other.launch
            and np.array_equal(self.gain, other.gain)
        )


def derive_seed(master_seed: int, tag: str, sample_id: int) -> int:
    """64-bit per-record seed: SeedSequence entropy mix of (master, family, id)."""
    ss = np.random.SeedSequence([int(master_seed), _TAG_CODES[tag], int(sample_id)])
    return int(ss.generate_state(1, np.uint64)[0])


def gen_launch_profile(total_dbm: float, ripple_db: float, n_ch: int, seed) -> LaunchProfile:
    """Per-channel dB offsets uniform on +-ripple/2, shifted to hit ``total_dbm``.

    ``seed`` may be an int or a :class:`numpy.random.Generator`.
    """
    if ripple_db < 0:
        raise ValueError("ripple_db must be >= 0")
    if n_ch < 1:
        raise ValueError("n_ch must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    offsets = rng.uniform(-ripple_db / 2, ripple_db / 2, n_ch) if ripple_db > 0 else np.zeros(n_ch)
    shift = total_dbm - 10.0 * np.log10(np.power(10.0, offsets / 10.0).sum())
    return LaunchProfile(offsets + shift)


@dataclass(frozen=True)
class _Draw:
    sample_id: int
    tag: str
    rng_seed: int
    pumps: np.ndarray
    launch: LaunchProfile
    partner_id: int | None = None


def _draw_ds1(sample_id, seed, setup, p_ref_dbm, ripple_db, pump_max_w) -> _Draw:
    rs = derive_seed(seed, "ds1", sample_id)
    rng = np.random.default_rng(rs)
    pumps = rng.uniform(0.0, pump_max_w, setup.n_pumps)
    launch = gen_launch_profile(p_ref_dbm, ripple_db, setup.grid.n_ch, rng)
    return _Draw(sample_id, "ds1", rs, pumps, launch)


def _draw_ds2(partner: SampleRecord, seed, setup, totals, ripple_db) -> _Draw:
    rs = derive_seed(seed, "ds2", partner.sample_id)
    rng = np.random.default_rng(rs)
    total = float(totals[rng.integers(len(totals))])
    launch = gen_launch_profile(total, ripple_db, setup.grid.n_ch, rng)
    return _Draw(
        partner.sample_id, "ds2", rs, partner.pump_powers_w.copy(), launch, partner.sample_id
    )


def _draw_validation(sample_id, seed, setup, totals, ripple_db, pump_max_w) -> _Draw:
    rs = derive_seed(seed, "validation", sample_id)
    rng = np.random.default_rng(rs)
    pumps = rng.uniform(0.0, pump_max_w, setup.n_pumps)
    total = float(totals[rng.integers(len(totals))])
    launch = gen_launch_profile(total, ripple_db, setup.grid.n_ch, rng)
    return _Draw(sample_id, "validation", rs, pumps, launch)


def _chunks(draws: Sequence[_Draw], size: int) -> Iterator[list[_Draw]]:
    # chunk membership depends only on sample_id so partial reruns line up
    current: list[_Draw] = []
    key = None
    for d in draws:
        k = d.sample_id // size
        if current and k != key:
            yield current
            current = []
        key = k
        current.append(d)
    if current:
        yield current


def _label(draws: list[_Draw], setup: AmplifierSetup) -> np.ndarray:
    pumps = np.array([d.pumps for d in draws])
    launch = np.array([d.launch.per_channel_dbm for d in draws])
    try:
        return setup.net_gain(pumps, launch)
    except RamanError:
        for d in draws:
            try:
                setup.net_gain(d.pumps[None], d.launch.per_channel_dbm[None])
            except RamanError as exc:
                raise type(exc)(f"sample {d.tag}/{d.sample_id}: {exc}") from exc
        raise


def label_draws(
    draws: Sequence[_Draw],
    setup: AmplifierSetup,
    chunk_size: int = DEFAULT_CHUNK,
    provenance: dict | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Iterator[list[SampleRecord]]:
    """Yield labelled records chunk by chunk, in sample_id order."""
    done = 0
    for chunk in _chunks(sorted(draws, key=lambda d: d.sample_id), chunk_size):
        gains = _label(chunk, setup)
        yield [
            SampleRecord(
                sample_id=d.sample_id,
                dataset_tag=d.tag,
                rng_seed=d.rng_seed,
                pump_powers_w=d.pumps,
                launch=d.launch,
                gain=g,
                partner_id=d.partner_id,
                provenance=dict(provenance or {}),
            )
            for d, g in zip(chunk, gains)
        ]
        done += len(chunk)
        if progress is not None:
            progress(done, len(draws))


def draws_ds1(n_samples, setup, p_ref_dbm=DEFAULT_P_REF_DBM, ripple_db=DEFAULT_RIPPLE_DB,
              pump_max_w=DEFAULT_PUMP_MAX_W, seed=0, start=0) -> list[_Draw]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return [
        _draw_ds1(i, seed, setup, p_ref_dbm, ripple_db, pump_max_w) for i in range(start, n_samples)
    ]


def draws_ds2(ds1, setup, totals_dbm=DEFAULT_DS2_TOTALS_DBM, ripple_db=DEFAULT_RIPPLE_DB,
              seed=0, start=0) -> list[_Draw]:
    if not ds1:
        raise EmptyInput("ds2 generation needs a nonempty ds1")
    return [_draw_ds2(r, seed, setup, totals_dbm, ripple_db) for r in ds1 if r.sample_id >= start]


def draws_validation(n_samples, setup, totals_dbm=DEFAULT_VALIDATION_TOTALS_DBM,
                     ripple_db=DEFAULT_RIPPLE_DB, pump_max_w=DEFAULT_PUMP_MAX_W, seed=0,
                     start=0) -> list[_Draw]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return [
        _draw_validation(i, seed, setup, totals_dbm, ripple_db, pump_max_w)
        for i in range(start, n_samples)
    ]


def _collect(draws, setup, **kw) -> list[SampleRecord]:
    return [r for chunk in label_draws(draws, setup, **kw) for r in chunk]


def gen_dataset1(n_samples: int, setup: AmplifierSetup | None = None,
                 p_ref_dbm: float = DEFAULT_P_REF_DBM, seed: int = 0, *,
                 ripple_db: float = DEFAULT_RIPPLE_DB, pump_max_w: float = DEFAULT_PUMP_MAX_W,
                 **kw) -> list[SampleRecord]:
    """Reference-power data set used to train the base model."""
    setup = setup or AmplifierSetup()
    return _collect(draws_ds1(n_samples, setup, p_ref_dbm, ripple_db, pump_max_w, seed), setup, **kw)


def gen_dataset2(ds1: Sequence[SampleRecord], setup: AmplifierSetup | None = None,
                 seed: int = 0, *, totals_dbm: Sequence[float] = DEFAULT_DS2_TOTALS_DBM,
                 ripple_db: float = DEFAULT_RIPPLE_DB, **kw) -> list[SampleRecord]:
    """Same pumps as ``ds1``, other total launch powers."""
    setup = setup or AmplifierSetup()
    return _collect(draws_ds2(ds1, setup, totals_dbm, ripple_db, seed), setup, **kw)


def gen_validation(n_samples: int, setup: AmplifierSetup | None = None, seed: int = 0, *,
                   totals_dbm: Sequence[float] = DEFAULT_VALIDATION_TOTALS_DBM,
                   ripple_db: float = DEFAULT_RIPPLE_DB, pump_max_w: float = DEFAULT_PUMP_MAX_W,
                   **kw) -> list[SampleRecord]:
    setup = setup or AmplifierSetup()
    return _collect(
        draws_validation(n_samples, setup, totals_dbm, ripple_db, pump_max_w, seed), setup, **kw
    )


def split_indices(n_samples: int, seed: int, train_fraction: float = 0.8):
    """Disjoint (train, test) index arrays; a pure function of (seed, n_samples)."""
    if n_samples < 1:
        raise EmptyInput("cannot split an empty data set")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n_samples), 0x5B17]))
    perm = rng.permutation(n_samples)
    n_train = min(n_samples, max(1, int(round(train_fraction * n_samples))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def pair_ds2(ds1: Sequence[SampleRecord], ds2: Sequence[SampleRecord]):
    """ds1 partner for each ds2 record, verifying identical pump powers."""
    by_id = {r.sample_id: r for r in ds1}
    partners = []
    for r in ds2:
        partner = by_id.get(r.partner_id)
        if partner is None:
            raise UnpairedRecord(f"ds2 record {r.sample_id} has no ds1 partner {r.partner_id}")
        if not np.array_equal(partner.pump_powers_w, r.pump_powers_w):
            raise UnpairedRecord(f"ds2 record {r.sample_id} pump powers differ from its partner")
        partners.append(partner)
    return partners


# persistence ---------------------------------------------------------------

_FIELDS = ("schema_version", "sample_id", "dataset_tag", "rng_seed", "partner_id",
           "pump_powers_w", "launch_dbm", "net_gain_db", "provenance")


def record_to_json(rec: SampleRecord) -> str:
    obj = {
        "schema_version": SCHEMA_VERSION,
        "sample_id": rec.sample_id,
        "dataset_tag": rec.dataset_tag,
        "rng_seed": rec.rng_seed,
        "partner_id": rec.partner_id,
        "pump_powers_w": np.asarray(rec.pump_powers_w, dtype=float).tolist(),
        "launch_dbm": rec.launch.per_channel_dbm.tolist(),
        "net_gain_db": np.asarray(rec.gain, dtype=float).tolist(),
        "provenance": rec.provenance,
    }
    return json.dumps(obj, sort_keys=True)


def record_from_json(line: str, lineno: int | None = None) -> SampleRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed record ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object", lineno)
    missing = [k for k in _FIELDS if k not in obj]
    if missing:
        raise SchemaError(f"missing fields {missing}", lineno)
    if obj["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {obj['schema_version']!r}", lineno)
    if obj["dataset_tag"] not in TAGS:
        raise SchemaError(f"unknown dataset_tag {obj['dataset_tag']!r}", lineno)
    launch = np.asarray(obj["launch_dbm"], dtype=float)
    gain = np.asarray(obj["net_gain_db"], dtype=float)
    if launch.shape != gain.shape or launch.ndim != 1:
        raise SchemaError("launch_dbm and net_gain_db lengths differ", lineno)
    return SampleRecord(
        sample_id=int(obj["sample_id"]),
        dataset_tag=obj["dataset_tag"],
        rng_seed=int(obj["rng_seed"]),
        pump_powers_w=np.asarray(obj["pump_powers_w"], dtype=float),
        launch=LaunchProfile(launch),
        gain=gain,
        partner_id=obj["partner_id"],
        provenance=obj["provenance"],
    )


def save_dataset(records: Iterable[SampleRecord], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def load_dataset(path) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                # writer always terminates lines; a missing newline means truncation
                try:
                    json.loads(line)
                except json.JSONDecodeError:
                    raise SchemaError("truncated record", lineno) from None
            records.append(record_from_json(line, lineno))
    return records


def records_as_arrays(records: Sequence[SampleRecord]):
    """(pump powers, launch dBm, total dBm, gain) stacked over records."""
    if not records:
        raise EmptyInput("no records")
    pumps = np.array([r.pump_powers_w for r in records])
    launch = np.array([r.launch.per_channel_dbm for r in records])
    totals = np.array([r.total_dbm for r in records])
    gains = np.array([r.gain for r in records])
    return pumps, launch, totals, gains

