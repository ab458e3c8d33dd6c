"""Coupled-power stimulated Raman scattering model of a single fiber span.

Every wave (signal or pump) obeys

    dP_i/dz = s_i * P_i * (-alpha_i + sum_j K_ij P_j)

with s_i = +1 for forward and -1 for backward waves.  ``K_ij`` is the Raman
efficiency ``C_R(f_j, f_i)`` when wave ``j`` is the higher frequency, and the
photon-number-weighted depletion ``-(f_i / f_j) C_R(f_i, f_j)`` when it is the
lower one.  Distances are in km, powers in W, attenuation in nepers/km
internally.

The integrator is a fixed-step fourth order Runge-Kutta method applied in
integrating-factor (Lawson) form: attenuation is carried by the exact
exponential and only the Raman coupling goes through the RK stages.  Loss-only
propagation is therefore exact at any step size.

Counter-propagating waves turn the problem into a two-point boundary value
problem, solved by relaxed fixed-point shooting on the unknown z = 0 powers of
the backward waves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonConvergence, NumericBlowup

C_LIGHT = 299_792_458.0  # m/s
DB_PER_NEPER = 10.0 / math.log(10.0)
NEGATIVE_POWER_TOL = 1e-12  # W

DEFAULT_PUMP_WAVELENGTHS_NM = (1426.0, 1440.0, 1454.0, 1472.0, 1496.0)

FORWARD = "forward"
BACKWARD = "backward"
_DIRECTIONS = (FORWARD, BACKWARD)


def dbm_to_w(p_dbm):
    return 1e-3 * np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)


def w_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) * 1e3)


def nm_to_thz(wavelength_nm):
    return C_LIGHT * 1e-3 / np.asarray(wavelength_nm, dtype=float)


@dataclass(frozen=True)
class FiberSpec:
    length_km: float = 80.0
    atten_db_per_km: float = 0.2
    raman_peak_efficiency: float = 0.39  # 1/(W km) at reference_pump_freq_thz
    raman_peak_shift_thz: float = 13.2
    reference_pump_freq_thz: float = 206.0

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError(f"length_km must be > 0, got {self.length_km}")
        if not self.atten_db_per_km > 0:
            raise ValueError(f"atten_db_per_km must be > 0, got {self.atten_db_per_km}")
        if not self.raman_peak_efficiency >= 0:
            raise ValueError("raman_peak_efficiency must be >= 0")
        if not self.raman_peak_shift_thz > 0:
            raise ValueError("raman_peak_shift_thz must be > 0")
        if not self.reference_pump_freq_thz > 0:
            raise ValueError("reference_pump_freq_thz must be > 0")

    @property
    def loss_db(self) -> float:
        return self.atten_db_per_km * self.length_km


@dataclass(frozen=True)
class Wave:
    freq_thz: float
    input_power_w: float
    direction: str = FORWARD
    kind: str = "signal"
    # None means the fiber's flat attenuation; 0 is allowed here for lossless tests
    atten_db_per_km: float | None = None

    def __post_init__(self):
        if not self.freq_thz > 0:
            raise ValueError(f"freq_thz must be > 0, got {self.freq_thz}")
        if not self.input_power_w >= 0:
            raise ValueError(f"input_power_w must be >= 0, got {self.input_power_w}")
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.kind not in ("signal", "pump"):
            raise ValueError(f"unknown wave kind {self.kind!r}")
        if self.kind == "signal" and self.direction != FORWARD:
            raise ValueError("signals always propagate forward")
        if self.atten_db_per_km is not None and self.atten_db_per_km < 0:
            raise ValueError("per-wave attenuation must be >= 0")


@dataclass(frozen=True)
class ChannelGrid:
    n_ch: int = 200
    start_freq_thz: float = 186.025
    spacing_ghz: float = 50.0

    def __post_init__(self):
        if self.n_ch < 1:
            raise ValueError("n_ch must be >= 1")
        if not self.spacing_ghz > 0:
            raise ValueError("spacing_ghz must be > 0")

    @property
    def freqs_thz(self) -> np.ndarray:
        return self.start_freq_thz + np.arange(self.n_ch) * self.spacing_ghz * 1e-3

    @property
    def indices(self) -> np.ndarray:
        """Channel index vector 1..n_ch used by the tilt term of the transfer."""
        return np.arange(1, self.n_ch + 1, dtype=float)


@dataclass(frozen=True)
class PumpSet:
    wavelengths_nm: tuple[float, ...] = DEFAULT_PUMP_WAVELENGTHS_NM
    powers_w: tuple[float, ...] = (0.0,) * len(DEFAULT_PUMP_WAVELENGTHS_NM)
    direction: str = BACKWARD

    def __post_init__(self):
        object.__setattr__(self, "wavelengths_nm", tuple(float(w) for w in self.wavelengths_nm))
        object.__setattr__(self, "powers_w", tuple(float(p) for p in self.powers_w))
        if len(self.wavelengths_nm) != len(self.powers_w):
            raise DimensionMismatch(
                f"{len(self.wavelengths_nm)} pump wavelengths but {len(self.powers_w)} powers"
            )
        if any(not p >= 0 for p in self.powers_w):
            raise ValueError("pump powers must be >= 0")
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def freqs_thz(self) -> np.ndarray:
        return nm_to_thz(self.wavelengths_nm)

    def with_powers(self, powers_w: Sequence[float]) -> "PumpSet":
        return replace(self, powers_w=tuple(powers_w))


@dataclass(frozen=True)
class SolverOptions:
    step_m: float = 50.0
    tol_db: float = 1e-4
    max_iter: int = 50
    relaxation: float = 0.5

    def __post_init__(self):
        if not self.step_m > 0:
            raise ValueError("step_m must be > 0")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def raman_efficiency(freq_high_thz, freq_low_thz, fiber: FiberSpec):
    """Triangular Raman efficiency in 1/(W km) for power flowing high -> low.

    Rises linearly to the peak at ``raman_peak_shift_thz``, falls linearly to
    zero at 1.5 times that shift, and scales with the pump frequency relative
    to ``reference_pump_freq_thz``.  Non-positive shifts give 0.
    """
    fh = np.asarray(freq_high_thz, dtype=float)
    fl = np.asarray(freq_low_thz, dtype=float)
    shift = fh - fl
    peak = fiber.raman_peak_shift_thz
    rise = shift / peak
    fall = (1.5 * peak - shift) / (0.5 * peak)
    shape = np.where(shift <= peak, rise, fall)
    shape = np.where((shift > 0) & (shift < 1.5 * peak), shape, 0.0)
    eff = fiber.raman_peak_efficiency * shape * (fh / fiber.reference_pump_freq_thz)
    return float(eff) if eff.ndim == 0 else eff


def coupling_matrix(freqs_thz, fiber: FiberSpec) -> np.ndarray:
    """``K`` such that the Raman part of dP_i/dz is ``P_i * (K @ P)_i``."""
    f = np.asarray(freqs_thz, dtype=float)
    fi = f[:, None]
    fj = f[None, :]
    gain = raman_efficiency(fj, fi, fiber)  # j pumps i (zero unless f_j > f_i)
    depletion = (fi / fj) * raman_efficiency(fi, fj, fiber)  # i pumps j
    return gain - depletion


@dataclass
class _System:
    """Precomputed per-wave constants for the integrator."""

    kt: np.ndarray  # transposed coupling matrix
    sign: np.ndarray  # +1 forward, -1 backward
    alpha: np.ndarray  # nepers/km
    length_km: float
    n_steps: int
    backward: np.ndarray = field(init=False)

    def __post_init__(self):
        self.backward = self.sign < 0

    @property
    def h(self) -> float:
        return self.length_km / self.n_steps


def _build_system(fiber, freqs, directions, atten_db, step_m) -> _System:
    freqs = np.asarray(freqs, dtype=float)
    sign = np.array([1.0 if d == FORWARD else -1.0 for d in directions])
    alpha = np.asarray(atten_db, dtype=float) / DB_PER_NEPER
    n_steps = max(1, math.ceil(fiber.length_km * 1e3 / step_m - 1e-9))
    kt = np.ascontiguousarray(coupling_matrix(freqs, fiber).T)
    return _System(kt=kt, sign=sign, alpha=alpha, length_km=fiber.length_km, n_steps=n_steps)


def _guard(p: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(p)):
        raise NumericBlowup("non-finite power during integration")
    low = p.min()
    if low < 0:
        if low < -NEGATIVE_POWER_TOL:
            raise NumericBlowup(f"power fell to {low:.3e} W during integration")
        np.maximum(p, 0.0, out=p)
    return p


def _sweep(system: _System, p: np.ndarray, h: float) -> np.ndarray:
    """Integrate all waves over the full span with signed step ``h`` (km).

    ``p`` has shape (batch, waves) and holds powers at the starting end.
    """
    lin = -system.sign * system.alpha
    e_half = np.exp(lin * (h / 2))
    e_full = e_half * e_half
    kt = system.kt
    s = system.sign
    h2, h6 = h / 2, h / 6
    p = np.array(p, dtype=float)
    for _ in range(system.n_steps):
        k1 = s * p * (p @ kt)
        y = e_half * (p + h2 * k1)
        k2 = s * y * (y @ kt)
        ph = e_half * p
        y = ph + h2 * k2
        k3 = s * y * (y @ kt)
        y = e_full * p + h * (e_half * k3)
        k4 = s * y * (y @ kt)
        p = e_full * p + h6 * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
        _guard(p)
    return p


def _sweep_against(system, idx, p_start, other_idx, other, d_other, reverse):
    """Integrate waves ``idx`` across the span with the remaining waves frozen.

    ``other``/``d_other`` hold the frozen waves' powers and z-derivatives on
    the step grid, shape (n_steps + 1, batch, len(other_idx)); midpoints come
    from cubic Hermite interpolation so the scheme stays fourth order.
    Returns this set's own profile and derivative on the same grid.
    """
    n = system.n_steps
    h = -system.h if reverse else system.h
    s = system.sign[idx]
    lin = -s * system.alpha[idx]
    e_half = np.exp(lin * (h / 2))
    e_full = e_half * e_half
    k_self = np.ascontiguousarray(system.kt[np.ix_(idx, idx)])
    k_cross = np.ascontiguousarray(system.kt[np.ix_(other_idx, idx)])
    h2, h6 = h / 2, h / 6

    prof = np.empty((n + 1,) + p_start.shape)
    dprof = np.empty_like(prof)
    order = range(n, 0, -1) if reverse else range(n)
    p = np.array(p_start, dtype=float)
    k0 = n if reverse else 0
    c0 = other[k0] @ k_cross
    for k in order:
        k1_ = k - 1 if reverse else k + 1
        c1 = other[k1_] @ k_cross
        c_mid = 0.5 * (c0 + c1) + (h / 8) * ((d_other[k] - d_other[k1_]) @ k_cross)

        k1 = s * p * (p @ k_self + c0)
        prof[k] = p
        dprof[k] = lin * p + k1
        y = e_half * (p + h2 * k1)
        k2 = s * y * (y @ k_self + c_mid)
        y = e_half * p + h2 * k2
        k3 = s * y * (y @ k_self + c_mid)
        y = e_full * p + h * (e_half * k3)
        k4 = s * y * (y @ k_self + c1)
        p = e_full * p + h6 * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
        _guard(p)
        c0 = c1
    k_end = 0 if reverse else n
    prof[k_end] = p
    dprof[k_end] = lin * p + s * p * (p @ k_self + c0)
    return prof, dprof


def _boundary_change_db(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    """Per-row max |dB difference|, ignoring waves that carry no power."""
    live = (new > 0) | (old > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.abs(DB_PER_NEPER * np.log(new / old))
    diff = np.where(live, np.nan_to_num(diff, nan=np.inf), 0.0)
    return diff.max(axis=1) if diff.shape[1] else np.zeros(diff.shape[0])


def _solve(system: _System, p_in: np.ndarray, opts: SolverOptions) -> np.ndarray:
    """Exit powers for a batch of launch conditions.

    ``p_in[:, i]`` is the injected power of wave i at its own input end
    (z = 0 for forward, z = L for backward waves).  With counter-propagating
    waves the two directions are swept alternately, each against the other's
    stored profile, starting from attenuation-only backward profiles and
    under-relaxing the backward profile between iterations.  Rows are retired
    individually once the backward z = 0 powers move by less than
    ``opts.tol_db`` in one iteration.
    """
    p_in = np.atleast_2d(np.asarray(p_in, dtype=float))
    bw = system.backward
    if not bw.any() or not np.any(p_in[:, bw] > 0):
        return _sweep(system, p_in, system.h)

    fw_idx = np.flatnonzero(~bw)
    bw_idx = np.flatnonzero(bw)
    z = np.linspace(0.0, system.length_km, system.n_steps + 1)
    alpha_b = system.alpha[bw_idx]
    decay = np.exp(-alpha_b[None, :] * (system.length_km - z[:, None]))  # (n + 1, nb)
    prof_b = decay[:, None, :] * p_in[None, :, bw_idx]
    dprof_b = alpha_b * prof_b

    out = np.empty_like(p_in)
    active = np.arange(p_in.shape[0])
    for _ in range(opts.max_iter):
        prof_f, dprof_f = _sweep_against(
            system, fw_idx, p_in[np.ix_(active, fw_idx)], bw_idx, prof_b, dprof_b, reverse=False
        )
        new_b, new_db = _sweep_against(
            system, bw_idx, p_in[np.ix_(active, bw_idx)], fw_idx, prof_f, dprof_f, reverse=True
        )
        done = _boundary_change_db(new_b[0], prof_b[0]) < opts.tol_db
        if done.any():
            rows = active[done]
            out[np.ix_(rows, fw_idx)] = prof_f[-1][done]
            out[np.ix_(rows, bw_idx)] = new_b[0][done]
        keep = ~done
        if not keep.any():
            return out
        active = active[keep]
        lam = opts.relaxation
        prof_b = (1.0 - lam) * prof_b[:, keep] + lam * new_b[:, keep]
        dprof_b = (1.0 - lam) * dprof_b[:, keep] + lam * new_db[:, keep]
    raise NonConvergence(
        f"backward boundary still moving by >= {opts.tol_db} dB after {opts.max_iter} iterations"
    )


def propagate(
    fiber: FiberSpec,
    waves: Sequence[Wave],
    step_m: float = 50.0,
    options: SolverOptions | None = None,
) -> np.ndarray:
    """Power (W) of every wave at its exit end, in the order given."""
    if not waves:
        raise ValueError("at least one wave is required")
    opts = options if options is not None else SolverOptions(step_m=step_m)
    atten = [fiber.atten_db_per_km if w.atten_db_per_km is None else w.atten_db_per_km for w in waves]
    system = _build_system(
        fiber, [w.freq_thz for w in waves], [w.direction for w in waves], atten, opts.step_m
    )
    p_in = np.array([[w.input_power_w for w in waves]])
    return _solve(system, p_in, opts)[0]


def net_gain_batch(
    fiber: FiberSpec,
    grid: ChannelGrid,
    pump_wavelengths_nm: Sequence[float],
    pump_direction: str,
    pump_powers_w,
    launch_dbm,
    options: SolverOptions | None = None,
) -> np.ndarray:
    """Net gain (dB) for a batch of (pump powers, launch profile) rows."""
    opts = options or SolverOptions()
    pump_powers_w = np.atleast_2d(np.asarray(pump_powers_w, dtype=float))
    launch_dbm = np.atleast_2d(np.asarray(launch_dbm, dtype=float))
    if launch_dbm.shape[1] != grid.n_ch:
        raise DimensionMismatch(f"launch profile has {launch_dbm.shape[1]} channels, grid has {grid.n_ch}")
    if pump_powers_w.shape[1] != len(pump_wavelengths_nm):
        raise DimensionMismatch(
            f"{pump_powers_w.shape[1]} pump powers for {len(pump_wavelengths_nm)} pumps"
        )
    if pump_powers_w.shape[0] != launch_dbm.shape[0]:
        raise DimensionMismatch("pump and launch batches differ in length")
    n_p = pump_powers_w.shape[1]
    freqs = np.concatenate([grid.freqs_thz, nm_to_thz(pump_wavelengths_nm)])
    directions = [FORWARD] * grid.n_ch + [pump_direction] * n_p
    atten = np.full(freqs.size, fiber.atten_db_per_km)
    system = _build_system(fiber, freqs, directions, atten, opts.step_m)
    p_in = np.hstack([dbm_to_w(launch_dbm), pump_powers_w])
    p_out = _solve(system, p_in, opts)
    return w_to_dbm(p_out[:, : grid.n_ch]) - launch_dbm


def net_gain(
    fiber: FiberSpec,
    grid: ChannelGrid,
    pumps: PumpSet,
    launch,
    options: SolverOptions | None = None,
) -> np.ndarray:
    """Per-channel net gain in dB: output power minus launch power.

    ``launch`` is a LaunchProfile or a plain per-channel dBm vector.
    """
    launch_dbm = np.asarray(getattr(launch, "per_channel_dbm", launch), dtype=float)
    if launch_dbm.ndim != 1 or launch_dbm.size != grid.n_ch:
        raise DimensionMismatch(f"launch profile has {launch_dbm.size} channels, grid has {grid.n_ch}")
    return net_gain_batch(
        fiber, grid, pumps.wavelengths_nm, pumps.direction, [pumps.powers_w], [launch_dbm], options
    )[0]


@dataclass(frozen=True)
class AmplifierSetup:
    """Everything the oracle needs apart from pump powers and launch profile."""

    fiber: FiberSpec = FiberSpec()
    grid: ChannelGrid = ChannelGrid()
    pump_wavelengths_nm: tuple[float, ...] = DEFAULT_PUMP_WAVELENGTHS_NM
    pump_direction: str = BACKWARD
    solver: SolverOptions = SolverOptions()

    @property
    def n_pumps(self) -> int:
        return len(self.pump_wavelengths_nm)

    def net_gain(self, pump_powers_w, launch_dbm) -> np.ndarray:
        """Batched oracle: rows of pump powers and per-channel dBm profiles."""
        return net_gain_batch(
            self.fiber,
            self.grid,
            self.pump_wavelengths_nm,
            self.pump_direction,
            pump_powers_w,
            launch_dbm,
            self.solver,
        )
