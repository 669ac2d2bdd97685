"""Radiometric capture model.

EV arithmetic over the discrete ISO/shutter grids, motion blur by temporal
supersampling, sensor noise synthesis and raw formation, and mu-law tone
mapping.  All radiance values are in electrons per second, so exposure maths
need no unit conversions: a pixel collecting radiance phi for T seconds at a
given ISO produces ``phi * T * ISO / U`` counts before noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvOutOfRangeError, OverBudgetError
from .scene import RadianceScene, sample_radiance, sample_radiance_mean

# Discrete setting grids of the simulated body (24 ISOs, 19 shutter speeds).
ISO_GRID: tuple[int, ...] = (
    50, 64, 80, 100, 125, 160, 200, 250, 320, 400, 500, 640,
    800, 1000, 1250, 1600, 2000, 2500, 3200, 4000, 5000, 6400, 8000, 10000,
)
SHUTTER_GRID: tuple[float, ...] = tuple(
    1.0 / d
    for d in (30, 40, 50, 60, 80, 100, 125, 160, 200, 250,
              320, 400, 500, 640, 800, 1000, 1250, 1600, 2000)
)
MIN_SHUTTER: float = min(SHUTTER_GRID)

MU_LAW: float = 5000.0

# EVs are snapped to this lattice so that exact log2 identities (doubling a
# shutter or ISO shifts EV by exactly one stop) survive floating point.
EV_QUANTUM: float = 2.0 ** -20


@dataclass(frozen=True)
class CameraConstants:
    """Sensor and optics constants.

    ``gain_unit`` is the paper-style camera constant U: electrons per count at
    ISO of 1, so ISO 100 with U=100 gives unit gain.  ``dark_offset`` is the
    dark-current pedestal in counts.
    """

    f_number: float = 2.8
    gain_unit: float = 100.0
    sigma_read: float = 2.0
    sigma_adc: float = 1.0
    dark_offset: float = 0.0
    bit_depth: int = 12

    def __post_init__(self):
        if self.f_number <= 0 or self.gain_unit <= 0:
            raise ValueError("f_number and gain_unit must be positive")
        if self.sigma_read < 0 or self.sigma_adc < 0 or self.dark_offset < 0:
            raise ValueError("noise and offset terms must be non-negative")
        if self.bit_depth < 1:
            raise ValueError("bit_depth must be >= 1")

    @property
    def full_scale(self) -> int:
        """Maximum recordable count (ADU), 2**bits - 1."""
        return (1 << self.bit_depth) - 1

    def counts_per_radiance(self, iso: float, shutter_s: float) -> float:
        """Counts produced per unit radiance (e-/s) over one exposure."""
        return shutter_s * iso / self.gain_unit


@dataclass(frozen=True)
class CaptureSettings:
    """One (ISO, shutter) grid point with its quantised EV."""

    iso_index: int
    shutter_index: int
    iso: int
    shutter_s: float
    ev: float

    @classmethod
    def from_indices(cls, iso_index: int, shutter_index: int,
                     consts: CameraConstants) -> "CaptureSettings":
        if not 0 <= iso_index < len(ISO_GRID):
            raise IndexError(f"iso_index {iso_index} out of range")
        if not 0 <= shutter_index < len(SHUTTER_GRID):
            raise IndexError(f"shutter_index {shutter_index} out of range")
        iso = ISO_GRID[iso_index]
        t = SHUTTER_GRID[shutter_index]
        return cls(iso_index, shutter_index, iso, t, ev_of(iso, t, consts))


def ev_of(iso: float, shutter_s: float, consts: CameraConstants) -> float:
    """Exposure value log2(F^2/T * 100/ISO), snapped to the EV lattice."""
    if iso <= 0 or shutter_s <= 0:
        raise ValueError("ISO and shutter must be positive")
    raw = math.log2(consts.f_number * consts.f_number * 100.0 / (shutter_s * iso))
    return round(raw / EV_QUANTUM) * EV_QUANTUM


def grid_ev_table(consts: CameraConstants) -> np.ndarray:
    """EV of every (iso_index, shutter_index) grid point, shape (24, 19)."""
    table = np.empty((len(ISO_GRID), len(SHUTTER_GRID)))
    for i, iso in enumerate(ISO_GRID):
        for j, t in enumerate(SHUTTER_GRID):
            table[i, j] = ev_of(iso, t, consts)
    return table


_EV_TABLE_CACHE: dict[float, np.ndarray] = {}


def _ev_table(consts: CameraConstants) -> np.ndarray:
    table = _EV_TABLE_CACHE.get(consts.f_number)
    if table is None:
        table = grid_ev_table(consts)
        table.flags.writeable = False
        _EV_TABLE_CACHE[consts.f_number] = table
    return table


def _select_nearest(target_ev: float, consts: CameraConstants,
                    max_shutter: float | None) -> tuple[int, int, float]:
    """Nearest-EV grid point under an optional shutter cap.

    Tie-break: lower ISO first, then longer shutter.  Returns
    (iso_index, shutter_index, span_clipped_target) without range checking.
    """
    table = _ev_table(consts)
    if max_shutter is not None:
        allowed = np.array([t <= max_shutter * (1 + 1e-12) for t in SHUTTER_GRID])
        if not allowed.any():
            raise EvOutOfRangeError(target_ev, float("nan"))
        table = np.where(allowed[None, :], table, np.inf)
    diff = np.abs(table - target_ev)
    best = diff.min()
    ii, jj = np.nonzero(diff <= best + 1e-15)
    # Lower ISO wins; among equal ISOs the longer shutter (lower index) wins.
    order = np.lexsort((jj, ii))
    k = order[0]
    return int(ii[k]), int(jj[k]), best


def achievable_ev_span(consts: CameraConstants,
                       max_shutter: float | None = None) -> tuple[float, float]:
    """(min, max) achievable EV, optionally with a shutter cap."""
    table = _ev_table(consts)
    if max_shutter is not None:
        allowed = np.array([t <= max_shutter * (1 + 1e-12) for t in SHUTTER_GRID])
        table = table[:, allowed]
    return float(table.min()), float(table.max())


def settings_for_ev(target_ev: float, consts: CameraConstants,
                    max_shutter: float | None = None) -> CaptureSettings:
    """Grid settings with EV nearest to ``target_ev``.

    Raises :class:`EvOutOfRangeError` (carrying the nearest achievable EV)
    when the target lies outside the achievable span.  ``max_shutter``
    restricts the candidate set, realising the selection-policy hook used by
    budget-aware bracket construction.
    """
    lo, hi = achievable_ev_span(consts, max_shutter)
    if target_ev < lo - 1e-12 or target_ev > hi + 1e-12:
        nearest = lo if target_ev < lo else hi
        raise EvOutOfRangeError(target_ev, nearest)
    i, j, _ = _select_nearest(target_ev, consts, max_shutter)
    return CaptureSettings.from_indices(i, j, consts)


def settings_for_ev_clamped(target_ev: float, consts: CameraConstants,
                            max_shutter: float | None = None) -> CaptureSettings:
    """Like :func:`settings_for_ev` but clips the target into the span."""
    lo, hi = achievable_ev_span(consts, max_shutter)
    i, j, _ = _select_nearest(min(max(target_ev, lo), hi), consts, max_shutter)
    return CaptureSettings.from_indices(i, j, consts)


def supersample_count(shutter_s: float, frame_interval: float) -> int:
    """Number of sub-frame samples for blur synthesis: ceil(256 T / dtau)."""
    if shutter_s <= 0:
        raise ValueError("shutter must be positive")
    if shutter_s > frame_interval * (1 + 1e-12):
        raise OverBudgetError(
            f"shutter {shutter_s:.6f}s exceeds frame interval {frame_interval:.6f}s"
        )
    m = math.ceil(256.0 * shutter_s / frame_interval - 1e-12)
    return max(1, min(256, m))


def simulate_blurred_hdr(scene: RadianceScene, u_start: float,
                         shutter_s: float) -> np.ndarray:
    """Mean radiance over the exposure window [u_start, u_start + T/dtau].

    Averages ``m = supersample_count(T, dtau)`` radiance samples placed at the
    left edges of m equal sub-intervals of the window, in linear space.  A
    static scene (or m == 1) short-circuits to a single sample so the no-blur
    identity is bit-exact.
    """
    window = shutter_s / scene.frame_interval
    if u_start < -1e-12 or u_start + window > 1.0 + 1e-9:
        raise OverBudgetError(
            f"exposure window [{u_start:.4f}, {u_start + window:.4f}] leaves [0, 1]"
        )
    u_start = min(max(u_start, 0.0), 1.0)
    m = supersample_count(shutter_s, scene.frame_interval)
    if scene.is_static or m == 1:
        return sample_radiance(scene, u_start)
    u_samples = np.minimum(u_start + window * (np.arange(m) / m), 1.0)
    return sample_radiance_mean(scene, u_samples)


@dataclass(frozen=True)
class RawImage:
    """Quantised sensor counts in [0, full_scale]."""

    counts: np.ndarray  # uint16
    settings: CaptureSettings


@dataclass(frozen=True)
class LdrImage:
    """Normalised capture in [0, 1] with gain metadata for linearisation."""

    values: np.ndarray  # float64 in [0, 1]
    settings: CaptureSettings
    saturated: np.ndarray  # bool, true where counts hit full scale


def synthesize_noise(blurred: np.ndarray, settings: CaptureSettings,
                     consts: CameraConstants,
                     rng: np.random.Generator | None) -> RawImage:
    """Raw formation: signal + zero-mean Gaussian noise, quantise, clip.

    Per-pixel variance is the three-term model photon + read + ADC:
    ``phi*T*ISO^2/U^2 + sigma_read^2*ISO^2/U^2 + sigma_adc^2`` (the photon
    Poisson term in its Gaussian approximation).  Passing ``rng=None`` skips
    the noise draw entirely for deterministic exposures.
    """
    if not np.all(np.isfinite(blurred)):
        raise ValueError("blurred radiance must be finite")
    gain = settings.iso / consts.gain_unit
    signal = blurred * settings.shutter_s * gain + consts.dark_offset
    if rng is not None:
        var = (blurred * settings.shutter_s * gain * gain
               + consts.sigma_read ** 2 * gain * gain
               + consts.sigma_adc ** 2)
        signal = signal + rng.standard_normal(blurred.shape) * np.sqrt(var)
    full = consts.full_scale
    counts = np.clip(np.floor(signal + 0.5), 0.0, float(full)).astype(np.uint16)
    return RawImage(counts=counts, settings=settings)


def develop(raw: RawImage, consts: CameraConstants) -> LdrImage:
    """Normalise counts to [0, 1] and flag saturated pixels."""
    full = consts.full_scale
    values = raw.counts.astype(np.float64) / full
    return LdrImage(values=values, settings=raw.settings,
                    saturated=raw.counts == full)


def tonemap_mu(x: np.ndarray | float, mu: float = MU_LAW) -> np.ndarray | float:
    """mu-law compression ln(1 + mu x) / ln(1 + mu) on [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12):
        raise ValueError("tonemap input must lie in [0, 1]")
    out = np.log1p(mu * np.clip(arr, 0.0, 1.0)) / np.log1p(mu)
    return float(out) if np.isscalar(x) else out


def itmo_mu(y: np.ndarray | float, mu: float = MU_LAW) -> np.ndarray | float:
    """Exact inverse of :func:`tonemap_mu`."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.size and (arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12):
        raise ValueError("itmo input must lie in [0, 1]")
    out = np.expm1(np.clip(arr, 0.0, 1.0) * np.log1p(mu)) / mu
    return float(out) if np.isscalar(y) else out


def capture(scene: RadianceScene, u_start: float, settings: CaptureSettings,
            consts: CameraConstants,
            rng: np.random.Generator | None) -> LdrImage:
    """Full pipeline: blur, then noise, then develop.

    Blur strictly precedes noise since blur changes the photon counts the
    sensor integrates.
    """
    blurred = simulate_blurred_hdr(scene, u_start, settings.shutter_s)
    raw = synthesize_noise(blurred, settings, consts, rng)
    return develop(raw, consts)
