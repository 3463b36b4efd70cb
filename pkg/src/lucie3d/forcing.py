"""External forcings: CO2 interpolation, analytic insolation, and SST handling."""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np

from .grid import GridSpec

SOLAR_CONSTANT = 1361.0
OBLIQUITY_DEG = 23.44
DAY_SECONDS = 86400
YEAR_DAYS = 360
MONTH_DAYS = 30
STEP_SECONDS = 6 * 3600
STEPS_PER_DAY = DAY_SECONDS // STEP_SECONDS
STEPS_PER_YEAR = YEAR_DAYS * STEPS_PER_DAY
MONTH_SECONDS = MONTH_DAYS * DAY_SECONDS
YEAR_SECONDS = YEAR_DAYS * DAY_SECONDS
LAND_SST = 270.0


class ForcingError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Co2Series:
    """Monthly CO2 values (ppm) anchored at month midpoints.

    ``values[n]`` belongs to calendar month ``first_month + n`` (month 0 starts
    at epoch 0 of the synthetic calendar), i.e. to time
    ``(first_month + n + 0.5) * MONTH_SECONDS``.
    """

    values: tuple[float, ...]
    first_month: int = 0

    def midpoint(self, n: int) -> float:
        return (self.first_month + n + 0.5) * MONTH_SECONDS

    def year_values(self, year: int) -> np.ndarray:
        start = 12 * year - self.first_month
        if start < 0 or start + 12 > len(self.values):
            raise ForcingError(f"CO2 series does not contain year {year}")
        return np.asarray(self.values[start : start + 12], dtype=np.float64)


def interpolate_co2(series: Co2Series, t: float) -> float:
    """Linear interpolation between month-midpoint anchors."""
    pos = t / MONTH_SECONDS - 0.5 - series.first_month
    n = len(series.values)
    if pos < 0 or pos > n - 1:
        raise ForcingError(
            f"t={t} s outside CO2 span [{series.midpoint(0)}, {series.midpoint(n - 1)}]"
        )
    i = min(int(math.floor(pos)), n - 2) if n > 1 else 0
    frac = pos - i
    if n == 1:
        return float(series.values[0])
    return float((1.0 - frac) * series.values[i] + frac * series.values[i + 1])


def interpolate_co2_cyclic(month_values: np.ndarray, t: float) -> float:
    """Interpolate a 12-month cycle repeated every year, wrapping Dec -> Jan."""
    # reduce to one year first so that t and t + one year give identical values
    pos = ((t % YEAR_SECONDS) / MONTH_SECONDS - 0.5) % 12
    i = int(math.floor(pos))
    frac = pos - i
    return float((1.0 - frac) * month_values[i] + frac * month_values[(i + 1) % 12])


def linear_co2_series(start_ppm: float, end_ppm: float, years: int) -> Co2Series:
    """Monthly series of a linear ramp, padded by one month on each side."""
    rate = (end_ppm - start_ppm) / (years * YEAR_SECONDS)
    months = range(-1, 12 * years + 1)
    vals = tuple(start_ppm + rate * (m + 0.5) * MONTH_SECONDS for m in months)
    return Co2Series(vals, first_month=-1)


def solar_declination(day: float) -> float:
    """Declination (radians) on a circular orbit; equinox on day 80."""
    return math.radians(OBLIQUITY_DEG) * math.sin(2.0 * math.pi * (day - 80.0) / YEAR_DAYS)


def daily_mean_insolation(lat_deg: np.ndarray, day: float, s0: float = SOLAR_CONSTANT) -> np.ndarray:
    """Daily-mean top-of-atmosphere insolation (W m-2) at the given latitudes."""
    phi = np.radians(lat_deg)
    dec = solar_declination(day)
    cos_h0 = np.clip(-np.tan(phi) * math.tan(dec), -1.0, 1.0)
    h0 = np.arccos(cos_h0)
    return (s0 / np.pi) * (h0 * np.sin(phi) * math.sin(dec) + np.cos(phi) * math.cos(dec) * np.sin(h0))


def tisr_field(grid: GridSpec, t_seconds: float) -> np.ndarray:
    day = (t_seconds / DAY_SECONDS) % YEAR_DAYS
    q = daily_mean_insolation(grid.lats, day)
    return np.repeat(q[:, None], grid.nlon, axis=1)


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    r = int(math.floor(truncate * sigma))
    d = np.arange(-r, r + 1)
    return np.exp(-0.5 * (d / sigma) ** 2)


def _convolve(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable convolution: periodic in longitude, edge-clamped in latitude."""
    r = kernel.size // 2
    nlat, nlon = field.shape[-2:]
    out = np.zeros_like(field)
    for k, wk in zip(range(-r, r + 1), kernel):
        out += wk * np.roll(field, -k, axis=-1)
    tmp, out = out, np.zeros_like(field)
    rows = np.arange(nlat)
    for k, wk in zip(range(-r, r + 1), kernel):
        out += wk * tmp[..., np.clip(rows + k, 0, nlat - 1), :]
    return out


class SmoothingNoOp(UserWarning):
    pass


def smooth_sst(sst: np.ndarray, land_sea_mask: np.ndarray, kernel_sigma: float = 1.5, eps: float = 1e-12) -> np.ndarray:
    """Blend SST across coastlines with a mask-normalized Gaussian convolution.

    Ocean and coastal points take ``G*(sst*ocean) / G*ocean``; land points whose
    kernel footprint holds no ocean keep their original value.
    """
    sst = np.asarray(sst, dtype=np.float64)
    mask = np.asarray(land_sea_mask, dtype=np.float64)
    if sst.shape[-2:] != mask.shape:
        raise ForcingError(f"sst shape {sst.shape} does not match mask {mask.shape}")
    if mask.min() < 0 or mask.max() > 1:
        raise ForcingError("land-sea mask must lie in [0, 1]")
    ocean = 1.0 - mask
    if not np.any(ocean > 0):
        warnings.warn("all-land mask: SST smoothing skipped", SmoothingNoOp, stacklevel=2)
        return sst.copy()
    kernel = gaussian_kernel(kernel_sigma)
    num = _convolve(sst * ocean, kernel)
    den = _convolve(ocean, kernel)
    smoothed = num / np.maximum(den, eps)
    return np.where(den > eps, smoothed, sst)


def bias_sst(sst: np.ndarray, land_sea_mask: np.ndarray, delta: float) -> np.ndarray:
    """Add ``delta`` K over ocean points only."""
    return np.where(np.asarray(land_sea_mask) < 0.5, sst + delta, sst)


@dataclasses.dataclass
class ForcingSeries:
    """Everything the model needs besides the atmospheric state.

    ``sst``, when present, is indexed by step relative to ``start_seconds``.
    """

    grid: GridSpec
    co2: Co2Series
    land_sea_mask: np.ndarray
    orography: np.ndarray
    start_seconds: float = 0.0
    step_seconds: float = STEP_SECONDS
    sst: np.ndarray | None = None
    co2_stationary_year: int | None = None
    sst_bias: float = 0.0
    sst_smoothed: bool = False
    kernel_sigma: float = 1.5

    def __post_init__(self):
        if self.land_sea_mask.shape != self.grid.shape or self.orography.shape != self.grid.shape:
            raise ForcingError("static forcing fields do not match the grid")
        self._cycle = None
        if self.co2_stationary_year is not None:
            self._cycle = self.co2.year_values(self.co2_stationary_year)

    def time(self, step: int) -> float:
        return self.start_seconds + step * self.step_seconds

    def co2_at(self, step: int) -> float:
        t = self.time(step)
        if self._cycle is not None:
            return interpolate_co2_cyclic(self._cycle, t)
        return interpolate_co2(self.co2, t)

    def available(self, steps: int) -> bool:
        """True if forcings exist for steps ``0..steps-1``."""
        if steps <= 0:
            return True
        if self.sst is not None and steps > self.sst.shape[0]:
            return False
        if self._cycle is None:
            t_last = self.time(steps - 1)
            if t_last > self.co2.midpoint(len(self.co2.values) - 1) or self.time(0) < self.co2.midpoint(0):
                return False
        return True

    def sst_at(self, step: int) -> np.ndarray:
        if self.sst is None:
            raise ForcingError("no SST series attached")
        field = np.asarray(self.sst[step], dtype=np.float64)
        if self.sst_bias:
            field = bias_sst(field, self.land_sea_mask, self.sst_bias)
        if self.sst_smoothed:
            field = smooth_sst(field, self.land_sea_mask, self.kernel_sigma)
        return field

    def at(self, step: int, use_sst: bool = False) -> dict[str, np.ndarray]:
        shape = self.grid.shape
        out = {
            "orography": self.orography,
            "tisr": tisr_field(self.grid, self.time(step)),
            "land_sea_mask": self.land_sea_mask,
            "co2": np.full(shape, self.co2_at(step)),
        }
        if use_sst:
            out["sst"] = self.sst_at(step)
        return out
