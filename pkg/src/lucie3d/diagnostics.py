"""Trajectory diagnostics: zonal climatologies, trends, space-time spectra,
annular-mode EOFs, stratospheric warming events and log-scale PDFs.

Every function is a pure function of its inputs. Gridded inputs are
``(time, nlat, nlon)`` arrays on a Gaussian grid whose latitudes run south to
north; containers are read in time chunks so memory-mapped trajectories are
never loaded whole.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from .data import FieldContainer, VarInfo, write_container
from .forcing import DAY_SECONDS, MONTH_DAYS, YEAR_DAYS, YEAR_SECONDS
from .grid import gauss_legendre

REPORT_VERSION = 1
REPORT_MAGIC = "# lucie3d-report"
DECADE_SECONDS = 10 * YEAR_SECONDS
CHUNK = 256


class DiagnosticError(ValueError):
    pass


def gaussian_lats(nlat: int) -> tuple[np.ndarray, np.ndarray]:
    """Latitudes in degrees (south to north) and quadrature weights."""
    nodes, weights = gauss_legendre(nlat)
    return np.degrees(np.arcsin(nodes)), weights


def calendar(times: np.ndarray) -> dict[str, np.ndarray]:
    """Synthetic-calendar fields for times in seconds: year, month (1-12), day of year."""
    day = np.floor_divide(np.asarray(times, dtype=np.int64), DAY_SECONDS)
    doy = np.mod(day, YEAR_DAYS)
    return {"day": day, "year": np.floor_divide(day, YEAR_DAYS), "month": doy // MONTH_DAYS + 1, "doy": doy}


def _check_span(span, n: int, what: str) -> tuple[int, int]:
    lo, hi = int(span[0]), int(span[1])
    if not 0 <= lo < hi <= n:
        raise DiagnosticError(f"{what} span {span} outside 0..{n}")
    return lo, hi


def time_zonal_mean(c: FieldContainer, variable: str, span: tuple[int, int] | None = None) -> np.ndarray:
    """Time and zonal mean of one variable over ``span``: (levels, nlat)."""
    lo, hi = _check_span(span or (0, c.t_count), c.t_count, "time")
    data = c.variable(variable)
    acc = np.zeros(data.shape[1:3])
    for s in range(lo, hi, CHUNK):
        acc += np.asarray(data[s : min(s + CHUNK, hi)]).mean(axis=-1).sum(axis=0)
    return acc / (hi - lo)


@dataclasses.dataclass
class ZonalMap:
    variable: str
    values: np.ndarray  # (levels, nlat)
    reference: np.ndarray | None = None


def climatology_bias(model: FieldContainer, reference: FieldContainer,
                     variables=("T", "U", "SH")) -> dict[str, ZonalMap]:
    """Time-mean zonal-mean model minus reference, with the reference climatology."""
    if (model.nlat, model.nlon) != (reference.nlat, reference.nlon):
        raise DiagnosticError("model and reference grids differ")
    if (model.t_start, model.t_step, model.t_count) != (reference.t_start, reference.t_step, reference.t_count):
        raise DiagnosticError("model and reference spans differ")
    out = {}
    for v in variables:
        ref = time_zonal_mean(reference, v)
        out[v] = ZonalMap(v, time_zonal_mean(model, v) - ref, ref)
    return out


def climate_change_map(c: FieldContainer, variable: str, early: tuple[int, int],
                       late: tuple[int, int]) -> ZonalMap:
    """Zonal-time mean over ``late`` minus that over ``early`` (index spans, stop exclusive).

    Identical spans give a zero map; partially overlapping spans are rejected.
    """
    e = _check_span(early, c.t_count, "early")
    l = _check_span(late, c.t_count, "late")
    if e != l and e[0] < l[1] and l[0] < e[1]:
        raise DiagnosticError(f"spans {early} and {late} overlap")
    if e == l:
        return ZonalMap(variable, np.zeros((c.info(variable).levels, c.nlat)))
    return ZonalMap(variable, time_zonal_mean(c, variable, l) - time_zonal_mean(c, variable, e))


def global_mean_series(c: FieldContainer, channel: str) -> np.ndarray:
    """Area-weighted global mean of one channel at every time step."""
    _, w = gaussian_lats(c.nlat)
    data = c.channel(channel)
    out = np.empty(c.t_count)
    for s in range(0, c.t_count, CHUNK):
        block = np.asarray(data[s : s + CHUNK])
        out[s : s + len(block)] = np.einsum("tij,i->t", block, w) / (2.0 * c.nlon)
    return out


def annual_means(series: np.ndarray, steps_per_year: int) -> np.ndarray:
    """Means over consecutive complete years; a trailing partial year is dropped."""
    n = len(series) // steps_per_year
    if n == 0:
        raise DiagnosticError("series shorter than one year")
    return np.asarray(series[: n * steps_per_year]).reshape(n, steps_per_year).mean(axis=1)


@dataclasses.dataclass(frozen=True)
class TrendFit:
    slope: float  # units per decade
    intercept: float  # value at t = 0
    residual_variance: float
    variable: str = ""
    region: str = ""
    n: int = 0


def fit_trend(series, step_seconds: float | None = None, times=None, variable: str = "",
              region: str = "") -> TrendFit:
    """Ordinary least squares line through ``series``.

    The time axis is ``times`` (seconds) or ``arange(n) * step_seconds``.
    """
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1 or len(y) < 2:
        raise DiagnosticError("trend fit needs a 1-D series of at least 2 points")
    if times is None:
        if step_seconds is None:
            raise DiagnosticError("give step_seconds or times")
        times = np.arange(len(y)) * float(step_seconds)
    t = np.asarray(times, dtype=np.float64) / DECADE_SECONDS
    if t.shape != y.shape:
        raise DiagnosticError("times and series lengths differ")
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx == 0.0:
        raise DiagnosticError("constant time axis")
    slope = float(tc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * t.mean())
    resid = y - (intercept + slope * t)
    return TrendFit(slope, intercept, float(resid @ resid) / len(y), variable, region, len(y))


# ---------------------------------------------------------------- space-time spectra


def space_time_periodogram(segment: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Power of a real (time, lon) segment over (k, f >= 0).

    Eastward-moving waves appear at positive k. Negative and positive
    frequencies are folded together, so the sum of the returned power equals
    ``mean(segment ** 2)``. Returns (k, frequency index, power[k, f]).
    """
    nt, nx = segment.shape
    X = np.fft.fft2(segment) / (nt * nx)
    p2 = np.abs(X) ** 2  # [freq, k]
    ks = np.fft.fftfreq(nx, 1.0 / nx).astype(int)
    order = np.argsort(ks, kind="stable")
    nf = nt // 2 + 1
    j = np.arange(nf)
    # a wave exp(i(k x - w t)) lands at (k, -w); reindex so that +k, +f is eastward
    neg = p2[(-j) % nt][:, order]
    pos = p2[j][:, (-ks[order]) % nx]
    fold = np.ones(nf)
    fold[0] = 0.0
    if nt % 2 == 0:
        fold[-1] = 0.0
    power = (neg + fold[:, None] * pos).T
    return ks[order], j, power


def hann(n: int) -> np.ndarray:
    return np.hanning(n)


def _detrend(x: np.ndarray) -> np.ndarray:
    """Remove a least-squares line along axis 0."""
    n = x.shape[0]
    t = np.arange(n) - (n - 1) / 2.0
    flat = x.reshape(n, -1)
    slope = (t @ (flat - flat.mean(axis=0))) / (t @ t)
    return (flat - flat.mean(axis=0) - np.outer(t, slope)).reshape(x.shape)


def smooth_121(a: np.ndarray, axis: int, passes: int) -> np.ndarray:
    """Repeated 1-2-1 filtering with reflecting ends."""
    a = np.moveaxis(np.array(a, dtype=np.float64), axis, 0)
    for _ in range(passes):
        if a.shape[0] < 3:
            break
        p = np.concatenate([a[:1], a, a[-1:]])
        a = 0.25 * p[:-2] + 0.5 * p[1:-1] + 0.25 * p[2:]
    return np.moveaxis(a, 0, axis)


@dataclasses.dataclass
class WKSpectrum:
    wavenumbers: np.ndarray
    frequencies: np.ndarray  # cycles per day
    symmetric: np.ndarray  # [k, f]
    antisymmetric: np.ndarray
    background: np.ndarray | None
    segment_days: float
    overlap_days: float
    n_segments: int
    lat_band: tuple[float, float]

    def normalized(self, which: str = "symmetric") -> np.ndarray:
        if self.background is None:
            raise DiagnosticError("spectrum was computed without a background")
        return getattr(self, which) / self.background

    def peak(self, which: str = "symmetric") -> tuple[int, float]:
        p = getattr(self, which)
        i, j = np.unravel_index(np.argmax(p), p.shape)
        return int(self.wavenumbers[i]), float(self.frequencies[j])


def symmetric_parts(field: np.ndarray, lats: np.ndarray, band: tuple[float, float]):
    """Symmetric and antisymmetric components on the band latitudes north of the equator.

    ``field`` is (..., nlat, lon). Mirrored latitudes are ``j`` and ``nlat-1-j``.
    """
    nlat = len(lats)
    if not np.allclose(lats, -lats[::-1], atol=1e-9):
        raise DiagnosticError("latitudes are not symmetric about the equator")
    rows = [j for j in range(nlat) if lats[j] >= 0 and band[0] <= lats[j] <= band[1]
            and band[0] <= -lats[j] <= band[1]]
    if not rows:
        raise DiagnosticError(f"no grid latitudes in band {band}")
    n = field[..., rows, :]
    s = field[..., [nlat - 1 - j for j in rows], :]
    return 0.5 * (n + s), 0.5 * (n - s)


def wheeler_kiladis(field: np.ndarray, lats: np.ndarray, steps_per_day: float,
                    lat_band: tuple[float, float] = (-15.0, 15.0), segment_days: float = 96.0,
                    overlap_days: float = 60.0, max_wavenumber: int = 15,
                    background_passes: int = 10) -> WKSpectrum:
    """Wavenumber-frequency power of an equatorial band, split by equatorial symmetry.

    Each segment is linearly detrended and Hann tapered. Power is averaged
    over segments and band latitudes. With ``background_passes > 0`` a
    background is formed by 1-2-1 smoothing of the mean of both components.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3:
        raise DiagnosticError("field must be (time, nlat, nlon)")
    nt, nlat, nlon = field.shape
    if len(lats) != nlat:
        raise DiagnosticError("latitude count does not match field")
    if min(lat_band) < lats.min() - 1e-9 or max(lat_band) > lats.max() + 1e-9:
        raise DiagnosticError(f"band {lat_band} outside grid")
    seg = int(round(segment_days * steps_per_day))
    hop = int(round((segment_days - overlap_days) * steps_per_day))
    if seg < 2 or hop < 1:
        raise DiagnosticError("segment must be longer than its overlap")
    if seg > nt:
        raise DiagnosticError(f"segment of {seg} steps longer than trajectory ({nt})")
    starts = list(range(0, nt - seg + 1, hop))
    if len(starts) < 2:
        raise DiagnosticError("trajectory shorter than two segments")
    sym, asym = symmetric_parts(field, lats, lat_band)
    taper = hann(seg)[:, None, None]
    acc = {}
    for name, comp in (("sym", sym), ("asym", asym)):
        total = None
        for s in starts:
            x = _detrend(comp[s : s + seg]) * taper
            for r in range(x.shape[1]):
                ks, j, p = space_time_periodogram(x[:, r, :])
                total = p if total is None else total + p
        acc[name] = total / (len(starts) * comp.shape[1])
    kmax = min(max_wavenumber, nlon // 2)
    keep = np.abs(ks) <= kmax
    freqs = j * steps_per_day / seg
    sym_p, asym_p = acc["sym"][keep], acc["asym"][keep]
    background = None
    if background_passes > 0:
        background = smooth_121(smooth_121(0.5 * (sym_p + asym_p), 1, background_passes), 0, background_passes)
    return WKSpectrum(ks[keep], freqs, sym_p, asym_p, background, segment_days, overlap_days,
                      len(starts), tuple(lat_band))


EARTH_RADIUS = 6.371e6
GRAVITY = 9.81
BETA = 2.0 * 7.292e-5 / EARTH_RADIUS
EQUIVALENT_DEPTHS = (12.0, 25.0, 50.0)


def dispersion_curves(depths=EQUIVALENT_DEPTHS, kmax: int = 15, npts: int = 121) -> dict:
    """Equatorial shallow-water dispersion curves, frequency in cycles per day.

    Keys are ``(wave, depth)`` for Kelvin, ER n=1, MRG, EIG n=0 and IG n=1;
    values are (wavenumber, frequency) on each branch's own k range.
    """
    s = np.linspace(-kmax, kmax, npts)
    k = s / EARTH_RADIUS
    to_cpd = DAY_SECONDS / (2.0 * np.pi)
    out = {}
    for h in depths:
        c = math.sqrt(GRAVITY * h)
        east, west = s >= 0, s <= 0
        n0 = 0.5 * k * c + np.sqrt((0.5 * k * c) ** 2 + BETA * c)
        with np.errstate(divide="ignore", invalid="ignore"):
            er = -BETA * k / (k**2 + 3.0 * BETA / c)
        out[("kelvin", h)] = (s[east], (c * k * to_cpd)[east])
        out[("er1", h)] = (s[west], (er * to_cpd)[west])
        out[("mrg", h)] = (s[west], (n0 * to_cpd)[west])
        out[("eig0", h)] = (s[east], (n0 * to_cpd)[east])
        out[("ig1", h)] = (s, np.sqrt(3.0 * BETA * c + (c * k) ** 2) * to_cpd)
    return out


# ---------------------------------------------------------------- annular modes


@dataclasses.dataclass
class EOFResult:
    pattern: np.ndarray  # (nlat_sel, nlon), unit norm under cos-latitude weighting
    lats: np.ndarray
    explained: float
    explained_all: np.ndarray
    pc: np.ndarray
    sign_convention: str = "polar-cap-negative"
    degenerate: bool = False
    seasons: int = 0


def season_years(times: np.ndarray, months=(12, 1, 2)) -> tuple[np.ndarray, np.ndarray]:
    """Mask of steps in ``months`` and the season year of each (December counts toward the next year)."""
    cal = calendar(times)
    mask = np.isin(cal["month"], months)
    sy = cal["year"] + ((cal["month"] == 12) & (12 in months) & (1 in months)).astype(np.int64)
    return mask, sy


def leading_eof(field: np.ndarray, times: np.ndarray, lats: np.ndarray, hemisphere: str = "north",
                months=(12, 1, 2), deseasonalize: str = "daily", lat_limit: float = 20.0,
                cap_lat: float = 60.0) -> EOFResult:
    """Leading EOF of hemispheric anomalies in the selected months.

    ``deseasonalize`` is ``"daily"`` (remove the day-of-year mean) or
    ``"mean"`` (remove the time mean of the selection). Rows are weighted
    by sqrt(cos(lat)) before the SVD.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[0] != len(times) or field.shape[1] != len(lats):
        raise DiagnosticError("field must be (time, nlat, nlon) matching times and lats")
    if hemisphere not in ("north", "south"):
        raise DiagnosticError("hemisphere must be 'north' or 'south'")
    mask, sy = season_years(times, months)
    if len(np.unique(sy[mask])) < 2:
        raise DiagnosticError("need at least two seasons of the selected months")
    rows = np.where(lats >= lat_limit)[0] if hemisphere == "north" else np.where(lats <= -lat_limit)[0]
    if len(rows) == 0:
        raise DiagnosticError("no latitudes in the hemisphere")
    x = field[mask][:, rows, :]
    if deseasonalize == "daily":
        doy = calendar(np.asarray(times)[mask])["doy"]
        x = x.copy()
        for d in np.unique(doy):
            sel = doy == d
            x[sel] -= x[sel].mean(axis=0)
    elif deseasonalize == "mean":
        x = x - x.mean(axis=0)
    else:
        raise DiagnosticError(f"unknown deseasonalize mode {deseasonalize!r}")
    sel_lats = lats[rows]
    wt = np.sqrt(np.cos(np.radians(sel_lats)))[:, None]
    a = (x * wt).reshape(len(x), -1)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    s2 = s**2
    total = s2.sum()
    if total == 0.0:
        raise DiagnosticError("anomalies are identically zero")
    v = vt[0].reshape(len(rows), -1)
    pattern = v / wt
    polar = np.abs(sel_lats) >= cap_lat
    if not polar.any():
        polar = np.abs(sel_lats) == np.abs(sel_lats).max()
    cap = np.average(pattern[polar].mean(axis=1), weights=np.cos(np.radians(sel_lats[polar])))
    sign = -1.0 if cap > 0 else 1.0
    degenerate = len(s2) > 1 and (s2[0] - s2[1]) <= 1e-8 * s2[0]
    return EOFResult(sign * pattern, sel_lats, float(s2[0] / total), s2 / total, sign * u[:, 0] * s[0],
                     degenerate=bool(degenerate), seasons=int(len(np.unique(sy[mask]))))


# ---------------------------------------------------------------- stratospheric warmings


@dataclasses.dataclass(frozen=True)
class SSWEvent:
    onset: int  # day index into the daily series
    duration: int  # days of easterly reversal
    peak_temperature_anomaly: float


@dataclasses.dataclass
class SSWResult:
    u_index: np.ndarray
    t_index: np.ndarray
    u_clim: np.ndarray | None  # (360,) day-of-year mean
    u_std: np.ndarray | None
    t_clim: np.ndarray | None
    t_std: np.ndarray | None
    events: list[SSWEvent]
    flags: tuple[str, ...] = ()

    def envelope(self, which: str = "u") -> tuple[np.ndarray, np.ndarray]:
        m, s = (self.u_clim, self.u_std) if which == "u" else (self.t_clim, self.t_std)
        if m is None:
            raise DiagnosticError("no climatology (trajectory shorter than one year)")
        return m - 2 * s, m + 2 * s


def daily_means(series: np.ndarray, steps_per_day: int) -> np.ndarray:
    n = len(series) // steps_per_day
    return np.asarray(series[: n * steps_per_day]).reshape(n, steps_per_day).mean(axis=1)


def doy_climatology(daily: np.ndarray, first_doy: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Day-of-year mean and standard deviation over years; needs one full year."""
    if len(daily) < YEAR_DAYS:
        raise DiagnosticError("climatology needs at least one year of daily values")
    doy = (first_doy + np.arange(len(daily))) % YEAR_DAYS
    mean = np.array([daily[doy == d].mean() for d in range(YEAR_DAYS)])
    std = np.array([daily[doy == d].std() for d in range(YEAR_DAYS)])
    return mean, std


def find_reversals(u_daily: np.ndarray, months: np.ndarray, winter=(11, 12, 1, 2, 3),
                   min_westerly: int = 10, debounce: int = 2) -> list[tuple[int, int]]:
    """(onset, duration) of each winter reversal of a daily wind index.

    Onset is a winter day where the index first goes below zero after at
    least ``min_westerly`` consecutive westerly days and stays easterly for
    ``debounce`` days or more.
    """
    u = np.asarray(u_daily)
    events, westerly, d = [], 0, 0
    while d < len(u):
        if u[d] >= 0:
            westerly += 1
            d += 1
            continue
        run = 1
        while d + run < len(u) and u[d + run] < 0:
            run += 1
        if westerly >= min_westerly and run >= debounce and months[d] in winter:
            events.append((d, run))
        westerly = 0
        d += run
    return events


def ssw_diagnostics(u_top: np.ndarray, t_top: np.ndarray, times: np.ndarray, lats: np.ndarray,
                    steps_per_day: int, u_band=(55.0, 65.0), cap_lat: float = 60.0,
                    min_westerly: int = 10, debounce: int = 2) -> SSWResult:
    """Polar-vortex wind and polar-cap temperature indices with events and envelopes.

    Inputs are top-level (time, nlat, nlon) fields. If no grid latitude
    falls inside ``u_band`` the latitude nearest its centre is used.
    """
    _, w = gaussian_lats(len(lats)) if len(lats) else (None, None)
    rows = np.where((lats >= u_band[0]) & (lats <= u_band[1]))[0]
    flags = []
    if len(rows) == 0:
        rows = np.array([int(np.argmin(np.abs(lats - 0.5 * (u_band[0] + u_band[1]))))])
        flags.append("u-band-nearest-latitude")
    cap = np.where(lats >= cap_lat)[0]
    if len(cap) == 0:
        raise DiagnosticError(f"no latitudes north of {cap_lat}")
    zu = np.asarray(u_top).mean(axis=-1)
    zt = np.asarray(t_top).mean(axis=-1)
    u_series = zu[:, rows] @ (w[rows] / w[rows].sum())
    t_series = zt[:, cap] @ (w[cap] / w[cap].sum())
    u_d, t_d = daily_means(u_series, steps_per_day), daily_means(t_series, steps_per_day)
    day_times = np.asarray(times)[:: steps_per_day][: len(u_d)]
    cal = calendar(day_times)
    clim = [None] * 4
    if len(u_d) >= YEAR_DAYS:
        first = int(cal["doy"][0])
        clim = [*doy_climatology(u_d, first), *doy_climatology(t_d, first)]
        t_anom = t_d - clim[2][cal["doy"]]
    else:
        flags.append("short-for-climatology")
        t_anom = t_d - t_d.mean()
    events = [SSWEvent(on, dur, float(t_anom[on : on + dur].max()))
              for on, dur in find_reversals(u_d, cal["month"], min_westerly=min_westerly, debounce=debounce)]
    return SSWResult(u_d, t_d, *clim, events, tuple(flags))


# ---------------------------------------------------------------- PDFs


@dataclasses.dataclass
class LogPDF:
    edges: np.ndarray
    log_density: np.ndarray  # log10, -inf for empty bins
    count: int
    flags: tuple[str, ...] = ()

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def log_pdf(values, edges, weights=None) -> LogPDF:
    """Weighted histogram normalized to unit integral over the bins, in log10."""
    x = np.asarray(values, dtype=np.float64).ravel()
    edges = np.asarray(edges, dtype=np.float64)
    if x.size == 0:
        raise DiagnosticError("no samples")
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise DiagnosticError("edges must be strictly increasing")
    w = None if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), np.shape(values)).ravel()
    hist, _ = np.histogram(x, bins=edges, weights=w)
    mass = hist.sum()
    if mass <= 0:
        raise DiagnosticError("no samples inside the bin edges")
    dens = hist / (mass * np.diff(edges))
    flags = ("single-bin",) if np.count_nonzero(hist) == 1 else ()
    with np.errstate(divide="ignore"):
        logd = np.log10(dens)
    return LogPDF(edges, logd, int(x.size), flags)


def field_log_pdf(field: np.ndarray, edges) -> LogPDF:
    """Log-PDF of a (time, nlat, nlon) field with quadrature-weighted samples."""
    _, w = gaussian_lats(field.shape[-2])
    return log_pdf(field, edges, w[:, None])


# ---------------------------------------------------------------- reports


def write_table(path, kind: str, columns, rows, meta: dict | None = None) -> None:
    """Self-describing whitespace table with a versioned header."""
    lines = [f"{REPORT_MAGIC} v{REPORT_VERSION}", f"# kind: {kind}"]
    lines += [f"# {k}: {v}" for k, v in sorted((meta or {}).items())]
    lines.append(" ".join(columns))
    for r in rows:
        if len(r) != len(columns):
            raise DiagnosticError("row length does not match columns")
        lines.append(" ".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> tuple[str, dict, list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(REPORT_MAGIC):
        raise DiagnosticError(f"{path} is not a report table")
    version = int(lines[0].split()[-1].lstrip("v"))
    if version != REPORT_VERSION:
        raise DiagnosticError(f"unsupported report version {version}")
    meta, i = {}, 1
    while i < len(lines) and lines[i].startswith("# "):
        k, _, v = lines[i][2:].partition(": ")
        meta[k] = v
        i += 1
    kind = meta.pop("kind")
    return kind, meta, lines[i].split(), [ln.split() for ln in lines[i + 1 :]]


def write_zonal_maps(path, maps: dict[str, ZonalMap], sigma_levels, nlat: int) -> None:
    """Store (levels, nlat) maps as a one-step container with nlon = 1."""
    variables, blocks = [], []
    for name, m in maps.items():
        vals = np.atleast_2d(m.values)
        variables.append(VarInfo(name, vals.shape[0], "diagnostic"))
        blocks.append(vals)
        if m.reference is not None:
            variables.append(VarInfo(f"{name}_reference", vals.shape[0], "diagnostic"))
            blocks.append(np.atleast_2d(m.reference))
    data = np.concatenate(blocks, axis=0)[None, :, :, None]
    write_container(path, FieldContainer(nlat, 1, tuple(sigma_levels), 0, 1, variables, data))
