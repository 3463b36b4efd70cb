"""Synthetic forced climate that stands in for reanalysis at desk scale.

Every prognostic channel follows a linear relaxation toward an equilibrium
that is a pointwise function of the forcings::

    x_eq = base + gain * (tisr - 340) + oro * orography + land * mask + sens * (co2 - co2_0)

split into a deterministic response ``d`` and a red-noise anomaly ``e``::

    d[n+1] = d[n] + r * (x_eq[n] - d[n])
    e[n+1] = (1 - s) * e[n] + amp * sqrt(2 s) * xi[n]

with ``r = dt / tau_relax``, ``s = dt / tau_noise`` and ``xi`` isotropic
band-limited noise that includes degree 0, so every spectral degree of the
state is excited. When ``tau_noise == tau_relax``
(the default) the sum ``d + e`` is itself Markov with drift ``r * (x_eq - x)``,
which is what a one-step emulator can learn. Planted equatorial waves are added on top, and TP is a quadratic
function of near-surface humidity. The deterministic part starts on its
periodic orbit (including the lag behind a linear CO2 ramp), so with zero
noise and zero sensitivity every year repeats exactly.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from .data import ContainerWriter, FieldContainer, VarInfo, read_container
from .forcing import (
    DAY_SECONDS,
    LAND_SST,
    STEP_SECONDS,
    STEPS_PER_YEAR,
    YEAR_SECONDS,
    Co2Series,
    linear_co2_series,
    interpolate_co2,
    tisr_field,
)
from .grid import GridSpec, random_bandlimited
from .layout import LEVEL_VARS, channel_name

log = logging.getLogger(__name__)

TISR_REF = 340.0
LOGP_REF = float(np.log(101325.0))
SCALE_HEIGHT = 8000.0
# per-level CO2 response factors, model top first: the upper two levels cool
CO2_LEVEL_FACTORS = (-2.0, -1.5, 0.5, 0.8, 1.0, 1.0, 1.0, 1.0)


@dataclasses.dataclass(frozen=True)
class Wave:
    """A planted equatorial wave ``A g(lat) cos(k lon - 2 pi t / period)``.

    Positive ``k`` travels eastward. ``symmetric`` picks a Gaussian (symmetric)
    or latitude-times-Gaussian (antisymmetric) meridional structure.
    """

    variable: str
    levels: tuple[int, ...]
    k: int
    period_days: float
    amplitude: float
    symmetric: bool = True
    width_deg: float = 15.0

    def meridional(self, lats: np.ndarray) -> np.ndarray:
        y = lats / self.width_deg
        g = np.exp(-(y**2))
        return g if self.symmetric else y * g

    def field(self, lats, lons_rad, t_seconds) -> np.ndarray:
        omega = 2.0 * np.pi / (self.period_days * DAY_SECONDS)
        phase = self.k * lons_rad[None, :] - omega * t_seconds
        return self.amplitude * self.meridional(lats)[:, None] * np.cos(phase)


DEFAULT_WAVES = (
    Wave("U", (4, 5, 6, 7), k=3, period_days=10.0, amplitude=4.0, symmetric=True),
    Wave("T", (5, 6, 7), k=3, period_days=10.0, amplitude=1.0, symmetric=True),
    Wave("V", (4, 5, 6, 7), k=-5, period_days=8.0, amplitude=1.5, symmetric=False),
)


@dataclasses.dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    years: int = 1
    co2_start: float = 340.0
    co2_end: float = 400.0
    forcing_sensitivity: float = 0.01  # K per ppm at the surface
    noise_amplitude: float = 0.3  # multiplier on the per-variable noise levels
    noise_max_degree: int | None = None  # None: the grid truncation
    relax_days: float = 5.0
    noise_days: float = 5.0  # equal to relax_days keeps the state Markov
    waves: tuple[Wave, ...] = DEFAULT_WAVES
    include_sst: bool = True
    land_fraction: float = 0.3
    start_seconds: int = 0

    def __post_init__(self):
        if self.years < 1:
            raise ValueError("years must be >= 1")
        if min(self.relax_days, self.noise_days) * DAY_SECONDS <= STEP_SECONDS:
            raise ValueError("relaxation and noise time scales must exceed one step")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")

    @property
    def steps(self) -> int:
        return self.years * STEPS_PER_YEAR

    @property
    def co2_rate(self) -> float:
        """ppm per second."""
        return (self.co2_end - self.co2_start) / (self.years * YEAR_SECONDS)

    def co2_series(self) -> Co2Series:
        return linear_co2_series(self.co2_start, self.co2_end, self.years)


@dataclasses.dataclass
class _Coefficients:
    """Per-channel equilibrium coefficients, shape (C,) each."""

    names: list[str]
    base: np.ndarray
    gain: np.ndarray
    oro: np.ndarray
    land: np.ndarray
    sens: np.ndarray
    noise: np.ndarray


def _level_profile(nlev: int, top: float, bottom: float) -> np.ndarray:
    return np.linspace(top, bottom, nlev)


def _coefficients(cfg: SynthConfig, nlev: int) -> _Coefficients:
    names, base, gain, oro, land, sens, noise = [], [], [], [], [], [], []
    sfac = np.interp(np.linspace(0, 1, nlev), np.linspace(0, 1, len(CO2_LEVEL_FACTORS)), CO2_LEVEL_FACTORS)
    t_base = np.interp(np.linspace(0, 1, nlev), np.linspace(0, 1, 8), [215, 210, 220, 235, 250, 262, 272, 280])
    t_gain = _level_profile(nlev, 0.02, 0.10)
    q_ref = 0.012 * np.exp(-6.0 * np.linspace(1, 0, nlev) ** 1.2)
    u_base = _level_profile(nlev, 10.0, 4.0)
    u_gain = _level_profile(nlev, -0.10, -0.01)
    for k in range(nlev):
        lower = k >= nlev // 2
        names.append(channel_name("T", k))
        base.append(t_base[k]); gain.append(t_gain[k]); oro.append(-0.0065 if lower else 0.0)
        land.append(1.0 if lower else 0.0); sens.append(cfg.forcing_sensitivity * sfac[k])
        noise.append(2.0 if k == 0 else 1.0)
    for k in range(nlev):
        names.append(channel_name("SH", k))
        base.append(q_ref[k] * (0.45 + TISR_REF / 800.0)); gain.append(q_ref[k] / 800.0)
        oro.append(-0.1 * q_ref[k] / 3000.0); land.append(-0.05 * q_ref[k]); sens.append(0.0); noise.append(0.06 * q_ref[k])
    for k in range(nlev):
        lower = k >= nlev // 2
        names.append(channel_name("U", k))
        base.append(u_base[k]); gain.append(u_gain[k]); oro.append(-0.001 if lower else 0.0)
        land.append(-1.0 if lower else 0.0); sens.append(0.0); noise.append(6.0 if k == 0 else 2.0)
    for k in range(nlev):
        names.append(channel_name("V", k))
        base.append(0.0); gain.append(0.0); oro.append(0.0)
        land.append(0.0); sens.append(0.0); noise.append(2.0)
    names.append("logP")
    base.append(LOGP_REF); gain.append(0.0); oro.append(-1.0 / SCALE_HEIGHT)
    land.append(0.0); sens.append(0.0); noise.append(0.002)
    arr = lambda v: np.asarray(v, dtype=np.float64)  # noqa: E731
    return _Coefficients(names, arr(base), arr(gain), arr(oro), arr(land), arr(sens), arr(noise))


def static_fields(grid: GridSpec, seed: int, land_fraction: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Seeded smooth continents: fractional land-sea mask and orography (m)."""
    rng = np.random.default_rng([seed, 1])
    f = random_bandlimited(grid, rng, max_degree=min(4, grid.truncation), skip_mean=True)
    thresh = np.quantile(f, 1.0 - land_fraction)
    mask = np.clip((f - thresh) / 0.4 + 0.5, 0.0, 1.0)
    g = random_bandlimited(grid, rng, max_degree=min(6, grid.truncation), skip_mean=True)
    g = (g - g.min()) / (g.max() - g.min())
    orography = 2500.0 * mask * (0.2 + 0.8 * g)
    return mask, orography


def synth_variables(nlev: int, include_sst: bool) -> list[VarInfo]:
    vs = [VarInfo(v, nlev, "prognostic") for v in LEVEL_VARS]
    vs += [
        VarInfo("logP", 1, "prognostic"),
        VarInfo("TP", 1, "diagnostic"),
        VarInfo("orography", 1, "static"),
        VarInfo("land_sea_mask", 1, "static"),
        VarInfo("tisr", 1, "forcing"),
        VarInfo("co2", 1, "forcing"),
    ]
    if include_sst:
        vs.append(VarInfo("sst", 1, "forcing"))
    return vs


def _tp(sh_surface: np.ndarray, q_surface: float) -> np.ndarray:
    return 2.0 * (np.maximum(sh_surface, 0.0) / q_surface) ** 2


class SyntheticClimate:
    """Stateful stepper; ``generate_synthetic_climate`` drives it to a file."""

    def __init__(self, cfg: SynthConfig, grid: GridSpec):
        self.cfg, self.grid = cfg, grid
        self.nlev = len(grid.sigma_levels)
        self.coef = _coefficients(cfg, self.nlev)
        self.mask, self.orography = static_fields(grid, cfg.seed, cfg.land_fraction)
        self.co2 = cfg.co2_series()
        self.rate = STEP_SECONDS / (cfg.relax_days * DAY_SECONDS)
        self.noise_rate = STEP_SECONDS / (cfg.noise_days * DAY_SECONDS)
        self.noise_degree = grid.truncation if cfg.noise_max_degree is None else min(cfg.noise_max_degree, grid.truncation)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.lons = grid.lon_radians
        self.lats = grid.lats
        self.q_surface = float(self.coef.base[2 * self.nlev - 1] + self.coef.gain[2 * self.nlev - 1] * TISR_REF)
        self.idx = {n: i for i, n in enumerate(self.coef.names)}
        self.n = 0
        self.d = self._initial_deterministic()
        amp = cfg.noise_amplitude * self.coef.noise
        self.e = amp[:, None, None] * self._noise()

    def _static_part(self) -> np.ndarray:
        c = self.coef
        return (
            c.base[:, None, None]
            + c.oro[:, None, None] * self.orography
            + c.land[:, None, None] * self.mask
        )

    def equilibrium(self, t_seconds: float, co2: float) -> np.ndarray:
        c = self.coef
        tisr = tisr_field(self.grid, t_seconds)
        return (
            self._static_part()
            + c.gain[:, None, None] * (tisr - TISR_REF)
            + c.sens[:, None, None] * (co2 - self.cfg.co2_start)
        )

    def _initial_deterministic(self) -> np.ndarray:
        """Start of the periodic orbit, shifted by the steady lag behind the CO2 ramp."""
        r = self.rate
        t0 = self.cfg.start_seconds
        q = np.zeros((len(self.coef.names), *self.grid.shape))
        for n in range(STEPS_PER_YEAR):
            q = q + r * (self.equilibrium(t0 + n * STEP_SECONDS, self.cfg.co2_start) - q)
        q0 = q / (1.0 - (1.0 - r) ** STEPS_PER_YEAR)
        beta = self.coef.sens * self.cfg.co2_rate * STEP_SECONDS
        return q0 - (beta / r)[:, None, None]

    def _noise(self) -> np.ndarray:
        return random_bandlimited(
            self.grid, self.rng, batch=(len(self.coef.names),),
            max_degree=self.noise_degree,
        )

    def time(self, n: int) -> float:
        return self.cfg.start_seconds + n * STEP_SECONDS

    def co2_at(self, n: int) -> float:
        return interpolate_co2(self.co2, self.time(n))

    def state(self) -> np.ndarray:
        """Prognostic channels at the current step, in coefficient order."""
        x = self.d + self.e
        t = self.time(self.n)
        for w in self.cfg.waves:
            f = w.field(self.lats, self.lons, t)
            for k in w.levels:
                x[self.idx[channel_name(w.variable, k)]] += f
        sh = slice(self.nlev, 2 * self.nlev)
        x[sh] = np.maximum(x[sh], 0.0)
        return x

    def sst(self) -> np.ndarray:
        ocean = self.mask < 0.5
        surface = self.d[self.idx[channel_name("T", self.nlev - 1)]]
        return np.where(ocean, surface - 1.0, LAND_SST)

    def snapshot(self) -> np.ndarray:
        x = self.state()
        tp = _tp(x[self.idx[channel_name("SH", self.nlev - 1)]], self.q_surface)
        t = self.time(self.n)
        fields = [x, tp[None], self.orography[None], self.mask[None], tisr_field(self.grid, t)[None],
                  np.full((1, *self.grid.shape), self.co2_at(self.n))]
        if self.cfg.include_sst:
            fields.append(self.sst()[None])
        return np.concatenate(fields, axis=0)

    def advance(self):
        r = self.rate
        x_eq = self.equilibrium(self.time(self.n), self.co2_at(self.n))
        self.d = self.d + r * (x_eq - self.d)
        amp = self.cfg.noise_amplitude * self.coef.noise
        if self.cfg.noise_amplitude > 0:
            s = self.noise_rate
            self.e = (1.0 - s) * self.e + (amp * np.sqrt(2.0 * s))[:, None, None] * self._noise()
        self.n += 1


def generate_synthetic_climate(cfg: SynthConfig, grid: GridSpec, path=None) -> FieldContainer:
    """Generate ``cfg.years`` of 6-hourly data.

    With ``path`` the container is streamed to disk and returned memory-mapped;
    otherwise it is built in memory.
    """
    sim = SyntheticClimate(cfg, grid)
    variables = synth_variables(sim.nlev, cfg.include_sst)
    nfields = sum(v.levels for v in variables)
    if path is None:
        data = np.empty((cfg.steps, nfields, *grid.shape))
        for n in range(cfg.steps):
            data[n] = sim.snapshot()
            sim.advance()
        return FieldContainer(grid.nlat, grid.nlon, grid.sigma_levels, cfg.start_seconds, STEP_SECONDS, variables, data)
    path = Path(path)
    with ContainerWriter(path, grid.nlat, grid.nlon, grid.sigma_levels, cfg.start_seconds,
                         STEP_SECONDS, cfg.steps, variables) as w:
        for n in range(cfg.steps):
            w.append(sim.snapshot())
            sim.advance()
            if n and n % STEPS_PER_YEAR == 0:
                log.info("synth: year %d of %d", n // STEPS_PER_YEAR, cfg.years)
    return read_container(path, mmap=True)
