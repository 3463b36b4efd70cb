"""End-to-end forcing-response study on synthetic data.

Generates a forced synthetic climate, trains an emulator on it, and compares
rollouts under rising and stationary CO2 with the generator's analytic trend.
A third, longer rollout measures how far each prognostic channel strays from
its training range.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections.abc import Callable
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import sfno
from .data import compute_norm_stats, read_container
from .forcing import STEPS_PER_YEAR, YEAR_SECONDS
from .grid import build_grid
from .rollout import RolloutConfig, forcings_from_container, initial_state, run_rollout
from .synth import SynthConfig, generate_synthetic_climate
from .train import TrainConfig, TrainingData, train

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class StudyConfig:
    truncation: int = 3
    years: int = 10
    co2_start: float = 340.0
    co2_end: float = 1000.0
    sensitivity: float = 0.01
    # short memory keeps the forced signal visible above the noise in one step
    relax_days: float = 0.5
    noise_amplitude: float = 0.3
    # latent width must exceed the 33 prognostic channels, or some state
    # directions never reach the network and cannot be damped
    num_blocks: int = 2
    latent_dim: int = 64
    epochs: int = 40
    finetune_epochs: int = 3
    samples_per_epoch: int = 3200
    batch_size: int = 32
    lr_max: float = 2e-3
    trend_years: int = 4
    stability_years: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.trend_years < 2:
            raise ValueError("trend_years must be >= 2")
        if self.stability_years > self.years:
            raise ValueError("stability rollout cannot outrun the forcing data")

    @property
    def analytic_trend(self) -> float:
        """Generator surface trend in K per year."""
        return self.sensitivity * (self.co2_end - self.co2_start) / self.years


@dataclasses.dataclass
class StudyResult:
    config: StudyConfig
    rising: dict[str, float]  # K per year by channel
    stationary: dict[str, float]
    envelope_ratio: dict[str, float]  # max |x - mid| / half-range over the stability rollout
    finite: bool
    seconds: dict[str, float]

    @property
    def surface(self) -> str:
        return max(self.rising, key=lambda name: int(name.split("_")[1]))

    def summary(self) -> str:
        s = self.surface
        worst = max(self.envelope_ratio, key=self.envelope_ratio.get)
        return (f"analytic {self.config.analytic_trend:+.3f} K/yr; rising {s} {self.rising[s]:+.3f}, "
                f"T_0 {self.rising['T_0']:+.3f}; stationary {s} {self.stationary[s]:+.3f}; "
                f"worst envelope ratio {self.envelope_ratio[worst]:.3f} ({worst}); finite {self.finite}")


def annual_trend(traj, channel: str, years: int) -> float:
    """OLS slope (K per year) of annual global means over the first ``years`` years."""
    per_year = YEAR_SECONDS // traj.t_step
    series = dg.global_mean_series(traj, channel)[1 : 1 + years * per_year]
    if len(series) < years * per_year:
        raise ValueError(f"trajectory shorter than {years} years")
    annual = dg.annual_means(series, per_year)
    return dg.fit_trend(annual, step_seconds=YEAR_SECONDS).slope / 10.0


def run_study(cfg: StudyConfig, workdir, progress: Callable[[str], None] | None = None) -> StudyResult:
    say = progress or (lambda msg: log.info("%s", msg))
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    seconds = {}
    grid = build_grid(cfg.truncation)

    t0 = time.perf_counter()
    synth = SynthConfig(seed=cfg.seed, years=cfg.years, co2_start=cfg.co2_start, co2_end=cfg.co2_end,
                        forcing_sensitivity=cfg.sensitivity, relax_days=cfg.relax_days,
                        noise_days=cfg.relax_days, noise_amplitude=cfg.noise_amplitude)
    data_path = workdir / "synthetic.luc3"
    generate_synthetic_climate(synth, grid, data_path)
    data = read_container(data_path, mmap=True)
    stats = compute_norm_stats(data)
    seconds["data"] = time.perf_counter() - t0
    say(f"generated {data.t_count} steps in {seconds['data']:.0f} s")

    t0 = time.perf_counter()
    model = sfno.ModelConfig(num_blocks=cfg.num_blocks, latent_dim=cfg.latent_dim, truncation=cfg.truncation)
    tc = TrainConfig(total_epochs=cfg.epochs, finetune_epochs=cfg.finetune_epochs, batch_size=cfg.batch_size,
                     lr_max=cfg.lr_max, samples_per_epoch=cfg.samples_per_epoch, seed=cfg.seed)
    samples = TrainingData(data, stats, model.layout, tc.val_fraction)
    res = train(samples, tc, model, grid, log=lambda line: say(line) if line.startswith("epoch") else None)
    del samples
    ckpt = sfno.Checkpoint(model, res.params, stats, grid, {"seed": cfg.seed})
    sfno.save_checkpoint(workdir / "model.luck", ckpt)
    seconds["train"] = time.perf_counter() - t0

    def rollout(horizon: int, stride: int, **kw):
        rc = RolloutConfig(horizon=horizon, stride=stride, **kw)
        forcings = forcings_from_container(data, grid, rc, co2=synth.co2_series())
        try:
            return run_rollout(ckpt, initial_state(data, model.layout, rc), forcings, rc)
        except FloatingPointError as exc:
            say(f"rollout diverged: {exc}")
            return None

    def trends(traj):
        if traj is None:
            return {c: float("nan") for c in channels}
        return {c: annual_trend(traj, c, cfg.trend_years) for c in channels}

    channels = (f"T_{model.nlevels - 1}", "T_0")
    t0 = time.perf_counter()
    h = cfg.trend_years * STEPS_PER_YEAR
    rising = trends(rollout(h, 4))
    stationary = trends(rollout(h, 4, co2_mode="stationary", co2_year=0))
    seconds["trend_rollouts"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    long = rollout(cfg.stability_years * STEPS_PER_YEAR - 1, 40)
    ratio = {}
    for name in model.layout.prognostic:
        if long is None:
            ratio[name] = float("inf")
            continue
        ref = np.asarray(data.channel(name))
        lo, hi = float(ref.min()), float(ref.max())
        mid, half = 0.5 * (lo + hi), max(0.5 * (hi - lo), 1e-12)
        ratio[name] = float(np.max(np.abs(np.asarray(long.channel(name)) - mid)) / half)
    finite = long is not None and bool(np.all(np.isfinite(long.data)))
    seconds["stability_rollout"] = time.perf_counter() - t0
    return StudyResult(cfg, rising, stationary, ratio, finite, seconds)
