"""Named inference experiments and their report bundles."""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .data import FieldContainer
from .forcing import YEAR_SECONDS
from .rollout import (
    RolloutConfig,
    co2_series_from_container,
    forcings_from_container,
    initial_state,
    run_rollout,
)
from .sfno import Checkpoint

MANIFEST = "manifest.txt"
TRAJECTORY = "trajectory.luc3"


class ExperimentError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ExperimentPreset:
    name: str
    family: str
    rollout: dict
    diagnostics: tuple[str, ...] = ("trend",)

    @property
    def needs_sst(self) -> bool:
        return self.rollout.get("sst_mode", "none") != "none"


def _presets() -> dict[str, ExperimentPreset]:
    p = [
        ExperimentPreset("forcing-response", "co2", {"co2_mode": "observed"}, ("trend", "change")),
        ExperimentPreset("stationary-forcing", "co2", {"co2_mode": "stationary"}, ("trend", "change")),
        ExperimentPreset("spinup-climatology", "spinup", {"init_mode": "climatology"}, ("trend", "spinup")),
        ExperimentPreset("spinup-zero", "spinup", {"init_mode": "zero"}, ("trend", "spinup")),
        ExperimentPreset("era-shift", "spinup", {"init_mode": "state", "init_fraction": 0.5}, ("trend", "clim")),
    ]
    for d in (0, 2, 4):
        p.append(ExperimentPreset(f"biased-sst-{d}", "sst", {"sst_mode": "biased", "sst_delta": float(d)},
                                  ("trend", "clim")))
        p.append(ExperimentPreset(f"biased-sst-smoothed-{d}", "sst",
                                  {"sst_mode": "smoothed", "sst_delta": float(d)}, ("trend", "clim")))
    return {x.name: x for x in p}


PRESETS = _presets()


def preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ExperimentError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def rollout_config(p: ExperimentPreset, dataset: FieldContainer, horizon: int | None, stride: int) -> RolloutConfig:
    kw = dict(p.rollout)
    frac = kw.pop("init_fraction", 0.0)
    start = int(frac * (dataset.t_count - 1))
    if kw.get("co2_mode") == "stationary":
        kw["co2_year"] = int((dataset.t_start + start * dataset.t_step) // YEAR_SECONDS)
    max_h = dataset.t_count - 1 - start
    h = max_h if horizon is None else horizon
    if h > max_h and p.needs_sst:
        raise ExperimentError(f"horizon {h} exceeds the {max_h} steps of SST data")
    return RolloutConfig(horizon=h, init_index=start, stride=stride, **kw)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, files: list[str], meta: dict) -> Path:
    lines = [f"# {k}: {v}" for k, v in sorted(meta.items())]
    lines += [f"{sha256(out_dir / f)}  {f}" for f in sorted(files)]
    path = out_dir / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            digest, name = line.split("  ", 1)
            out[name] = digest
    return out


def trend_rows(traj: FieldContainer, channels) -> list[list]:
    """Trend of the global mean of each channel: on annual means when a year or more is available."""
    per_year = max(1, YEAR_SECONDS // traj.t_step)
    rows = []
    for ch in channels:
        series = dg.global_mean_series(traj, ch)
        times = traj.times().astype(np.float64)
        if len(series) >= 2 * per_year:
            n = len(series) // per_year
            series = dg.annual_means(series, per_year)
            times = times[: n * per_year].reshape(n, per_year).mean(axis=1)
        if len(series) < 2:
            continue
        fit = dg.fit_trend(series, times=times, variable=ch, region="global")
        rows.append([ch, fit.slope, fit.intercept, fit.residual_variance, fit.n])
    return rows


def run_experiment(name: str, ckpt: Checkpoint, dataset: FieldContainer, out_dir, horizon: int | None = None,
                   stride: int = 1) -> Path:
    """Roll out one preset, write its diagnostics and a checksummed manifest."""
    p = preset(name)
    if p.needs_sst and not ckpt.layout.use_sst:
        raise ExperimentError(f"preset {name} needs an SST-trained checkpoint")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rc = rollout_config(p, dataset, horizon, stride)
    if ckpt.layout.use_sst and not p.needs_sst:
        # SST-trained models always need an SST; non-SST presets feed the observed one
        rc = dataclasses.replace(rc, sst_mode="observed")
    forcings = forcings_from_container(dataset, ckpt.grid, rc, co2=co2_series_from_container(dataset))
    init = initial_state(dataset, ckpt.layout, rc)
    traj = run_rollout(ckpt, init, forcings, rc, out / TRAJECTORY)
    files = [TRAJECTORY]
    nlev = ckpt.layout.nlevels
    meta = {"preset": name, "family": p.family, "horizon": rc.horizon, "stride": rc.stride,
            "init_mode": rc.init_mode, "init_index": rc.init_index, "co2_mode": rc.co2_mode,
            "sst_mode": rc.sst_mode, "sst_delta": rc.sst_delta}
    if "trend" in p.diagnostics:
        rows = trend_rows(traj, [f"T_{nlev - 1}", "T_0", "logP"])
        dg.write_table(out / "trend.txt", "trend", ["channel", "slope_per_decade", "intercept", "residual_var", "n"],
                       rows, meta)
        files.append("trend.txt")
    if "spinup" in p.diagnostics:
        series = {ch: dg.global_mean_series(traj, ch) for ch in (f"T_{nlev - 1}", "T_0")}
        rows = [[k, *(series[ch][k] for ch in series)] for k in range(traj.t_count)]
        dg.write_table(out / "spinup.txt", "spinup", ["record", *series], rows, meta)
        files.append("spinup.txt")
    if "change" in p.diagnostics and traj.t_count >= 2:
        half = traj.t_count // 2
        maps = {v: dg.climate_change_map(traj, v, (0, half), (half, 2 * half)) for v in ("T", "U")}
        dg.write_zonal_maps(out / "change.luc3", maps, traj.sigma_levels, traj.nlat)
        files.append("change.luc3")
    if "clim" in p.diagnostics:
        ref = dataset.subset_time(rc.init_index, rc.init_index + rc.horizon + 1)
        if rc.stride > 1:
            ref = dataclasses.replace(ref, t_step=ref.t_step * rc.stride, data=ref.data[:: rc.stride])
        if ref.t_count == traj.t_count:
            maps = dg.climatology_bias(traj, ref, ("T", "U", "SH"))
            dg.write_zonal_maps(out / "clim_bias.luc3", maps, traj.sigma_levels, traj.nlat)
            files.append("clim_bias.luc3")
    return write_manifest(out, files, meta)
