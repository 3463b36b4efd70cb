"""Autoregressive inference with Euler integration of predicted tendencies."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from . import sfno
from .data import ContainerWriter, FieldContainer, VarInfo, read_container
from .forcing import (
    MONTH_SECONDS,
    STEP_SECONDS,
    Co2Series,
    ForcingError,
    ForcingSeries,
)
from .layout import DIAGNOSTIC, LEVEL_VARS, SST, SURFACE_PROGNOSTIC, FieldSet

log = logging.getLogger(__name__)

INIT_MODES = ("state", "climatology", "zero")
CO2_MODES = ("observed", "stationary")
SST_MODES = ("none", "observed", "biased", "smoothed")


class RolloutError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class RolloutConfig:
    horizon: int
    dt: float = STEP_SECONDS
    co2_mode: str = "observed"
    co2_year: int | None = None
    sst_mode: str = "none"
    sst_delta: float = 0.0
    init_mode: str = "state"
    init_index: int = 0
    stride: int = 1
    clamp_tp: bool = True

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.dt != STEP_SECONDS:
            raise ValueError(f"dt is fixed at {STEP_SECONDS} s")
        if self.co2_mode not in CO2_MODES:
            raise ValueError(f"co2_mode must be one of {CO2_MODES}")
        if self.co2_mode == "stationary" and self.co2_year is None:
            raise ValueError("stationary CO2 needs co2_year")
        if self.sst_mode not in SST_MODES:
            raise ValueError(f"sst_mode must be one of {SST_MODES}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def uses_sst(self) -> bool:
        return self.sst_mode != "none"


def euler_step(state: FieldSet, tendencies: FieldSet, dt: float) -> FieldSet:
    """x(t + dt) = x(t) + dt * tendency for every prognostic channel."""
    if state.names != tendencies.names:
        raise ValueError("state and tendency layouts differ")
    out = state.values + dt * tendencies.values
    if not np.all(np.isfinite(out)):
        raise RolloutError("non-finite state after Euler step")
    return FieldSet(state.names, out)


def co2_series_from_container(c: FieldContainer, pad: bool = True) -> Co2Series:
    """Recover monthly anchors by sampling the 6-hourly CO2 channel at month midpoints.

    With ``pad`` one month is linearly extrapolated at each end so that the
    first and last half months of the container stay covered.
    """
    times = c.times()
    first = int(np.ceil((times[0] / MONTH_SECONDS) - 0.5))
    vals, m = [], first
    co2 = c.channel("co2")
    while True:
        t = (m + 0.5) * MONTH_SECONDS
        i = (t - c.t_start) / c.t_step
        if i > c.t_count - 1:
            break
        if i == int(i):
            vals.append(float(co2[int(i), 0, 0]))
        else:
            raise ForcingError("month midpoints do not fall on container time steps")
        m += 1
    if not vals:
        raise ForcingError("container spans no month midpoint")
    if pad and len(vals) >= 2:
        vals = [2 * vals[0] - vals[1], *vals, 2 * vals[-1] - vals[-2]]
        first -= 1
    return Co2Series(tuple(vals), first_month=first)


def forcings_from_container(c: FieldContainer, grid, config: RolloutConfig,
                            co2: Co2Series | None = None) -> ForcingSeries:
    """Forcing series starting at ``config.init_index`` of the container's time axis."""
    start = config.init_index
    sst = None
    if config.uses_sst:
        if SST not in [v.name for v in c.variables]:
            raise ForcingError("SST mode requested but the dataset carries no SST")
        sst = c.channel(SST)[start:]
    return ForcingSeries(
        grid=grid,
        co2=co2 if co2 is not None else co2_series_from_container(c),
        land_sea_mask=np.asarray(c.channel("land_sea_mask")[0]),
        orography=np.asarray(c.channel("orography")[0]),
        start_seconds=float(c.t_start + start * c.t_step),
        sst=sst,
        co2_stationary_year=config.co2_year if config.co2_mode == "stationary" else None,
        sst_bias=config.sst_delta if config.sst_mode in ("biased", "smoothed") else 0.0,
        sst_smoothed=config.sst_mode == "smoothed",
    )


def initial_state(c: FieldContainer, layout, config: RolloutConfig, span: tuple[int, int] | None = None) -> FieldSet:
    """Prognostic initial condition for the chosen init mode (physical units)."""
    idx = [c.channel_index(n) for n in layout.prognostic]
    if config.init_mode == "state":
        return FieldSet(layout.prognostic, np.array(c.data[config.init_index, idx]))
    if config.init_mode == "zero":
        return FieldSet(layout.prognostic, np.zeros((len(idx), c.nlat, c.nlon)))
    lo, hi = span if span is not None else (0, c.t_count)
    acc = np.zeros((len(idx), c.nlat, c.nlon))
    for s in range(lo, hi, 512):
        acc += np.asarray(c.data[s : min(s + 512, hi)][:, idx]).sum(axis=0)
    return FieldSet(layout.prognostic, acc / (hi - lo))


def trajectory_variables(layout, use_sst: bool) -> list[VarInfo]:
    vs = [VarInfo(v, layout.nlevels, "prognostic") for v in LEVEL_VARS]
    vs += [VarInfo(SURFACE_PROGNOSTIC, 1, "prognostic"), VarInfo(DIAGNOSTIC, 1, "diagnostic"),
           VarInfo("tisr", 1, "forcing"), VarInfo("co2", 1, "forcing")]
    if use_sst:
        vs.append(VarInfo(SST, 1, "forcing"))
    return vs


def run_rollout(ckpt: sfno.Checkpoint, init: FieldSet, forcings: ForcingSeries, config: RolloutConfig,
                out: str | Path | None = None) -> FieldContainer:
    """Integrate ``config.horizon`` steps from ``init``.

    Record ``k`` holds the state after ``k * stride`` steps, the TP emitted by
    the step that produced it (0 for the initial record) and the forcings at
    that time. With ``out`` the trajectory is streamed to disk.
    """
    layout, grid = ckpt.layout, ckpt.grid
    if layout.use_sst != config.uses_sst:
        need = "an SST-trained" if config.uses_sst else "a no-SST"
        raise RolloutError(f"SST mode {config.sst_mode!r} needs {need} checkpoint")
    if init.names != layout.prognostic:
        init = init.select(layout.prognostic)
    # the last record carries the forcings at step ``horizon`` too
    if not forcings.available(config.horizon + 1):
        raise ForcingError(f"forcings do not cover steps 0..{config.horizon}")
    norm = ckpt.normalizer()
    nrec = config.horizon // config.stride + 1
    variables = trajectory_variables(layout, config.uses_sst)
    nf = sum(v.levels for v in variables)
    writer = None
    data = None
    if out is not None:
        writer = ContainerWriter(out, grid.nlat, grid.nlon, grid.sigma_levels, int(forcings.start_seconds),
                                 int(config.dt * config.stride), nrec, variables)
    else:
        data = np.empty((nrec, nf, *grid.shape))

    def emit(k, state, tp, f):
        rec = [state, tp[None], f["tisr"][None], f["co2"][None]]
        if config.uses_sst:
            rec.append(f[SST][None])
        rec = np.concatenate(rec, axis=0)
        if writer is not None:
            writer.append(rec)
        else:
            data[k] = rec

    x = np.array(init.values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise RolloutError("non-finite initial state")
    try:
        f = forcings.at(0, config.uses_sst)
        emit(0, x, np.zeros(grid.shape), f)
        npro = layout.n_prognostic
        for n in range(config.horizon):
            stack = [x] + [f[name][None] for name in layout.forcing]
            inp = norm.normalize_inputs(np.concatenate(stack, axis=0))
            y = sfno.forward_array(ckpt.params, inp, ckpt.config, grid)
            tend = FieldSet(layout.prognostic, norm.tendency_per_second(y[:npro]))
            try:
                x = euler_step(FieldSet(layout.prognostic, x), tend, config.dt).values
            except RolloutError as exc:
                raise RolloutError(f"{exc} at step {n + 1}") from None
            tp = norm.denormalize_tp(y[npro])
            if config.clamp_tp:
                tp = np.maximum(tp, 0.0)
            f = forcings.at(n + 1, config.uses_sst)
            if (n + 1) % config.stride == 0:
                emit((n + 1) // config.stride, x, tp, f)
    finally:
        if writer is not None:
            writer.close()
    if writer is not None:
        return read_container(out, mmap=True)
    return FieldContainer(grid.nlat, grid.nlon, grid.sigma_levels, int(forcings.start_seconds),
                          int(config.dt * config.stride), variables, data)
