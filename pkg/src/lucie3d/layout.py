"""Variable taxonomy and the channel ordering used by the model.

Prognostic per-level variables are T, SH, U, V on every sigma level, followed
by the single-level logP. The diagnostic TP is output only. Forcings are input
only. Channel names are ``"<var>_<k>"`` with ``k`` the sigma-level index
(0 is the model top), or the bare variable name for single-level fields.
"""

from __future__ import annotations

import dataclasses

import numpy as np

LEVEL_VARS = ("T", "SH", "U", "V")
SURFACE_PROGNOSTIC = "logP"
DIAGNOSTIC = "TP"
FORCINGS = ("orography", "tisr", "land_sea_mask", "co2")
SST = "sst"

ROLES = ("prognostic", "diagnostic", "forcing", "static")
STATIC_FORCINGS = ("orography", "land_sea_mask")


def channel_name(var: str, level: int | None = None) -> str:
    return var if level is None else f"{var}_{level}"


@dataclasses.dataclass(frozen=True)
class ChannelLayout:
    """Single source of truth for the input/output channel stacks."""

    nlevels: int = 8
    use_sst: bool = False

    @property
    def prognostic(self) -> tuple[str, ...]:
        names = [channel_name(v, k) for v in LEVEL_VARS for k in range(self.nlevels)]
        return (*names, SURFACE_PROGNOSTIC)

    @property
    def forcing(self) -> tuple[str, ...]:
        return FORCINGS + ((SST,) if self.use_sst else ())

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.prognostic + self.forcing

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.prognostic + (DIAGNOSTIC,)

    @property
    def in_channels(self) -> int:
        return len(self.inputs)

    @property
    def out_channels(self) -> int:
        return len(self.outputs)

    @property
    def n_prognostic(self) -> int:
        return len(self.prognostic)

    def input_index(self, name: str) -> int:
        return self.inputs.index(name)

    def output_index(self, name: str) -> int:
        return self.outputs.index(name)

    def surface(self, var: str) -> str:
        return channel_name(var, self.nlevels - 1)

    def top(self, var: str) -> str:
        return channel_name(var, 0)


def variable_of(name: str) -> str:
    """Strip the level suffix from a channel name."""
    head, _, tail = name.rpartition("_")
    if head and tail.isdigit():
        return head
    return name


@dataclasses.dataclass
class FieldSet:
    """Named channels stacked on axis -3: ``values`` is (..., C, nlat, nlon)."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        if self.values.shape[-3] != len(self.names):
            raise ValueError(f"{len(self.names)} names for {self.values.shape[-3]} channels")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[..., self.names.index(name), :, :]

    def select(self, names) -> "FieldSet":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"missing channels: {missing}")
        idx = [self.names.index(n) for n in names]
        return FieldSet(tuple(names), self.values[..., idx, :, :])
