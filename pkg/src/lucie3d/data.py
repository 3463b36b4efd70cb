"""The LUC3 gridded-field container and per-channel normalization statistics.

Byte layout (all little-endian)::

    magic        4 bytes   b"LUC3"
    version      u32       1
    flags        u32       reserved (compression), must be 0
    nlat, nlon   u32, u32
    nsigma       u32
    sigma        f64 * nsigma
    t_start      i64       epoch seconds
    t_step       i64       seconds
    t_count      u64
    nvars        u32
    per variable:
        name_len u16, name (UTF-8), nlevels u16, role u8
    payload      f64, layout [time][variable][level][lat][lon]

Roles are encoded as 0 prognostic, 1 diagnostic, 2 forcing, 3 static.
"""

from __future__ import annotations

import dataclasses
import io
import os
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .layout import ROLES, channel_name

MAGIC = b"LUC3"
VERSION = 1


class ContainerError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class VarInfo:
    name: str
    levels: int
    role: str

    def channels(self) -> list[str]:
        if self.levels == 1:
            return [self.name]
        return [channel_name(self.name, k) for k in range(self.levels)]


@dataclasses.dataclass
class FieldContainer:
    """Gridded fields on a regular time axis.

    ``data`` has shape ``(time, fields, nlat, nlon)`` where the field axis
    enumerates variables and their levels in table order. It may be a
    read-only memory map.
    """

    nlat: int
    nlon: int
    sigma_levels: tuple[float, ...]
    t_start: int
    t_step: int
    variables: list[VarInfo]
    data: np.ndarray

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ContainerError(f"duplicate variable names in {names}")
        for v in self.variables:
            if v.role not in ROLES:
                raise ContainerError(f"unknown role {v.role!r} for {v.name}")
        expected = (sum(v.levels for v in self.variables), self.nlat, self.nlon)
        if self.data.ndim != 4 or self.data.shape[1:] != expected:
            raise ContainerError(f"data shape {self.data.shape} does not match table {expected}")
        self._offsets = {}
        self._channels = {}
        pos = 0
        for v in self.variables:
            self._offsets[v.name] = (pos, v.levels)
            for k, c in enumerate(v.channels()):
                self._channels[c] = pos + k
            pos += v.levels

    @property
    def t_count(self) -> int:
        return self.data.shape[0]

    @property
    def channel_names(self) -> list[str]:
        return list(self._channels)

    def channel_index(self, name: str) -> int:
        try:
            return self._channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r} in container") from None

    def channel(self, name: str) -> np.ndarray:
        """(time, nlat, nlon) view of one channel."""
        return self.data[:, self.channel_index(name)]

    def variable(self, name: str) -> np.ndarray:
        """(time, levels, nlat, nlon) view of one variable."""
        start, n = self._offsets[name]
        return self.data[:, start : start + n]

    def info(self, name: str) -> VarInfo:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def times(self) -> np.ndarray:
        return self.t_start + self.t_step * np.arange(self.t_count, dtype=np.int64)

    def subset_time(self, start: int, stop: int) -> "FieldContainer":
        return dataclasses.replace(
            self, t_start=self.t_start + start * self.t_step, data=self.data[start:stop]
        )


def _header_bytes(c_nlat, c_nlon, sigma, t_start, t_step, t_count, variables) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, 0, c_nlat))
    buf.write(struct.pack("<II", c_nlon, len(sigma)))
    buf.write(struct.pack(f"<{len(sigma)}d", *sigma))
    buf.write(struct.pack("<qqQ", t_start, t_step, t_count))
    buf.write(struct.pack("<I", len(variables)))
    for v in variables:
        name = v.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<HB", v.levels, ROLES.index(v.role)))
    return buf.getvalue()


class ContainerWriter:
    """Streams a container to disk one time step at a time."""

    def __init__(self, path, nlat, nlon, sigma_levels, t_start, t_step, t_count, variables: list[VarInfo]):
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise ContainerError(f"duplicate variable names in {names}")
        self.path = Path(path)
        self.nfields = sum(v.levels for v in variables)
        self.shape = (self.nfields, nlat, nlon)
        self.t_count = t_count
        self.written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(
            _header_bytes(nlat, nlon, tuple(sigma_levels), int(t_start), int(t_step), t_count, variables)
        )

    def append(self, step: np.ndarray):
        step = np.asarray(step, dtype="<f8")
        if step.shape != self.shape:
            raise ContainerError(f"step shape {step.shape} != {self.shape}")
        if self.written >= self.t_count:
            raise ContainerError("more steps written than declared")
        self._fh.write(step.tobytes(order="C"))
        self.written += 1

    def close(self):
        self._fh.close()
        if self.written != self.t_count:
            raise ContainerError(f"declared {self.t_count} steps, wrote {self.written}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


def write_container(path, c: FieldContainer) -> None:
    with ContainerWriter(
        path, c.nlat, c.nlon, c.sigma_levels, c.t_start, c.t_step, c.t_count, c.variables
    ) as w:
        for t in range(c.t_count):
            w.append(c.data[t])


def _read_exact(fh, n: int, what: str) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ContainerError(f"truncated header while reading {what}")
    return b


def read_header(fh) -> tuple[dict, int]:
    magic = _read_exact(fh, 4, "magic")
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    version, flags, nlat = struct.unpack("<III", _read_exact(fh, 12, "version"))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (this reader handles {VERSION})")
    if flags != 0:
        raise ContainerError(f"unsupported header flags {flags:#x}")
    nlon, nsigma = struct.unpack("<II", _read_exact(fh, 8, "grid"))
    sigma = struct.unpack(f"<{nsigma}d", _read_exact(fh, 8 * nsigma, "sigma levels"))
    t_start, t_step, t_count = struct.unpack("<qqQ", _read_exact(fh, 24, "time axis"))
    (nvars,) = struct.unpack("<I", _read_exact(fh, 4, "variable count"))
    variables = []
    for _ in range(nvars):
        (n,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, n, "name").decode("utf-8")
        levels, role = struct.unpack("<HB", _read_exact(fh, 3, "variable info"))
        if role >= len(ROLES):
            raise ContainerError(f"unknown role tag {role} for {name}")
        variables.append(VarInfo(name, levels, ROLES[role]))
    header = dict(
        nlat=nlat, nlon=nlon, sigma_levels=tuple(sigma), t_start=t_start, t_step=t_step,
        t_count=t_count, variables=variables,
    )
    return header, fh.tell()


def read_container(path, mmap: bool = False) -> FieldContainer:
    """Read a container; ``mmap=True`` maps the payload read-only instead of loading it."""
    path = Path(path)
    with open(path, "rb") as fh:
        header, offset = read_header(fh)
    t_count = header.pop("t_count")
    nfields = sum(v.levels for v in header["variables"])
    shape = (t_count, nfields, header["nlat"], header["nlon"])
    expected = 8 * int(np.prod(shape))
    actual = os.path.getsize(path) - offset
    if actual != expected:
        raise ContainerError(f"payload length {actual} bytes, expected {expected}")
    if mmap and expected > 0:
        data = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=shape)
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            data = np.fromfile(fh, dtype="<f8", count=expected // 8).reshape(shape)
    return FieldContainer(data=data, **header)


def iter_steps(path) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(time_seconds, step_array)`` without loading the whole payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        header, _ = read_header(fh)
        nfields = sum(v.levels for v in header["variables"])
        shape = (nfields, header["nlat"], header["nlon"])
        nbytes = 8 * int(np.prod(shape))
        for t in range(header["t_count"]):
            b = fh.read(nbytes)
            if len(b) != nbytes:
                raise ContainerError(f"payload truncated at step {t}")
            yield header["t_start"] + t * header["t_step"], np.frombuffer(b, dtype="<f8").reshape(shape)


@dataclasses.dataclass
class NormStats:
    """Per-channel statistics of full fields and of one-step differences.

    Statistics are unweighted over (time, lat, lon). A channel whose standard
    deviation vanishes is listed in ``degenerate`` (fields) or
    ``degenerate_tendency``; its ``scale`` falls back to 1.
    """

    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    tend_mean: np.ndarray
    tend_std: np.ndarray

    @staticmethod
    def _flag(std, ref):
        return std <= 1e-12 * np.maximum(1.0, np.abs(ref))

    @property
    def degenerate(self) -> tuple[str, ...]:
        bad = self._flag(self.std, self.mean)
        return tuple(c for c, b in zip(self.channels, bad) if b)

    @property
    def degenerate_tendency(self) -> tuple[str, ...]:
        bad = self._flag(self.tend_std, self.tend_mean)
        return tuple(c for c, b in zip(self.channels, bad) if b)

    def index(self, name: str) -> int:
        return self.channels.index(name)

    def _pick(self, arr, names, fallback):
        idx = [self.index(n) for n in names]
        a = arr[idx]
        if fallback is None:
            return a
        return np.where(fallback[idx], 1.0, a)

    def field_scale(self, names) -> tuple[np.ndarray, np.ndarray]:
        """(mean, std) for z-scoring the named channels."""
        bad = self._flag(self.std, self.mean)
        return self._pick(self.mean, names, None), self._pick(self.std, names, bad)

    def tendency_scale(self, names) -> np.ndarray:
        bad = self._flag(self.tend_std, self.tend_mean)
        return self._pick(self.tend_std, names, bad)

    def to_text(self) -> str:
        lines = ["# channel mean std tend_mean tend_std"]
        for i, c in enumerate(self.channels):
            vals = (self.mean[i], self.std[i], self.tend_mean[i], self.tend_std[i])
            lines.append(" ".join([c, *(repr(float(v)) for v in vals)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NormStats":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        cols = list(zip(*rows))
        return cls(tuple(cols[0]), *(np.array([float(x) for x in col]) for col in cols[1:]))

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_text(Path(path).read_text())


def compute_norm_stats(c: FieldContainer, chunk: int = 512) -> NormStats:
    """Two-pass means and standard deviations, streamed over time chunks."""
    T = c.t_count
    if T < 2:
        raise ContainerError("need at least two time steps for tendency statistics")
    nf = c.data.shape[1]
    npts = c.nlat * c.nlon

    def chunks(diff: bool) -> Iterable[np.ndarray]:
        stop = T - 1 if diff else T
        for s in range(0, stop, chunk):
            e = min(s + chunk, stop)
            if diff:
                yield np.diff(np.asarray(c.data[s : e + 1]), axis=0)
            else:
                yield np.asarray(c.data[s:e])

    def two_pass(diff: bool, n: int):
        total = np.zeros(nf)
        for block in chunks(diff):
            total += block.sum(axis=(0, 2, 3))
        mean = total / n
        ss = np.zeros(nf)
        for block in chunks(diff):
            ss += ((block - mean[None, :, None, None]) ** 2).sum(axis=(0, 2, 3))
        return mean, np.sqrt(ss / n)

    mean, std = two_pass(False, T * npts)
    tmean, tstd = two_pass(True, (T - 1) * npts)
    return NormStats(tuple(c.channel_names), mean, std, tmean, tstd)
