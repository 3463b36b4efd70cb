"""Training objectives and the adaptive per-channel loss weighting."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .grid import GridSpec, quadrature_mean
from .layout import DIAGNOSTIC, SURFACE_PROGNOSTIC, FieldSet

DEFAULT_MANUAL = {SURFACE_PROGNOSTIC: 0.5, DIAGNOSTIC: 0.5}
VAL_FLOOR = 1e-8


def _check(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")


def weighted_l2(pred: np.ndarray, target: np.ndarray, grid: GridSpec) -> float:
    """Area-weighted mean squared error, averaged over any leading axes."""
    _check(pred, target)
    if pred.shape[-2:] != grid.shape:
        raise ValueError(f"field shape {pred.shape[-2:]} does not match grid {grid.shape}")
    return float(np.mean(quadrature_mean((pred - target) ** 2, grid)))


def plain_l2(pred: np.ndarray, target: np.ndarray) -> float:
    _check(pred, target)
    return float(np.mean((pred - target) ** 2))


@dataclasses.dataclass(frozen=True)
class LossWeights:
    """Per-channel loss weights plus the schedule that refreshes them.

    ``weights`` already include the manual factors. ``flags`` collects
    channels whose validation loss had to be clamped at an update.
    """

    weights: Mapping[str, float]
    manual_factors: Mapping[str, float] = dataclasses.field(default_factory=lambda: dict(DEFAULT_MANUAL))
    update_epoch_interval: int = 10
    activation_epoch: int = 20
    scale_constant: float = 0.005
    flags: tuple[str, ...] = ()

    @classmethod
    def initial(cls, names: Sequence[str], **kw) -> "LossWeights":
        manual = kw.get("manual_factors", DEFAULT_MANUAL)
        return cls({n: float(manual.get(n, 1.0)) for n in names}, **kw)

    def is_update_epoch(self, epoch: int) -> bool:
        e = epoch - self.activation_epoch
        return e >= 0 and e % self.update_epoch_interval == 0

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.weights[n] for n in names], dtype=np.float64)

    def with_zeroed(self, names) -> "LossWeights":
        w = dict(self.weights)
        for n in names:
            w[n] = 0.0
        return dataclasses.replace(self, weights=w)


def update_adaptive_weights(val_losses: Mapping[str, float], weights: LossWeights, epoch: int) -> LossWeights:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if not weights.is_update_epoch(epoch):
        return weights
    new, flagged = dict(weights.weights), []
    for name, v in val_losses.items():
        if name not in new:
            continue
        v = float(v)
        if not math.isfinite(v) or v <= 0.0:
            flagged.append(name)
            v = VAL_FLOOR
        new[name] = weights.scale_constant / max(v, VAL_FLOOR) * weights.manual_factors.get(name, 1.0)
    return dataclasses.replace(weights, weights=new, flags=tuple(flagged))


@dataclasses.dataclass(frozen=True)
class RegularizerConfig:
    weight: float = 5e-2
    wavenumber_band: float = 1.0 / 3.0
    active: bool = False
    eps: float = 1e-12

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("regularizer weight must be >= 0")
        if not 0.0 < self.wavenumber_band <= 1.0:
            raise ValueError("wavenumber_band must lie in (0, 1]")


def penalized_wavenumbers(grid: GridSpec, band: float) -> np.ndarray:
    """Top ``band`` fraction of the resolved zonal wavenumbers 0..L."""
    n = grid.truncation + 1
    size = max(1, math.ceil(band * n - 1e-9))
    return np.arange(n - size, n)


def zonal_amplitude(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Latitude-weighted mean of |DFT| along longitude: (..., nlat, nlon) -> (..., nlon//2+1)."""
    lat_w = grid.gauss_weights / grid.gauss_weights.sum()
    return np.tensordot(np.abs(np.fft.rfft(values, axis=-1)), lat_w, axes=([-2], [0]))


def spectral_regularizer_tape(pred: ad.Tensor, target: np.ndarray, channels: Sequence[int],
                              cfg: RegularizerConfig, grid: GridSpec) -> ad.Tensor:
    """lambda * mean over (batch, channel, band) of the squared log-amplitude mismatch.

    ``pred`` is (B, C, nlat, nlon) on a tape; only ``channels`` are penalized.
    """
    tape = pred.tape
    if not cfg.active or cfg.weight == 0.0 or len(channels) == 0:
        return tape.constant(np.zeros(()))
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    lat_w = grid.gauss_weights / grid.gauss_weights.sum()
    amp = ad.reduce_axis(ad.magnitude(ad.zonal_dft(pred)), lat_w, axis=2)  # (B, C, K)
    ref = np.log(zonal_amplitude(target, grid) + cfg.eps)
    diff = ad.sub(ad.log(amp, cfg.eps), tape.constant(ref))
    band = penalized_wavenumbers(grid, cfg.wavenumber_band)
    sel = np.zeros(amp.shape[1:])
    sel[np.ix_(list(channels), band)] = 1.0
    coef = cfg.weight * np.broadcast_to(sel, amp.shape) / (amp.shape[0] * len(channels) * band.size)
    return ad.contract(ad.square(diff), coef)


def _as_batch(values: np.ndarray) -> np.ndarray:
    return values[None] if values.ndim == 3 else values


def spectral_regularizer(pred: FieldSet, target: FieldSet, config: RegularizerConfig, grid: GridSpec) -> float:
    """Penalty over every non-diagnostic channel of matching field sets."""
    if pred.names != target.names:
        raise ValueError("pred and target layouts differ")
    channels = [i for i, n in enumerate(pred.names) if n != DIAGNOSTIC]
    tape = ad.Tape()
    p = tape.constant(_as_batch(pred.values))
    return float(spectral_regularizer_tape(p, _as_batch(target.values), channels, config, grid).value)


def loss_coefficients(names: Sequence[str], weights: np.ndarray, grid: GridSpec, batch: int) -> np.ndarray:
    """Constant c with total data loss = sum(c * (pred - target)^2) over (B, C, nlat, nlon).

    Prognostic channels use quadrature weights; the diagnostic uses a plain mean.
    """
    nlat, nlon = grid.shape
    area = np.broadcast_to((grid.gauss_weights / 2.0)[:, None], (nlat, nlon)) / nlon
    plain = np.full((nlat, nlon), 1.0 / (nlat * nlon))
    per = np.stack([plain if n == DIAGNOSTIC else area for n in names])
    return (np.asarray(weights)[:, None, None] * per)[None] / batch


def total_loss_tape(pred: ad.Tensor, target: np.ndarray, names: Sequence[str], weights: np.ndarray,
                    reg: RegularizerConfig, grid: GridSpec) -> tuple[ad.Tensor, ad.Tensor]:
    """Returns (total, regularizer) tensors; total already includes the regularizer."""
    tape = pred.tape
    if pred.shape != target.shape or pred.shape[1] != len(names):
        raise ValueError(f"pred {pred.shape}, target {target.shape}, {len(names)} names")
    coef = loss_coefficients(names, weights, grid, pred.shape[0])
    data = ad.contract(ad.square(ad.sub(pred, tape.constant(target))), coef)
    channels = [i for i, n in enumerate(names) if n != DIAGNOSTIC]
    r = spectral_regularizer_tape(pred, target, channels, reg, grid)
    return ad.add(data, r), r


def channel_losses(pred: np.ndarray, target: np.ndarray, names: Sequence[str], grid: GridSpec) -> dict[str, float]:
    """Unweighted per-channel losses (weighted_l2 or plain_l2 for the diagnostic)."""
    pred, target = _as_batch(pred), _as_batch(target)
    _check(pred, target)
    sq = (pred - target) ** 2
    area = quadrature_mean(sq, grid).mean(axis=0)
    plain = sq.mean(axis=(0, 2, 3))
    return {n: float(plain[i] if n == DIAGNOSTIC else area[i]) for i, n in enumerate(names)}


def total_loss(pred: FieldSet, target: FieldSet, weights: LossWeights, reg_config: RegularizerConfig,
               grid: GridSpec) -> float:
    if pred.names != target.names:
        raise ValueError("pred and target layouts differ")
    tape = ad.Tape()
    p = tape.constant(_as_batch(pred.values))
    total, _ = total_loss_tape(p, _as_batch(target.values), pred.names, weights.vector(pred.names), reg_config, grid)
    return float(total.value)


@dataclasses.dataclass(frozen=True)
class HistoryRecord:
    epoch: int
    variable: str
    weight: float
    train_loss: float
    val_loss: float

    def to_line(self) -> str:
        return (f"epoch={self.epoch} var={self.variable} weight={self.weight!r} "
                f"train={self.train_loss!r} val={self.val_loss!r}")

    @classmethod
    def from_line(cls, line: str) -> "HistoryRecord":
        kv = dict(tok.split("=", 1) for tok in line.split())
        return cls(int(kv["epoch"]), kv["var"], float(kv["weight"]), float(kv["train"]), float(kv["val"]))
