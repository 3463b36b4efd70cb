"""Two-phase training: adaptive-weighted pre-training, then regularized fine-tuning."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable

import numpy as np

from . import autodiff as ad
from . import sfno
from .data import FieldContainer, NormStats
from .grid import GridSpec
from .layout import DIAGNOSTIC, ChannelLayout
from .losses import (
    HistoryRecord,
    LossWeights,
    RegularizerConfig,
    channel_losses,
    total_loss_tape,
    update_adaptive_weights,
)


class TrainingError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 160
    finetune_epochs: int = 30
    batch_size: int = 32
    lr_max: float = 5e-4
    lr_min: float = 1e-8
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    adaptive_weights: bool = True
    reg_weight: float = 5e-2
    reg_band: float = 1.0 / 3.0
    reg_eps: float = 1e-12
    sample_stride: int = 1  # train on every k-th time index
    samples_per_epoch: int = 0  # 0 means the whole training split

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 <= self.finetune_epochs <= self.total_epochs:
            raise ValueError("finetune_epochs must lie in [0, total_epochs]")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.batch_size < 1 or self.sample_stride < 1:
            raise ValueError("batch_size and sample_stride must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    @property
    def pretrain_epochs(self) -> int:
        return self.total_epochs - self.finetune_epochs

    def regularizer(self, epoch: int) -> RegularizerConfig:
        return RegularizerConfig(self.reg_weight, self.reg_band, epoch >= self.pretrain_epochs, self.reg_eps)


def lr_schedule(epoch: float, config: TrainConfig) -> float:
    """Cosine annealing from lr_max at epoch 0 to lr_min at the last epoch."""
    n = config.total_epochs
    if not 0 <= epoch <= n - 1:
        raise ValueError(f"epoch {epoch} outside [0, {n - 1}]")
    if n == 1:
        return config.lr_max
    c = math.cos(math.pi * epoch / (n - 1))
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + c)


@dataclasses.dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState, lr: float,
              weight_decay: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Decoupled weight decay followed by a bias-corrected Adam update.

    Returns ``(params, state, ok)``. A non-finite gradient leaves both inputs
    untouched and returns ``ok=False``.
    """
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ValueError(f"{k}: gradient shape {grads[k].shape} != {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return params, state, False
    t = state.step + 1
    bc1, bc2 = 1.0 - beta1**t, 1.0 - beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        decayed = p * (1.0 - lr * weight_decay)
        new_p[k] = decayed - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, OptimizerState(new_m, new_v, t), True


class TrainingData:
    """Normalized (input, target) pairs drawn from a container.

    Sample ``t`` pairs the state and forcings at time index ``t`` with the
    normalized one-step tendency to ``t+1`` and the normalized TP at ``t+1``.
    The last ``val_fraction`` of the time axis is held out chronologically.
    """

    def __init__(self, container: FieldContainer, stats: NormStats, layout: ChannelLayout,
                 val_fraction: float = 0.1, stride: int = 1, chunk: int = 256):
        self.layout = layout
        self.norm = sfno.Normalizer(layout, stats)
        n = container.t_count - 1
        if n < 1:
            raise TrainingError("dataset needs at least two time steps")
        in_idx = [container.channel_index(c) for c in layout.inputs]
        pro_idx = [container.channel_index(c) for c in layout.prognostic]
        tp_idx = container.channel_index(DIAGNOSTIC)
        times = np.arange(0, n, stride)
        shape = (len(times), layout.in_channels, container.nlat, container.nlon)
        self.inputs = np.empty(shape)
        self.targets = np.empty((len(times), layout.out_channels, container.nlat, container.nlon))
        npro = layout.n_prognostic
        for s in range(0, len(times), chunk):
            t = times[s : s + chunk]
            x0 = np.asarray(container.data[t])
            x1 = np.asarray(container.data[t + 1])
            self.inputs[s : s + len(t)] = self.norm.normalize_inputs(x0[:, in_idx])
            self.targets[s : s + len(t), :npro] = self.norm.tendency_target(x0[:, pro_idx], x1[:, pro_idx])
            self.targets[s : s + len(t), npro] = self.norm.normalize_tp(x1[:, tp_idx])
        self.times = times
        n_val = int(round(val_fraction * len(times)))
        self.train_idx = np.arange(len(times) - n_val)
        self.val_idx = np.arange(len(times) - n_val, len(times))
        if len(self.train_idx) == 0:
            raise TrainingError("empty training split")
        self.excluded = tuple(c for c in stats.degenerate_tendency if c in layout.prognostic)

    @classmethod
    def from_arrays(cls, inputs: np.ndarray, targets: np.ndarray, layout: ChannelLayout,
                    val_fraction: float = 0.0) -> "TrainingData":
        self = cls.__new__(cls)
        self.layout, self.norm = layout, None
        self.inputs, self.targets = inputs, targets
        self.times = np.arange(len(inputs))
        n_val = int(round(val_fraction * len(inputs)))
        self.train_idx = np.arange(len(inputs) - n_val)
        self.val_idx = np.arange(len(inputs) - n_val, len(inputs))
        self.excluded = ()
        if len(self.train_idx) == 0:
            raise TrainingError("empty training split")
        return self


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_total: float
    val_total: float
    regularizer: float
    channels: list[HistoryRecord]
    flags: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        head = (f"epoch={self.epoch} lr={self.lr!r} train_total={self.train_total!r} "
                f"val_total={self.val_total!r} regularizer={self.regularizer!r}")
        return [head, *(r.to_line() for r in self.channels)]


@dataclasses.dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochRecord]
    weights: LossWeights
    flags: list[str]

    def history_text(self) -> str:
        return "\n".join(line for rec in self.history for line in rec.lines()) + "\n"


def loss_and_grads(params, x, y, names, weights_vec, reg, model_cfg, grid):
    tape = ad.Tape()
    p = sfno.on_tape(tape, params)
    pred = sfno.apply(p, tape.constant(x), model_cfg, grid)
    total, r = total_loss_tape(pred, y, names, weights_vec, reg, grid)
    grads = ad.backward(tape, total)
    return float(total.value), float(r.value), pred.value, {k: grads[t.id] for k, t in p.items()}


def evaluate(params, data: TrainingData, idx, names, weights: LossWeights, reg, model_cfg, grid, chunk=64):
    """Per-channel unweighted losses and the weighted total over the given samples."""
    if len(idx) == 0:
        return {}, float("nan"), 0.0
    sums = dict.fromkeys(names, 0.0)
    total = reg_total = 0.0
    wvec = weights.vector(names)
    for s in range(0, len(idx), chunk):
        b = idx[s : s + chunk]
        x, y = data.inputs[b], data.targets[b]
        tape = ad.Tape()
        pred = sfno.apply(sfno.on_tape(tape, params, requires_grad=False), tape.constant(x), model_cfg, grid)
        t, r = total_loss_tape(pred, y, names, wvec, reg, grid)
        total += float(t.value) * len(b)
        reg_total += float(r.value) * len(b)
        for k, v in channel_losses(pred.value, y, names, grid).items():
            sums[k] += v * len(b)
    n = len(idx)
    return {k: v / n for k, v in sums.items()}, total / n, reg_total / n


def train(data: TrainingData, config: TrainConfig, model_config: sfno.ModelConfig, grid: GridSpec,
          params: dict[str, np.ndarray] | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    layout = model_config.layout
    if data.layout != layout:
        raise TrainingError("dataset layout does not match the model configuration")
    names = layout.outputs
    if params is None:
        params = sfno.init_params(model_config, config.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng([config.seed, 1])
    weights = LossWeights.initial(names).with_zeroed(data.excluded)
    history: list[EpochRecord] = []
    flags: list[str] = []
    if data.excluded:
        flags.append(f"degenerate tendency channels excluded from loss: {', '.join(data.excluded)}")
    prev_val: dict[str, float] | None = None

    for epoch in range(config.total_epochs):
        epoch_flags = []
        if config.adaptive_weights and weights.is_update_epoch(epoch):
            if prev_val:
                val = {k: v for k, v in prev_val.items() if k not in data.excluded}
                weights = update_adaptive_weights(val, weights, epoch)
                if weights.flags:
                    epoch_flags.append(f"clamped validation loss: {', '.join(weights.flags)}")
            else:
                epoch_flags.append("adaptive update skipped: no validation samples")
        reg = config.regularizer(epoch)
        lr = lr_schedule(epoch, config)
        wvec = weights.vector(names)

        order = rng.permutation(data.train_idx)
        if config.samples_per_epoch:
            order = order[: config.samples_per_epoch]
        sums = dict.fromkeys(names, 0.0)
        tot = reg_sum = 0.0
        for bi, s in enumerate(range(0, len(order), config.batch_size)):
            b = np.sort(order[s : s + config.batch_size])
            y = data.targets[b]
            try:
                loss, r, pred, grads = loss_and_grads(params, data.inputs[b], y, names, wvec, reg, model_config, grid)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite value in epoch {epoch}, batch {bi}: {exc}") from exc
            if not math.isfinite(loss):
                raise TrainingError(f"NaN loss in epoch {epoch}, batch {bi}")
            params, state, ok = adam_step(params, grads, state, lr, config.weight_decay,
                                          config.beta1, config.beta2, config.adam_eps)
            if not ok:
                epoch_flags.append(f"non-finite gradient skipped in batch {bi}")
            tot += loss * len(b)
            reg_sum += r * len(b)
            for k, v in channel_losses(pred, y, names, grid).items():
                sums[k] += v * len(b)
        n = len(order)
        train_ch = {k: v / n for k, v in sums.items()}
        val_ch, val_total, _ = evaluate(params, data, data.val_idx, names, weights, reg, model_config, grid)
        prev_val = val_ch or None
        recs = [HistoryRecord(epoch, k, weights.weights[k], train_ch[k], val_ch.get(k, float("nan"))) for k in names]
        rec = EpochRecord(epoch, lr, tot / n, val_total, reg_sum / n, recs, tuple(epoch_flags))
        history.append(rec)
        flags.extend(f"epoch {epoch}: {f}" for f in epoch_flags)
        if log is not None:
            log(rec.lines()[0])
    return TrainResult(params, history, weights, flags)
