"""Spherical Fourier neural operator emulator: encoder, SFNO blocks, decoder."""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import NormStats
from .forcing import STEP_SECONDS
from .grid import GridSpec, build_grid
from .layout import ChannelLayout, FieldSet

CKPT_MAGIC = b"LUCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 12
    latent_dim: int = 256
    encoder_layers: int = 1
    decoder_layers: int = 1
    truncation: int = 30
    mlp_hidden: int | None = None  # defaults to latent_dim
    nlevels: int = 8
    use_sst: bool = False

    def __post_init__(self):
        for f in ("num_blocks", "latent_dim", "encoder_layers", "decoder_layers", "truncation"):
            if getattr(self, f) < (0 if f == "num_blocks" else 1):
                raise ValueError(f"{f}={getattr(self, f)} out of range")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Desk-scale profile: 2 blocks, latent 32, T15."""
        return cls(**{"num_blocks": 2, "latent_dim": 32, "truncation": 15, **overrides})

    @property
    def layout(self) -> ChannelLayout:
        return ChannelLayout(self.nlevels, self.use_sst)

    @property
    def in_channels(self) -> int:
        return self.layout.in_channels

    @property
    def out_channels(self) -> int:
        return self.layout.out_channels

    @property
    def hidden(self) -> int:
        return self.latent_dim if self.mlp_hidden is None else self.mlp_hidden


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter table; the order is also the checkpoint payload order."""
    C, H, L = cfg.latent_dim, cfg.hidden, cfg.truncation
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(cfg.encoder_layers):
        cin = cfg.in_channels if i == 0 else C
        shapes[f"encoder.{i}.w"] = (C, cin)
        shapes[f"encoder.{i}.b"] = (C,)
    for i in range(cfg.num_blocks):
        shapes[f"block.{i}.spectral"] = (L + 1, C, C, 2)
        shapes[f"block.{i}.mlp1.w"] = (H, C)
        shapes[f"block.{i}.mlp1.b"] = (H,)
        shapes[f"block.{i}.mlp2.w"] = (C, H)
        shapes[f"block.{i}.mlp2.b"] = (C,)
    for i in range(cfg.decoder_layers):
        cout = cfg.out_channels if i == cfg.decoder_layers - 1 else C
        shapes[f"decoder.{i}.w"] = (cout, C)
        shapes[f"decoder.{i}.b"] = (cout,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


ModelParams = dict  # name -> float64 array, ordered as param_shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        elif name.endswith(".spectral"):
            l = np.arange(shape[0], dtype=np.float64)[:, None, None, None]
            scale = 1.0 / np.sqrt(shape[2] * (l + 1.0))
            params[name] = rng.standard_normal(shape) * scale / np.sqrt(2.0)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, shape)
    return params


def identity_spectral(cfg: ModelConfig) -> np.ndarray:
    w = np.zeros((cfg.truncation + 1, cfg.latent_dim, cfg.latent_dim, 2))
    w[:, np.arange(cfg.latent_dim), np.arange(cfg.latent_dim), 0] = 1.0
    return w


def spectral_conv(latent: ad.Tensor, weights: ad.Tensor, grid: GridSpec) -> ad.Tensor:
    """Analysis, per-degree complex channel mixing, synthesis."""
    coeffs = ad.sht_forward(latent, grid)
    mixed = ad.spectral_mix(coeffs, ad.as_complex(weights), grid)
    return ad.sht_inverse(mixed, grid)


def _mlp(x, w1, b1, w2, b2):
    return ad.affine(ad.silu(ad.affine(x, w1, b1)), w2, b2)


def sfno_block(latent: ad.Tensor, p: dict[str, ad.Tensor], i: int, grid: GridSpec) -> ad.Tensor:
    s = spectral_conv(latent, p[f"block.{i}.spectral"], grid)
    z = _mlp(s, p[f"block.{i}.mlp1.w"], p[f"block.{i}.mlp1.b"], p[f"block.{i}.mlp2.w"], p[f"block.{i}.mlp2.b"])
    return latent + z


def apply(p: dict[str, ad.Tensor], x: ad.Tensor, cfg: ModelConfig, grid: GridSpec) -> ad.Tensor:
    """(B, in_channels, nlat, nlon) -> (B, out_channels, nlat, nlon) on the tape of ``x``."""
    if grid.truncation != cfg.truncation:
        raise ValueError(f"grid is T{grid.truncation}, model is T{cfg.truncation}")
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
    h = x
    for i in range(cfg.encoder_layers):
        h = ad.affine(h, p[f"encoder.{i}.w"], p[f"encoder.{i}.b"])
        if i < cfg.encoder_layers - 1:
            h = ad.silu(h)
    for i in range(cfg.num_blocks):
        h = sfno_block(h, p, i, grid)
    for i in range(cfg.decoder_layers):
        h = ad.affine(h, p[f"decoder.{i}.w"], p[f"decoder.{i}.b"])
        if i < cfg.decoder_layers - 1:
            h = ad.silu(h)
    return h


def on_tape(tape: ad.Tape, params: ModelParams, requires_grad: bool = True) -> dict[str, ad.Tensor]:
    return {k: tape.leaf(v, requires_grad) for k, v in params.items()}


def forward_array(params: ModelParams, x: np.ndarray, cfg: ModelConfig, grid: GridSpec) -> np.ndarray:
    """Inference on plain arrays; accepts (C, nlat, nlon) or (B, C, nlat, nlon)."""
    single = x.ndim == 3
    tape = ad.Tape()
    xt = tape.constant(x[None] if single else x)
    out = apply(on_tape(tape, params, requires_grad=False), xt, cfg, grid).value
    return out[0] if single else out


def model_forward(inputs: FieldSet, params: ModelParams, cfg: ModelConfig, grid: GridSpec) -> tuple[FieldSet, np.ndarray]:
    """Normalized inputs -> (normalized tendencies of every prognostic, normalized TP)."""
    layout = cfg.layout
    missing = [n for n in layout.inputs if n not in inputs.names]
    if missing:
        raise KeyError(f"missing input channels: {missing}")
    x = inputs.select(layout.inputs).values
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite model input")
    out = forward_array(params, x, cfg, grid)
    npro = layout.n_prognostic
    return FieldSet(layout.prognostic, out[..., :npro, :, :]), out[..., npro, :, :]


@dataclasses.dataclass
class Normalizer:
    """Maps physical fields to the model's z-score space and back.

    Inputs and TP are z-scored with field statistics. Tendency targets are
    one-step differences divided by the difference standard deviation (no
    mean shift); ``tendency_per_second`` undoes that and divides by dt.
    """

    layout: ChannelLayout
    stats: NormStats
    dt: float = STEP_SECONDS

    def __post_init__(self):
        self.in_mean, self.in_std = self.stats.field_scale(self.layout.inputs)
        self.tend_scale = self.stats.tendency_scale(self.layout.prognostic)
        tp_mean, tp_std = self.stats.field_scale(["TP"])
        self.tp_mean, self.tp_std = float(tp_mean[0]), float(tp_std[0])

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean[:, None, None]) / self.in_std[:, None, None]

    def tendency_target(self, x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
        return (x1 - x0) / self.tend_scale[:, None, None]

    def tendency_per_second(self, norm: np.ndarray) -> np.ndarray:
        return norm * self.tend_scale[:, None, None] / self.dt

    def normalize_tp(self, tp: np.ndarray) -> np.ndarray:
        return (tp - self.tp_mean) / self.tp_std

    def denormalize_tp(self, tp: np.ndarray) -> np.ndarray:
        return tp * self.tp_std + self.tp_mean


@dataclasses.dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    stats: NormStats
    grid: GridSpec
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def layout(self) -> ChannelLayout:
        return self.config.layout

    def normalizer(self) -> Normalizer:
        return Normalizer(self.layout, self.stats)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    shapes = param_shapes(ckpt.config)
    if list(ckpt.params) != list(shapes):
        raise CheckpointError("parameter names/order do not match the config")
    meta = {
        "config": dataclasses.asdict(ckpt.config),
        "layout": {"nlevels": ckpt.layout.nlevels, "use_sst": ckpt.layout.use_sst,
                   "inputs": list(ckpt.layout.inputs), "outputs": list(ckpt.layout.outputs)},
        "grid": {"truncation": ckpt.grid.truncation, "nlat": ckpt.grid.nlat, "nlon": ckpt.grid.nlon,
                 "sigma_levels": list(ckpt.grid.sigma_levels)},
        "stats": ckpt.stats.to_text(),
        "params": [[k, list(v.shape)] for k, v in ckpt.params.items()],
        "meta": ckpt.meta,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(blob)))
    buf.write(blob)
    for name, shape in shapes.items():
        arr = np.asarray(ckpt.params[name], dtype="<f8")
        if arr.shape != shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != {shape}")
        buf.write(arr.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r}")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(raw[12 : 12 + n].decode("utf-8"))
    cfg = ModelConfig(**meta["config"])
    g = meta["grid"]
    grid = build_grid(g["truncation"], g["nlat"], g["nlon"], tuple(g["sigma_levels"]))
    pos = 12 + n
    params = {}
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape))
        chunk = raw[pos : pos + 8 * size]
        if len(chunk) != 8 * size:
            raise CheckpointError(f"checkpoint truncated in {name}")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        pos += 8 * size
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes in checkpoint")
    return Checkpoint(cfg, params, NormStats.from_text(meta["stats"]), grid, meta.get("meta", {}))
