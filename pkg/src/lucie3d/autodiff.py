"""A small reverse-mode tape over the closed set of operations the emulator uses.

Values are float64 numpy arrays; spectral intermediates are complex128 and
flagged as such. For a complex node the stored gradient is
``dL/dRe + i dL/dIm`` (the real-valued convention), which keeps every loss
real and every adjoint a plain real-linear transpose.

Broadcasting between two graph nodes is not supported: binary operations
require equal shapes, and constants enter only through ``mul_const`` and
``contract``.
"""

from __future__ import annotations

import dataclasses
import weakref
from typing import Callable, Sequence

import numpy as np

from .grid import GridSpec


class TapeError(ValueError):
    pass


class Tensor:
    # The tape is held weakly: tape -> node -> tensor is the only strong path,
    # so a dropped tape frees its intermediates without waiting for the
    # cycle collector.
    __slots__ = ("value", "_tape", "id", "requires_grad")

    def __init__(self, value: np.ndarray, tape: "Tape", node_id: int, requires_grad: bool):
        self.value = value
        self._tape = weakref.ref(tape)
        self.id = node_id
        self.requires_grad = requires_grad

    @property
    def tape(self) -> "Tape":
        tape = self._tape()
        if tape is None:
            raise TapeError("the tape of this tensor has been released")
        return tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.value)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"Tensor(id={self.id}, shape={self.shape}, {kind}, requires_grad={self.requires_grad})"


@dataclasses.dataclass
class _Node:
    tensor: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None


class Tape:
    """Records operations in execution order, which is a topological order.

    Keep a reference to the tape for as long as its tensors are used.
    """

    __slots__ = ("nodes", "__weakref__")

    def __init__(self):
        self.nodes: list[_Node] = []

    def _new(self, value, parents, vjp, requires_grad) -> Tensor:
        value = np.asarray(value)
        if value.dtype.kind not in "fc":
            value = value.astype(np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced at node {len(self.nodes)}")
        t = Tensor(value, self, len(self.nodes), requires_grad)
        self.nodes.append(_Node(t, parents, vjp))
        return t

    def leaf(self, value, requires_grad: bool = True) -> Tensor:
        return self._new(np.array(value, dtype=np.float64), (), None, requires_grad)

    def constant(self, value) -> Tensor:
        return self.leaf(value, requires_grad=False)

    def record(self, value, parents: tuple[Tensor, ...], vjp) -> Tensor:
        for p in parents:
            if p._tape() is not self:
                raise TapeError(f"{p!r} belongs to a different tape")
        return self._new(value, parents, vjp, any(p.requires_grad for p in parents))


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` for every ``requires_grad`` leaf on ``tape``."""
    if loss._tape() is not tape or loss.id >= len(tape.nodes) or tape.nodes[loss.id].tensor is not loss:
        raise TapeError("loss node is not on this tape")
    if loss.value.size != 1 or loss.is_complex:
        raise TapeError(f"loss must be a real scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.id + 1]):
        g = grads.get(node.tensor.id)
        if g is None or node.vjp is None or not node.tensor.requires_grad:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        n.tensor.id: grads.get(n.tensor.id, np.zeros_like(n.tensor.value))
        for n in tape.nodes
        if n.vjp is None and n.tensor.requires_grad
    }


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise TapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return a.tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return a.tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a real constant broadcastable to ``a``."""
    c = np.asarray(c, dtype=np.float64)
    out = a.value * c
    if out.shape != a.shape:
        raise TapeError(f"mul_const: constant of shape {c.shape} would broadcast {a.shape}")
    return a.tape.record(out, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    v = a.value
    return a.tape.record(v * v, (a,), lambda g: (2.0 * g * v,))


def silu(a: Tensor) -> Tensor:
    v = a.value
    sig = 1.0 / (1.0 + np.exp(-v))
    return a.tape.record(v * sig, (a,), lambda g: (g * sig * (1.0 + v * (1.0 - sig)),))


def log(a: Tensor, eps: float = 0.0) -> Tensor:
    v = a.value + eps
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(v)
    return a.tape.record(out, (a,), lambda g: (g / v,))


def magnitude(z: Tensor) -> Tensor:
    """|z| of a complex tensor; the subgradient at 0 is taken as 0."""
    v = z.value
    r = np.abs(v)
    safe = np.where(r > 0, r, 1.0)

    def vjp(g):
        return (np.where(r > 0, g * v / safe, 0.0),)

    return z.tape.record(r, (z,), vjp)


def contract(a: Tensor, c) -> Tensor:
    """Scalar ``sum(a * c)`` with a real constant ``c`` broadcastable to ``a``."""
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), a.shape)
    return a.tape.record(np.sum(a.value * c), (a,), lambda g: (g * c,))


def reduce_axis(a: Tensor, weights: np.ndarray, axis: int) -> Tensor:
    """Weighted sum over one axis with constant weights."""
    axis = axis % a.value.ndim
    w = np.asarray(weights, dtype=np.float64)
    out = np.tensordot(a.value, w, axes=([axis], [0]))
    shape = [1] * a.value.ndim
    shape[axis] = w.size

    def vjp(g):
        return (np.expand_dims(g, axis) * w.reshape(shape),)

    return a.tape.record(out, (a,), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise (1x1) affine map over the channel axis 1 of ``x``: (B, C, ...) -> (B, O, ...)."""
    xv, wv, bv = x.value, w.value, b.value
    if wv.ndim != 2 or wv.shape[1] != xv.shape[1] or bv.shape != (wv.shape[0],):
        raise TapeError(f"affine: weight {wv.shape}, bias {bv.shape} incompatible with input {xv.shape}")
    B, C = xv.shape[:2]
    spatial = xv.shape[2:]
    xf = xv.reshape(B, C, -1)
    out = (wv @ xf + bv[:, None]).reshape(B, -1, *spatial)

    def vjp(g):
        gf = g.reshape(B, wv.shape[0], -1)
        gx = (wv.T @ gf).reshape(xv.shape)
        gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)
        gb = gf.sum(axis=(0, 2))
        return gx, gw, gb

    return x.tape.record(out, (x, w, b), vjp)


def as_complex(p: Tensor) -> Tensor:
    """View a real (..., 2) parameter as complex (...)."""
    if p.shape[-1] != 2:
        raise TapeError(f"as_complex expects trailing axis of 2, got {p.shape}")
    v = p.value
    return p.tape.record(v[..., 0] + 1j * v[..., 1], (p,), lambda g: (np.stack([g.real, g.imag], axis=-1),))


def sht_forward(x: Tensor, grid: GridSpec) -> Tensor:
    if x.shape[-2:] != grid.shape:
        raise TapeError(f"sht_forward: field shape {x.shape[-2:]} does not match {grid!r}")
    plan = grid.plan
    return x.tape.record(plan.analysis(x.value), (x,), lambda g: (plan.analysis_adjoint(g),))


def sht_inverse(z: Tensor, grid: GridSpec) -> Tensor:
    if z.shape[-1] != grid.ncoef:
        raise TapeError(f"sht_inverse: {z.shape[-1]} coefficients, {grid!r} needs {grid.ncoef}")
    plan = grid.plan
    return z.tape.record(plan.synthesis(z.value), (z,), lambda g: (plan.synthesis_adjoint(g),))


def spectral_mix(z: Tensor, w: Tensor, grid: GridSpec) -> Tensor:
    """Per-degree complex channel mixing: (B, C, K) with (L+1, O, C) -> (B, O, K)."""
    zv, wv = z.value, w.value
    L = grid.truncation
    if wv.shape[0] != L + 1 or wv.shape[2] != zv.shape[1] or zv.shape[-1] != grid.ncoef:
        raise TapeError(f"spectral_mix: weights {wv.shape} incompatible with coefficients {zv.shape}")
    degrees = grid.plan.degrees
    wk = wv[degrees]  # (K, O, C)
    zk = np.transpose(zv, (2, 1, 0))  # (K, C, B)
    out = np.transpose(wk @ zk, (2, 1, 0))

    def vjp(g):
        gk = np.transpose(g, (2, 1, 0))  # (K, O, B)
        gz = np.transpose(np.conj(np.transpose(wk, (0, 2, 1))) @ gk, (2, 1, 0))
        gwk = gk @ np.conj(np.transpose(zk, (0, 2, 1)))  # (K, O, C)
        gw = np.zeros_like(wv)
        np.add.at(gw, degrees, gwk)
        return gz, gw

    return z.tape.record(out, (z, w), vjp)


def zonal_dft(x: Tensor) -> Tensor:
    """Unnormalized DFT along the last (longitude) axis, wavenumbers 0..n//2."""
    n = x.shape[-1]
    k = np.arange(n // 2 + 1)
    d = np.exp(-2j * np.pi * np.outer(np.arange(n), k) / n)
    return x.tape.record(x.value @ d, (x,), lambda g: (np.real(g @ np.conj(d).T),))
