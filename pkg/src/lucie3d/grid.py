"""Gaussian grids, Gauss-Legendre quadrature and spherical harmonic transforms.

Harmonics are orthonormal on the unit sphere, ``Y_lm = Pbar_lm(sin lat) e^{i m lon}``
with the Condon-Shortley phase, so ``Y_00 = 1/sqrt(4 pi)``. Only ``m >= 0`` is
stored; a real field is rebuilt as ``sum_l [a_l0 Y_l0 + 2 Re sum_{m>0} a_lm Y_lm]``.

Coefficients are packed in degree-major order, ``(l, m)`` for ``l = 0..L`` and
``m = 0..l``, giving ``(L+1)(L+2)/2`` complex values per field.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

DEFAULT_SIGMA_LEVELS = (0.025, 0.095, 0.20, 0.34, 0.51, 0.685, 0.835, 0.95)


class GridError(ValueError):
    pass


def legendre_p(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_n(x), P_n'(x))`` from the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre(n: int, tol: float = 1e-15, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (increasing) and weights of the n-point Gauss-Legendre rule.

    Roots of P_n are found by Newton iteration from the Chebyshev-like
    initial guesses; a root that fails to converge raises ``GridError``.
    """
    if n < 1:
        raise GridError(f"need at least one node, got {n}")
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(max_iter):
        p, dp = legendre_p(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < tol:
            break
    else:
        raise GridError(f"Newton iteration for P_{n} roots did not converge")
    _, dp = legendre_p(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce exact mirror symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


def normalized_legendre(truncation: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre functions on the packed (l, m) index.

    Returns an array of shape ``(ncoef, len(x))`` normalized so that
    ``2 pi * int_{-1}^{1} Pbar_lm(x)^2 dx = 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    L = truncation
    out = np.zeros((ncoef(L), x.size))
    pmm = np.full_like(x, 1.0 / math.sqrt(4.0 * math.pi))
    for m in range(L + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2 * m)) * s * pmm
        out[packed_index(m, m)] = pmm
        if m == L:
            break
        p_prev = pmm
        p_cur = math.sqrt(2 * m + 3) * x * pmm
        out[packed_index(m + 1, m)] = p_cur
        for l in range(m + 2, L + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            p_prev, p_cur = p_cur, a * (x * p_cur - b * p_prev)
            out[packed_index(l, m)] = p_cur
    return out


def ncoef(truncation: int) -> int:
    return (truncation + 1) * (truncation + 2) // 2


def packed_index(l: int, m: int) -> int:
    return l * (l + 1) // 2 + m


def degree_order(truncation: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order arrays for the packed index."""
    ls, ms = [], []
    for l in range(truncation + 1):
        for m in range(l + 1):
            ls.append(l)
            ms.append(m)
    return np.array(ls), np.array(ms)


@dataclasses.dataclass(frozen=True, eq=False)
class GridSpec:
    """Gaussian latitude/longitude grid with its quadrature and sigma levels.

    Latitude index runs south to north (``gauss_nodes`` increasing).
    """

    nlat: int
    nlon: int
    truncation: int
    gauss_nodes: np.ndarray
    gauss_weights: np.ndarray
    sigma_levels: tuple[float, ...] = DEFAULT_SIGMA_LEVELS

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def ncoef(self) -> int:
        return ncoef(self.truncation)

    @property
    def lats(self) -> np.ndarray:
        """Latitudes in degrees."""
        return np.degrees(np.arcsin(self.gauss_nodes))

    @property
    def lons(self) -> np.ndarray:
        """Longitudes in degrees, starting at 0."""
        return 360.0 * np.arange(self.nlon) / self.nlon

    @property
    def lon_radians(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nlon) / self.nlon

    @functools.cached_property
    def plan(self) -> "TransformPlan":
        return TransformPlan(self)

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            self.nlat == other.nlat
            and self.nlon == other.nlon
            and self.truncation == other.truncation
            and tuple(self.sigma_levels) == tuple(other.sigma_levels)
        )

    def __hash__(self):
        return hash((self.nlat, self.nlon, self.truncation, tuple(self.sigma_levels)))

    def __repr__(self):
        return f"GridSpec(T{self.truncation}, nlat={self.nlat}, nlon={self.nlon})"


def default_dims(truncation: int) -> tuple[int, int]:
    """Grid size used when only a truncation is given (T15 -> 24x48, T30 -> 48x96)."""
    nlat = math.ceil(3 * (truncation + 1) / 2)
    nlat += nlat % 2
    return nlat, 2 * nlat


def build_grid(
    truncation: int,
    nlat: int | None = None,
    nlon: int | None = None,
    sigma_levels=DEFAULT_SIGMA_LEVELS,
) -> GridSpec:
    if truncation < 1:
        raise GridError(f"truncation must be >= 1, got {truncation}")
    dlat, dlon = default_dims(truncation)
    nlat = dlat if nlat is None else nlat
    nlon = dlon if nlon is None else nlon
    if nlat < truncation + 1:
        raise GridError(f"nlat={nlat} aliases at T{truncation}; need >= {truncation + 1}")
    if nlon < 2 * truncation + 1:
        raise GridError(f"nlon={nlon} aliases at T{truncation}; need >= {2 * truncation + 1}")
    sigma = tuple(float(s) for s in sigma_levels)
    if any(b <= a for a, b in zip(sigma, sigma[1:])) or not all(0 < s <= 1 for s in sigma):
        raise GridError(f"sigma levels must be strictly increasing in (0, 1]: {sigma}")
    nodes, weights = gauss_legendre(nlat)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GridSpec(nlat, nlon, truncation, nodes, weights, sigma)


class TransformPlan:
    """Precomputed matrices for the two-stage (DFT then Legendre) transform."""

    def __init__(self, grid: GridSpec):
        L = grid.truncation
        self.truncation = L
        self.nlat, self.nlon = grid.nlat, grid.nlon
        self.degrees, self.orders = degree_order(L)
        lam = grid.lon_radians
        m = np.arange(L + 1)
        phase = np.exp(-1j * np.outer(lam, m))  # (nlon, M)
        # analysis along longitude includes the 2 pi / nlon trapezoid weight
        self.dft = phase * (2.0 * np.pi / grid.nlon)
        cm = np.where(m == 0, 1.0, 2.0)
        self.idft = (np.conj(phase) * cm).T  # (M, nlon)
        self.pbar = normalized_legendre(L, grid.gauss_nodes)  # (ncoef, nlat)
        onehot = np.zeros((self.pbar.shape[0], L + 1))
        onehot[np.arange(onehot.shape[0]), self.orders] = 1.0
        # (nlat*M, ncoef): Legendre analysis with quadrature weights
        wp = self.pbar * grid.gauss_weights
        self.leg_fwd = np.einsum("ki,km->imk", wp, onehot).reshape(-1, onehot.shape[0])
        # (ncoef, nlat*M): Legendre synthesis
        self.leg_inv = np.einsum("ki,km->kim", self.pbar, onehot).reshape(onehot.shape[0], -1)
        # Layouts below keep every product a contiguous BLAS call: real
        # inputs hit [Re | Im] stacked matrices, complex inputs that must
        # return real fields are viewed as interleaved float pairs.
        M = L + 1
        self._dft_ri = np.ascontiguousarray(np.concatenate([self.dft.real, self.dft.imag], axis=1))
        self._idft_pairs = _interleave(self.idft.real, -self.idft.imag)
        self._dftT_pairs = _interleave(self.dft.real.T, self.dft.imag.T)
        self._idftH_ri = np.ascontiguousarray(np.concatenate([self.idft.real.T, -self.idft.imag.T], axis=1))
        self._leg_fwd_c = self.leg_fwd.astype(np.complex128)
        self._leg_fwd_cT = np.ascontiguousarray(self._leg_fwd_c.T)
        self._leg_inv_c = self.leg_inv.astype(np.complex128)
        self._leg_inv_cT = np.ascontiguousarray(self._leg_inv_c.T)
        self._m = M
        for a in (self.dft, self.idft, self.pbar, self.leg_fwd, self.leg_inv):
            a.setflags(write=False)

    def _split(self, r: np.ndarray) -> np.ndarray:
        return r[..., : self._m] + 1j * r[..., self._m :]

    def analysis(self, f: np.ndarray) -> np.ndarray:
        fm = self._split(np.ascontiguousarray(f, dtype=np.float64) @ self._dft_ri)
        return fm.reshape(*f.shape[:-2], -1) @ self._leg_fwd_c

    def synthesis(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.complex128)
        g = np.ascontiguousarray(a @ self._leg_inv_c).reshape(*a.shape[:-1], self.nlat, self._m)
        return g.view(np.float64) @ self._idft_pairs

    def analysis_adjoint(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.complex128)
        h = np.ascontiguousarray(g @ self._leg_fwd_cT).reshape(*g.shape[:-1], self.nlat, self._m)
        return h.view(np.float64) @ self._dftT_pairs

    def synthesis_adjoint(self, g: np.ndarray) -> np.ndarray:
        h = self._split(np.ascontiguousarray(g, dtype=np.float64) @ self._idftH_ri)
        return h.reshape(*g.shape[:-2], -1) @ self._leg_inv_cT


def _interleave(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Rows 2m, 2m+1 = re[m], im[m]; multiplies a complex array viewed as float pairs."""
    out = np.empty((2 * re.shape[0], re.shape[1]))
    out[0::2], out[1::2] = re, im
    return out


@dataclasses.dataclass
class SpectralCoeffs:
    """Packed complex coefficients of one or more fields (last axis is (l, m))."""

    coeffs: np.ndarray
    truncation: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape[-1] != ncoef(self.truncation):
            raise GridError(
                f"expected {ncoef(self.truncation)} coefficients for T{self.truncation}, "
                f"got {self.coeffs.shape[-1]}"
            )

    def __getitem__(self, lm: tuple[int, int]):
        l, m = lm
        if not 0 <= m <= l <= self.truncation:
            raise IndexError(f"(l={l}, m={m}) outside T{self.truncation}")
        return self.coeffs[..., packed_index(l, m)]

    @classmethod
    def zeros(cls, truncation: int, batch: tuple[int, ...] = ()) -> "SpectralCoeffs":
        return cls(np.zeros((*batch, ncoef(truncation)), dtype=np.complex128), truncation)

    def energy(self) -> np.ndarray:
        """Sum of |a_lm|^2 over all orders -L..L (m > 0 counted twice)."""
        _, ms = degree_order(self.truncation)
        mult = np.where(ms == 0, 1.0, 2.0)
        return np.sum(mult * np.abs(self.coeffs) ** 2, axis=-1)


def _check_field(field: np.ndarray, grid: GridSpec) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-2:] != grid.shape:
        raise GridError(f"field shape {field.shape[-2:]} does not match grid {grid.shape}")
    if not np.all(np.isfinite(field)):
        raise GridError("field contains non-finite values")
    return field


def sht_forward(field: np.ndarray, grid: GridSpec) -> SpectralCoeffs:
    """Quadrature analysis of a real field (leading axes are batch axes)."""
    field = _check_field(field, grid)
    return SpectralCoeffs(grid.plan.analysis(field), grid.truncation)


def sht_inverse(coeffs: SpectralCoeffs, grid: GridSpec) -> np.ndarray:
    if coeffs.truncation != grid.truncation:
        raise GridError(f"coefficients are T{coeffs.truncation}, grid is T{grid.truncation}")
    return grid.plan.synthesis(coeffs.coeffs)


def sht_adjoint(cotangent: SpectralCoeffs, grid: GridSpec) -> np.ndarray:
    """Real-linear adjoint of ``sht_forward`` under ``<a, b> = Re sum conj(a) b``."""
    if cotangent.truncation != grid.truncation:
        raise GridError(f"cotangent is T{cotangent.truncation}, grid is T{grid.truncation}")
    return grid.plan.analysis_adjoint(cotangent.coeffs)


def quadrature_mean(field: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Exact area mean under Gaussian quadrature, over the last two axes."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-2:] != grid.shape:
        raise GridError(f"field shape {field.shape[-2:]} does not match grid {grid.shape}")
    return np.einsum("...ij,i->...", field, grid.gauss_weights) / (2.0 * grid.nlon)


def zonal_mean(field: np.ndarray) -> np.ndarray:
    return np.mean(field, axis=-1)


def band_weights(grid: GridSpec, lat_min: float, lat_max: float) -> np.ndarray:
    """Quadrature weights restricted to a latitude band, normalized to sum 1."""
    lats = grid.lats
    sel = (lats >= lat_min) & (lats <= lat_max)
    if not sel.any():
        raise GridError(f"no grid latitudes in [{lat_min}, {lat_max}]")
    w = np.where(sel, grid.gauss_weights, 0.0)
    return w / w.sum()


def random_bandlimited(grid: GridSpec, rng: np.random.Generator, batch=(), max_degree=None, skip_mean=False):
    """Random real field with an isotropic flat spectrum up to ``max_degree``.

    Coefficients are scaled so the pointwise variance is 1 everywhere.
    """
    L = grid.truncation if max_degree is None else max_degree
    ls, ms = degree_order(grid.truncation)
    a = rng.standard_normal((*batch, grid.ncoef)) + 1j * rng.standard_normal((*batch, grid.ncoef))
    a = np.where(ms == 0, a.real, a / np.sqrt(2.0))
    keep = (ls <= L) & ((ls > 0) if skip_mean else True)
    a = np.where(keep, a, 0.0)
    lo = 1 if skip_mean else 0
    variance = sum(2 * l + 1 for l in range(lo, L + 1)) / (4.0 * np.pi)
    return grid.plan.synthesis(a) / np.sqrt(variance)
