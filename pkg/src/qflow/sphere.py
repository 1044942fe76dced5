"""Quadrature grids and spectral transforms on the round sphere S^n.

Two discretisations are supported:

* ``Mode.FULL2D`` (n = 2 only): real spherical harmonics on a Gauss-Legendre
  colatitude grid times an equispaced longitude grid.
* ``Mode.AXISYMMETRIC`` (any even n): zonal functions of the height
  coordinate ``t = x_{n+1} = cos(theta)``, expanded in Gegenbauer polynomials
  and sampled at Gauss-Jacobi nodes.

Normalisation convention (used everywhere in the package): every basis
function ``Y`` has unit mean square against the probability measure
``dmu / omega_n``, and the degree-0 function is the constant 1.  Hence the
degree-0 coefficient of a field *is* its spherical average, and
``mean(u * v) == dot(coeffs(u), coeffs(v))`` for band-limited fields.

Fields are plain numpy arrays: grid values have ``ctx.grid_shape`` and
coefficient vectors have length ``ctx.ncoeffs``.  In FULL2D the coefficient of
``(l, m)`` lives at index ``l*l + l + m`` with ``m < 0`` denoting the
``sin(|m| phi)`` harmonic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_jacobi

from .errors import ModeError, OddDimension, ShapeMismatch

__all__ = [
    "Mode",
    "SphereContext",
    "make_context",
    "analyze",
    "synthesize",
    "integrate_mean",
    "laplacian",
    "sphere_volume",
    "zonal_basis",
]


class Mode(str, enum.Enum):
    FULL2D = "full2d"
    AXISYMMETRIC = "axisymmetric"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for mode in cls:
            if mode.value == key:
                return mode
        if key in ("axi", "axisym"):
            return cls.AXISYMMETRIC
        raise ModeError(f"unknown mode {value!r}")


def sphere_volume(n: int) -> float:
    """Volume of the unit n-sphere, 2 pi^((n+1)/2) / Gamma((n+1)/2)."""
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def zonal_basis(n: int, L: int, t: np.ndarray) -> np.ndarray:
    """Orthonormal zonal harmonics of degree 0..L on S^n evaluated at heights ``t``.

    These are Gegenbauer polynomials ``C_l^{(n-1)/2}(t)`` rescaled to unit mean
    square on S^n.  Built with the three-term recurrence of the orthonormal
    family, which is stable for large ``l``.  Returns shape ``t.shape + (L+1,)``.
    """
    t = np.asarray(t, dtype=float)
    lam = (n - 1) / 2.0
    out = np.empty(t.shape + (L + 1,))
    out[..., 0] = 1.0
    if L == 0:
        return out
    ls = np.arange(L + 1, dtype=float)
    b = np.zeros(L + 2)
    k = ls[1:]
    b[1 : L + 1] = np.sqrt(k * (k + 2 * lam - 1) / (4.0 * (k + lam - 1) * (k + lam)))
    out[..., 1] = t / b[1]
    for l in range(1, L):
        out[..., l + 1] = (t * out[..., l] - b[l] * out[..., l - 1]) / b[l + 1]
    return out


def _legendre_table(L: int, t: np.ndarray) -> np.ndarray:
    """Normalised associated Legendre functions, shape ``(len(t), L+1 [m], L+1 [l])``.

    ``pbar_lm = sqrt((2l+1)(l-m)!/(l+m)!) P_l^m`` without the Condon-Shortley
    phase, so that ``(1/2) int pbar_lm^2 dt = 1``.  Entries with ``l < m`` are 0.
    """
    t = np.asarray(t, dtype=float)
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    P = np.zeros((t.size, L + 1, L + 1))
    pmm = np.ones_like(t)
    for m in range(L + 1):
        if m > 0:
            pmm = pmm * s * math.sqrt((2 * m + 1) / (2.0 * m))
        P[:, m, m] = pmm
        if m + 1 <= L:
            P[:, m, m + 1] = math.sqrt(2 * m + 3) * t * pmm
        for l in range(m + 2, L + 1):
            a = math.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = math.sqrt((2.0 * l + 1) * (l - 1 - m) * (l - 1 + m) / ((2.0 * l - 3) * (l * l - m * m)))
            P[:, m, l] = a * t * P[:, m, l - 1] - b * P[:, m, l - 2]
    return P


@dataclass(frozen=True, eq=False)
class SphereContext:
    """Immutable discretisation of S^n; safe to share between threads."""

    n: int
    mode: Mode
    L: int
    theta: np.ndarray
    phi: np.ndarray | None
    weights: np.ndarray
    omega_n: float
    degrees: np.ndarray
    orders: np.ndarray
    points: np.ndarray
    _table: np.ndarray = field(repr=False)

    # -- sizes -------------------------------------------------------------
    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.weights.shape

    @property
    def ncoeffs(self) -> int:
        return self.degrees.size

    @property
    def height(self) -> np.ndarray:
        """The coordinate ``x_{n+1} = cos(theta)`` on the grid."""
        return self.points[..., -1]

    @property
    def fact(self) -> float:
        """(n-1)!, the Q-curvature of the round metric."""
        return float(math.factorial(self.n - 1))

    @property
    def grid_spacing(self) -> float:
        """Largest angular gap between neighbouring nodes."""
        th = np.concatenate(([0.0], np.sort(self.theta), [math.pi]))
        gap = float(np.max(np.diff(th)))
        if self.phi is not None:
            gap = max(gap, 2 * math.pi / self.phi.size)
        return gap

    def coeff_index(self, l: int, m: int = 0) -> int:
        if not 0 <= l <= self.L or abs(m) > l:
            raise IndexError(f"no basis function (l={l}, m={m}) at band limit {self.L}")
        if self.mode is Mode.AXISYMMETRIC:
            if m != 0:
                raise IndexError("axisymmetric contexts only carry m = 0")
            return l
        return l * l + l + m

    def unit(self, l: int, m: int = 0) -> np.ndarray:
        """Coefficient vector of a single basis function."""
        c = np.zeros(self.ncoeffs)
        c[self.coeff_index(l, m)] = 1.0
        return c

    def zeros(self) -> np.ndarray:
        return np.zeros(self.ncoeffs)

    def lam(self) -> np.ndarray:
        """Eigenvalue l(l+n-1) of -Laplacian for every coefficient slot."""
        d = self.degrees
        return d * (d + self.n - 1.0)

    # -- checks ------------------------------------------------------------
    def check_grid(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != self.grid_shape:
            raise ShapeMismatch(f"grid field has shape {g.shape}, expected {self.grid_shape}")
        return g

    def check_coeffs(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.ncoeffs,):
            raise ShapeMismatch(f"spectral field has shape {s.shape}, expected ({self.ncoeffs},)")
        return s

    # -- transforms --------------------------------------------------------
    def mean(self, g: np.ndarray) -> float:
        g = self.check_grid(g)
        return float(np.sum(self.weights * g) / self.omega_n)

    def integrate(self, g: np.ndarray) -> float:
        return float(np.sum(self.weights * self.check_grid(g)))

    def analyze(self, g: np.ndarray) -> np.ndarray:
        g = self.check_grid(g)
        if self.mode is Mode.AXISYMMETRIC:
            return self._table.T @ (self.weights * g) / self.omega_n
        nlon = self.phi.size
        wlat = self.weights[:, 0] * nlon / self.omega_n  # GL weight / 2
        F = np.fft.rfft(g, axis=1)[:, : self.L + 1] / nlon
        Fw = F * wlat[:, None]
        rhs = np.stack([Fw.real.T, -Fw.imag.T], axis=1)  # (m, 2, i)
        parts = rhs @ self._mtable  # (m, 2, l)
        am, sin_slot, l, scale = self._slots
        return scale * parts[am, sin_slot, l]

    @cached_property
    def _mtable(self) -> np.ndarray:
        # Legendre table reordered to (m, node, l) for batched matmuls
        return np.ascontiguousarray(self._table.transpose(1, 0, 2))

    @cached_property
    def _slots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        am = np.abs(self.orders)
        sin_slot = (self.orders < 0).astype(int)
        scale = np.where(self.orders == 0, 1.0, math.sqrt(2.0))
        return am, sin_slot, self.degrees, scale

    def _split(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cosine and sine coefficient tables ``A[m, l]``, ``B[m, l]``."""
        am, sin_slot, l, scale = self._slots
        AB = np.zeros((2, self.L + 1, self.L + 1))
        AB[sin_slot, am, l] = scale * s
        return AB[0], AB[1]

    def synthesize(self, s: np.ndarray) -> np.ndarray:
        s = self.check_coeffs(s)
        if self.mode is Mode.AXISYMMETRIC:
            return self._table @ s
        A, B = self._split(s)
        CS = self._mtable @ np.stack([A, B], axis=-1)  # (m, node, 2)
        C, S = CS[..., 0].T, CS[..., 1].T
        nlon = self.phi.size
        X = np.zeros((C.shape[0], nlon // 2 + 1), dtype=complex)
        X[:, : self.L + 1] = (C - 1j * S) * (nlon / 2.0)
        X[:, 0] = C[:, 0] * nlon
        return np.fft.irfft(X, n=nlon, axis=1)

    def evaluate(self, s: np.ndarray, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
        """Evaluate the expansion ``s`` at arbitrary unit vectors ``x`` (shape ``(..., n+1)``).

        In AXISYMMETRIC mode only the height component ``x[..., -1]`` is used.
        """
        s = self.check_coeffs(s)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n + 1:
            raise ShapeMismatch(f"points must have {self.n + 1} ambient coordinates")
        shape = x.shape[:-1]
        flat = x.reshape(-1, self.n + 1)
        t = np.clip(flat[:, -1], -1.0, 1.0)
        if self.mode is Mode.AXISYMMETRIC:
            return (zonal_basis(self.n, self.L, t) @ s).reshape(shape)
        A, B = self._split(s)
        ph = np.arctan2(flat[:, 1], flat[:, 0])
        m = np.arange(self.L + 1)
        out = np.empty(t.size)
        for start in range(0, t.size, chunk):
            sl = slice(start, start + chunk)
            P = _legendre_table(self.L, t[sl])
            C = np.einsum("iml,ml->im", P, A)
            S = np.einsum("iml,ml->im", P, B)
            mp = np.outer(ph[sl], m)
            out[sl] = np.sum(C * np.cos(mp) + S * np.sin(mp), axis=1)
        return out.reshape(shape)

    def laplacian(self, s: np.ndarray) -> np.ndarray:
        """Return the coefficients of ``Delta s`` (Laplace-Beltrami, non-positive spectrum)."""
        return -self.lam() * self.check_coeffs(s)


def make_context(n: int, mode: Mode | str = Mode.AXISYMMETRIC, L: int = 32) -> SphereContext:
    """Build the grid, quadrature weights and transform tables for S^n."""
    if int(n) != n or n < 2:
        raise OddDimension(f"sphere dimension must be an even integer >= 2, got {n}")
    n = int(n)
    if n % 2:
        raise OddDimension(f"the Paneitz product formula needs even n, got n={n}")
    mode = Mode.parse(mode)
    if mode is Mode.FULL2D and n != 2:
        raise ModeError(f"full2d transforms exist only for n=2, got n={n}")
    if int(L) != L or L < 8:
        raise ValueError(f"band limit must be an integer >= 8, got {L}")
    L = int(L)
    omega = sphere_volume(n)

    if mode is Mode.AXISYMMETRIC:
        a = (n - 2) / 2.0
        t, w = roots_jacobi(2 * (L + 1), a, a)
        order = np.argsort(-t)  # north to south
        t, w = t[order], w[order]
        weights = w * sphere_volume(n - 1)
        theta = np.arccos(t)
        pts = np.zeros((t.size, n + 1))
        pts[:, 0] = np.sin(theta)
        pts[:, -1] = t
        table = zonal_basis(n, L, t)
        degrees = np.arange(L + 1)
        orders = np.zeros(L + 1, dtype=int)
        return SphereContext(n, mode, L, theta, None, weights, omega, degrees, orders, pts, table)

    t, w = roots_jacobi(L + 1, 0.0, 0.0)
    order = np.argsort(-t)
    t, w = t[order], w[order]
    nlon = 2 * (L + 1)
    phi = 2 * math.pi * np.arange(nlon) / nlon
    theta = np.arccos(t)
    weights = np.outer(w, np.full(nlon, 2 * math.pi / nlon))
    st = np.sin(theta)[:, None]
    pts = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.repeat(t[:, None], nlon, axis=1)],
        axis=-1,
    )
    table = _legendre_table(L, t)
    degrees = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
    orders = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])
    return SphereContext(n, mode, L, theta, phi, weights, omega, degrees, orders, pts, table)


def analyze(ctx: SphereContext, g: np.ndarray) -> np.ndarray:
    return ctx.analyze(g)


def synthesize(ctx: SphereContext, s: np.ndarray) -> np.ndarray:
    return ctx.synthesize(s)


def integrate_mean(ctx: SphereContext, g: np.ndarray) -> float:
    """Spherical average (1/omega_n) * sum_i w_i g_i."""
    return ctx.mean(g)


def laplacian(ctx: SphereContext, s: np.ndarray) -> np.ndarray:
    return ctx.laplacian(s)

