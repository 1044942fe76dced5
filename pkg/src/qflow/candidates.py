"""Builtin curvature candidates f on S^n with closed-form ambient derivatives.

Each family is defined by a smooth function ``F`` on R^{n+1}; f is its
restriction to the sphere.  Riemannian derivatives are obtained from the ambient
ones by tangential projection::

    grad f   = P dF                         P = I - x x^T
    Hess f   = P d2F P - <x, dF> P
    Delta f  = tr d2F - x^T d2F x - n <x, dF>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import roots_jacobi

from .sphere import Mode, SphereContext, sphere_volume

__all__ = ["CandidateF", "ConstantF", "AffineF", "QuadraticF", "BumpsF", "sphere_seeds"]


def _zonal_mean(n: int, g, nodes: int = 96) -> float:
    """Average over S^n of ``g(<x, p>)`` for any fixed unit vector p."""
    a = (n - 2) / 2.0
    t, w = roots_jacobi(nodes, a, a)
    return float(np.sum(w * g(t)) * sphere_volume(n - 1) / sphere_volume(n))


def sphere_seeds(n: int, count: int = 400, seed: int = 7) -> np.ndarray:
    """Deterministic, roughly uniform points on S^n (Fibonacci lattice for n = 2)."""
    if n == 2:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        r = np.sqrt(1 - z * z)
        ang = math.pi * (1 + math.sqrt(5)) * k
        return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, n + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@dataclass(eq=False)
class CandidateF:
    """Base class: subclasses supply ``value``, ``gradient`` and ``hessian`` of F."""

    n: int
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    analytic = True

    # ambient closed forms, x has shape (..., n+1)
    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean(self) -> float:
        """Exact average of f over S^n."""
        raise NotImplementedError

    def is_axisymmetric(self) -> bool:
        """True if f depends on x_{n+1} only."""
        return False

    def describe(self) -> str:
        return type(self).__name__

    # Riemannian quantities --------------------------------------------------
    def sphere_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.gradient(x)
        return g - np.sum(g * x, axis=-1, keepdims=True) * x

    def sphere_hessian(self, x: np.ndarray) -> np.ndarray:
        """Hessian of f at a single point x, as an (n+1)x(n+1) tangent operator."""
        x = np.asarray(x, dtype=float)
        P = np.eye(self.n + 1) - np.outer(x, x)
        return P @ self.hessian(x) @ P - float(x @ self.gradient(x)) * P

    def sphere_laplacian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        H = self.hessian(x)
        g = self.gradient(x)
        tr = np.trace(H, axis1=-2, axis2=-1)
        xHx = np.einsum("...i,...ij,...j->...", x, H, x)
        return tr - xHx - self.n * np.sum(x * g, axis=-1)

    # grid samples -----------------------------------------------------------
    def sample(self, ctx: SphereContext) -> np.ndarray:
        """Values of f on the quadrature grid of ``ctx`` (cached per context)."""
        key = id(ctx)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is ctx:
            return hit[1]
        if ctx.n != self.n:
            raise ValueError(f"candidate lives on S^{self.n}, context is S^{ctx.n}")
        if ctx.mode is Mode.AXISYMMETRIC and not self.is_axisymmetric():
            raise ValueError(f"{self.describe()} is not axisymmetric about e_{self.n + 1}")
        vals = np.asarray(self.value(ctx.points), dtype=float)
        vals.setflags(write=False)
        self._cache[key] = (ctx, vals)
        return vals

    def max_value(self) -> float:
        """Global maximum of f on S^n (seeded local optimisation)."""
        if "max" in self._cache:
            return self._cache["max"]
        seeds = np.concatenate([sphere_seeds(self.n, 200), self.special_points()])
        vals = self.value(seeds)
        best = float(np.max(vals))
        for x0 in seeds[np.argsort(vals)[-5:]]:
            res = minimize(
                lambda y: -float(self.value(y / np.linalg.norm(y))),
                x0,
                jac=lambda y: -self._chain(y),
                method="BFGS",
                options={"gtol": 1e-12},
            )
            y = res.x / np.linalg.norm(res.x)
            best = max(best, float(self.value(y)))
        self._cache["max"] = best
        return best

    def _chain(self, y: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(y)
        x = y / r
        g = self.gradient(x)
        return (g - (g @ x) * x) / r

    def special_points(self) -> np.ndarray:
        """Points where critical points are likely (axes, bump centres)."""
        eye = np.eye(self.n + 1)
        return np.concatenate([eye, -eye])

    def search_seeds(self, count: int = 400) -> np.ndarray:
        """Starting points for the critical point search."""
        return np.concatenate([sphere_seeds(self.n, count), self.special_points()])


@dataclass(eq=False)
class ConstantF(CandidateF):
    c: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.c))

    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.n + 1,))

    def mean(self):
        return float(self.c)

    def max_value(self):
        return float(self.c)

    def is_axisymmetric(self):
        return True

    def describe(self):
        return f"constant:{self.c!r}"


@dataclass(eq=False)
class AffineF(CandidateF):
    """f = a + b * x_axis, with ``axis`` 1-based in 1..n+1."""

    a: float = 0.0
    b: float = 1.0
    axis: int = 3

    def __post_init__(self):
        if not 1 <= self.axis <= self.n + 1:
            raise ValueError(f"axis must lie in 1..{self.n + 1}, got {self.axis}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + self.b * x[..., self.axis - 1]

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., self.axis - 1] = self.b
        return g

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.n + 1,))

    def mean(self):
        return float(self.a)

    def max_value(self):
        return float(self.a + abs(self.b))

    def is_axisymmetric(self):
        return self.axis == self.n + 1 or self.b == 0

    def describe(self):
        return f"affine:{self.a!r},{self.b!r},{self.axis}"


@dataclass(eq=False)
class QuadraticF(CandidateF):
    """f = c0 + x^T M x + <lin, x> with M symmetrised on construction."""

    c0: float = 1.0
    M: np.ndarray = None
    lin: np.ndarray = None

    def __post_init__(self):
        d = self.n + 1
        M = np.zeros((d, d)) if self.M is None else np.asarray(self.M, dtype=float).reshape(d, d)
        self.M = 0.5 * (M + M.T)
        self.lin = np.zeros(d) if self.lin is None else np.asarray(self.lin, dtype=float).reshape(d)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.c0 + np.einsum("...i,ij,...j->...", x, self.M, x) + x @ self.lin

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ self.M + self.lin

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * self.M, x.shape + (self.n + 1,)).copy()

    def mean(self):
        return float(self.c0 + np.trace(self.M) / (self.n + 1))

    def is_axisymmetric(self):
        d = self.n + 1
        inner = self.M[: d - 1, : d - 1]
        return (
            np.allclose(inner, inner[0, 0] * np.eye(d - 1), atol=0)
            and np.all(self.M[-1, :-1] == 0)
            and np.all(self.lin[:-1] == 0)
        )

    def special_points(self):
        _, vecs = np.linalg.eigh(self.M)
        return np.concatenate([super().special_points(), vecs.T, -vecs.T])

    def describe(self):
        return f"quadratic:{self.c0!r};" + ",".join(repr(float(v)) for v in self.M.ravel())


@dataclass(eq=False)
class BumpsF(CandidateF):
    """f = c0 + sum_i amp_i * exp(sharp_i * (<x, p_i> - 1))."""

    c0: float = 0.0
    bumps: list = field(default_factory=list)

    def __post_init__(self):
        cleaned = []
        for amp, sharp, centre in self.bumps:
            p = np.asarray(centre, dtype=float).reshape(self.n + 1)
            norm = np.linalg.norm(p)
            if norm == 0:
                raise ValueError("bump centre must be nonzero")
            cleaned.append((float(amp), float(sharp), p / norm))
        self.bumps = cleaned

    def _terms(self, x):
        for amp, sharp, p in self.bumps:
            yield amp, sharp, p, np.exp(sharp * (x @ p - 1.0))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], float(self.c0))
        for amp, _, _, e in self._terms(x):
            out = out + amp * e
        return out

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for amp, sharp, p, e in self._terms(x):
            out = out + (amp * sharp * e)[..., None] * p
        return out

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n + 1,))
        for amp, sharp, p, e in self._terms(x):
            out = out + (amp * sharp**2 * e)[..., None, None] * np.outer(p, p)
        return out

    def mean(self):
        total = float(self.c0)
        for amp, sharp, _ in self.bumps:
            total += amp * _zonal_mean(self.n, lambda t, s=sharp: np.exp(s * (t - 1.0)))
        return total

    def is_axisymmetric(self):
        return all(abs(abs(p[-1]) - 1.0) < 1e-14 for _, _, p in self.bumps)

    def special_points(self):
        pts = [super().special_points()]
        for _, _, p in self.bumps:
            pts.append(np.stack([p, -p]))
        return np.concatenate(pts)

    def describe(self):
        parts = [repr(self.c0)]
        for amp, sharp, p in self.bumps:
            parts.append(",".join(repr(float(v)) for v in (amp, sharp, *p)))
        return "bumps:" + ";".join(parts)
