"""Conformal dilations of S^n, bubbles, pullbacks and centre-of-mass normalisation.

Conventions
-----------
``MobiusParam(q, eps)`` denotes the map

    phi_{q,eps} = psi o (y -> y / eps) o pi

where ``pi`` is stereographic projection from ``-q`` (so ``q`` sits at the
chart origin) and ``psi`` its inverse.  For ``eps < 1`` the map expands a
neighbourhood of ``q`` over most of the sphere, so the pulled back round metric
``phi^* g = e^{2 u_{q,eps}} g`` has its volume concentrated at ``q`` and

    e^{u_{q,eps}(x)} = 2 eps / (1 + eps^2 - (1 - eps^2) <x, q>).

The same map is labelled by the ball point ``b = (1-eps)/(1+eps) q``; the
identity is ``b = 0`` and the inverse map is ``-b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .conformal import exp_nu
from .errors import NoConvergence
from .sphere import Mode, SphereContext, sphere_volume

__all__ = [
    "MobiusParam",
    "NormalizedState",
    "apply_map",
    "bubble_values",
    "bubble",
    "pullback",
    "center_of_mass",
    "normalize_com",
    "shadow",
    "shadow_point",
    "bubble_energy_f",
]


@dataclass(frozen=True)
class MobiusParam:
    q: np.ndarray
    eps: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("concentration centre must be nonzero")
        object.__setattr__(self, "q", q / norm)
        if not self.eps > 0:
            raise ValueError(f"dilation scale must be positive, got {self.eps}")

    @property
    def n(self) -> int:
        return self.q.size - 1

    @property
    def ball_point(self) -> np.ndarray:
        return (1.0 - self.eps) / (1.0 + self.eps) * self.q

    @classmethod
    def identity(cls, n: int) -> "MobiusParam":
        q = np.zeros(n + 1)
        q[-1] = 1.0
        return cls(q, 1.0)

    @classmethod
    def from_ball(cls, b: np.ndarray) -> "MobiusParam":
        b = np.asarray(b, dtype=float)
        r = float(np.linalg.norm(b))
        if r >= 1.0:
            raise ValueError(f"ball point must lie in the open unit ball, |b| = {r}")
        if r == 0.0:
            return cls.identity(b.size - 1)
        return cls(b / r, (1.0 - r) / (1.0 + r))

    def inverse(self) -> "MobiusParam":
        return MobiusParam(self.q, 1.0 / self.eps)


def apply_map(p: MobiusParam, x: np.ndarray) -> np.ndarray:
    """Image phi_{q,eps}(x) for unit vectors x of shape (..., n+1)."""
    x = np.asarray(x, dtype=float)
    e2 = p.eps * p.eps
    s = x @ p.q
    perp = x - s[..., None] * p.q
    D = 1.0 + e2 - (1.0 - e2) * s
    num = 2.0 * p.eps * perp + (e2 * (1.0 + s) - (1.0 - s))[..., None] * p.q
    return num / D[..., None]


def bubble_values(p: MobiusParam, x: np.ndarray) -> np.ndarray:
    """u_{q,eps}(x) = (1/n) log det d phi_{q,eps}(x)."""
    x = np.asarray(x, dtype=float)
    e2 = p.eps * p.eps
    return np.log(2.0 * p.eps / (1.0 + e2 - (1.0 - e2) * (x @ p.q)))


def _check_axis(ctx: SphereContext, p: MobiusParam) -> None:
    if ctx.mode is Mode.AXISYMMETRIC and p.eps != 1.0 and abs(abs(p.q[-1]) - 1.0) > 1e-12:
        raise ValueError("axisymmetric contexts only admit dilations centred on +-e_{n+1}")


def bubble(ctx: SphereContext, p: MobiusParam) -> np.ndarray:
    _check_axis(ctx, p)
    return ctx.analyze(bubble_values(p, ctx.points))


def pullback(ctx: SphereContext, u: np.ndarray, p: MobiusParam) -> np.ndarray:
    """Conformal factor v with e^{2v} g = phi_p^*(e^{2u} g), i.e. v = u o phi_p + u_p."""
    _check_axis(ctx, p)
    u = ctx.check_coeffs(u)
    moved = apply_map(p, ctx.points)
    return ctx.analyze(ctx.evaluate(u, moved) + bubble_values(p, ctx.points))


def _axial_mean(ctx: SphereContext, g: np.ndarray) -> np.ndarray:
    """mean(x g) as an (n+1)-vector; the off-axis part vanishes in axisymmetric mode."""
    if ctx.mode is Mode.AXISYMMETRIC:
        out = np.zeros(ctx.n + 1)
        out[-1] = ctx.mean(ctx.height * g)
        return out
    return np.array([ctx.mean(ctx.points[..., k] * g) for k in range(ctx.n + 1)])


def center_of_mass(ctx: SphereContext, u: np.ndarray) -> np.ndarray:
    """mean(x e^{nu}) over the round sphere."""
    _, e = exp_nu(ctx, u)
    return _axial_mean(ctx, e)


@dataclass(frozen=True)
class NormalizedState:
    v: np.ndarray | None
    phi: MobiusParam
    theta: np.ndarray
    com_residual: float
    iterations: int


def _com_after(ctx: SphereContext, e: np.ndarray, b: np.ndarray) -> np.ndarray:
    # centre of mass of phi_b^*(e^{2u} g): change variables y = phi_b(x)
    inv = MobiusParam.from_ball(-b)
    if ctx.mode is Mode.AXISYMMETRIC:
        out = np.zeros(ctx.n + 1)
        out[-1] = ctx.mean(apply_map(inv, ctx.points)[..., -1] * e)
        return out
    img = apply_map(inv, ctx.points)
    return np.array([ctx.mean(img[..., k] * e) for k in range(ctx.n + 1)])


def normalize_com(
    ctx: SphereContext,
    u: np.ndarray,
    tol: float = 1e-10,
    accept: float = 1e-8,
    max_iter: int = 60,
    fd_step: float = 1e-6,
    compute_v: bool = True,
) -> NormalizedState:
    """Find phi with mean(x dmu_h) = 0 for h = phi^*(e^{2u} g).

    Damped Newton on the ball point of phi with a central finite-difference
    Jacobian.  Raises :class:`NoConvergence` if the residual is not below
    ``accept`` after ``max_iter`` iterations.
    """
    _, e = exp_nu(ctx, u)
    axes = [ctx.n] if ctx.mode is Mode.AXISYMMETRIC else list(range(ctx.n + 1))
    b = np.zeros(ctx.n + 1)
    F = _com_after(ctx, e, b)
    res = float(np.linalg.norm(F))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        J = np.empty((len(axes), len(axes)))
        for j, k in enumerate(axes):
            h = np.zeros(ctx.n + 1)
            h[k] = fd_step
            J[:, j] = (_com_after(ctx, e, b + h) - _com_after(ctx, e, b - h))[axes] / (2 * fd_step)
        try:
            d_axes = np.linalg.solve(J, -F[axes])
        except np.linalg.LinAlgError:
            d_axes = np.linalg.lstsq(J, -F[axes], rcond=None)[0]
        d = np.zeros(ctx.n + 1)
        d[axes] = d_axes
        step = 1.0
        while step > 1e-12:
            trial = b + step * d
            if np.linalg.norm(trial) < 1.0:
                Ft = _com_after(ctx, e, trial)
                rt = float(np.linalg.norm(Ft))
                if rt < res:
                    b, F, res = trial, Ft, rt
                    break
            step *= 0.5
        else:
            break
    if res > accept:
        raise NoConvergence(f"centre of mass residual {res:.3g} after {it} iterations")
    p = MobiusParam.from_ball(b)
    v = pullback(ctx, u, p) if compute_v else None
    return NormalizedState(v=v, phi=p, theta=shadow_point(p), com_residual=res, iterations=it)


def _zonal_average(n: int, g, eps: float) -> float:
    """Average over S^n of g(s), s = <x, q>, resolving structure of width eps^2 at s = 1."""
    # substitute d = 1 - s = e^y so the width-eps^2 layer at s = 1 becomes O(1) wide
    cn = sphere_volume(n - 1) / sphere_volume(n)
    a = (n - 2) / 2.0

    def dens(y):
        d = math.exp(y)
        return g(1.0 - d) * (d * (2.0 - d)) ** a * d

    knee = 2.0 * math.log(eps)
    lo, hi = knee - 40.0, math.log(2.0)
    pts = [p for p in (knee - 3.0, knee, knee + 3.0) if lo < p < hi]
    return cn * quad(dens, lo, hi, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-11, full_output=1)[0]


def shadow_point(p: MobiusParam) -> np.ndarray:
    """theta = mean over S^n of phi_p(x); parallel to q by symmetry."""
    e2 = p.eps * p.eps
    kappa = _zonal_average(
        p.n,
        lambda s: (e2 * (1.0 + s) - (1.0 - s)) / (1.0 + e2 - (1.0 - e2) * s),
        min(p.eps, 1.0 / p.eps),
    )
    return kappa * p.q


def shadow(ctx: SphereContext, state) -> np.ndarray:
    """Shadow-flow point of a flow state (anything with a ``u`` attribute, or coefficients)."""
    u = getattr(state, "u", state)
    return normalize_com(ctx, u, compute_v=False).theta


def bubble_energy_f(ctx: SphereContext, f, p: MobiusParam) -> float:
    """E_f[u_{q,eps}] for arbitrarily small eps, without resolving the bubble spectrally.

    The Beckner part uses P_n u = (n-1)!(e^{nu} - 1) for bubbles, so
    E = (n/2)(n-1)! mean(u (e^{nu} + 1)), a one-dimensional zonal integral.
    The f-mass is mean(f o phi_p^{-1}) by change of variables, integrated on
    the grid of ``ctx``.
    """
    n, fact, eps = ctx.n, ctx.fact, p.eps
    e2 = eps * eps
    logd = lambda s: np.log(2 * eps / (1.0 + e2 - (1.0 - e2) * s))
    E = 0.5 * n * fact * _zonal_average(n, lambda s: logd(s) * (np.exp(n * logd(s)) + 1.0), min(eps, 1 / eps))
    pulled = apply_map(p.inverse(), ctx.points)
    if hasattr(f, "value"):
        mass = ctx.mean(np.asarray(f.value(pulled), dtype=float))
    else:
        raise TypeError("bubble_energy_f needs a candidate with a closed-form value()")
    return E - fact * math.log(mass)
