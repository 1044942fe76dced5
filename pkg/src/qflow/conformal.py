"""Paneitz operator, Q-curvature and the energies of a conformal metric e^{2u} g.

``u`` is always a coefficient vector on a :class:`~qflow.sphere.SphereContext`;
``f`` may be a :class:`~qflow.candidates.CandidateF` or an array of grid values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConformalFactorOverflow, NonpositiveFMass, ShapeMismatch
from .sphere import SphereContext

__all__ = [
    "OVERFLOW_LIMIT",
    "PaneitzMultiplier",
    "EnergyReport",
    "paneitz_apply",
    "q_curvature",
    "alpha",
    "energy",
    "energy_f",
    "renormalize_volume",
    "finalize_solution",
    "in_class_cf",
    "f_values",
    "exp_nu",
    "curvature_residual",
]

OVERFLOW_LIMIT = 300.0
VOLUME_TOL = 1e-10


@dataclass(frozen=True)
class PaneitzMultiplier:
    """Eigenvalues of P_n = prod_{k=0}^{(n-2)/2} (-Delta + k(n-k-1)) by degree."""

    n: int
    L: int
    mu: np.ndarray

    @classmethod
    def build(cls, n: int, L: int) -> "PaneitzMultiplier":
        l = np.arange(L + 1, dtype=float)
        lam = l * (l + n - 1)
        mu = np.ones(L + 1)
        for k in range(n // 2):
            mu = mu * (lam + k * (n - k - 1))
        return cls(n, L, mu)

    @classmethod
    def for_context(cls, ctx: SphereContext) -> "PaneitzMultiplier":
        return cls.build(ctx.n, ctx.L)

    def per_coeff(self, ctx: SphereContext) -> np.ndarray:
        if (ctx.n, ctx.L) != (self.n, self.L):
            raise ShapeMismatch(
                f"multiplier built for (n={self.n}, L={self.L}), context is (n={ctx.n}, L={ctx.L})"
            )
        return self.mu[ctx.degrees]


@dataclass(frozen=True)
class EnergyReport:
    E: float
    E_f: float
    alpha: float
    mean_fe: float
    volume_mean: float


def f_values(ctx: SphereContext, f) -> np.ndarray:
    if hasattr(f, "sample"):
        return f.sample(ctx)
    return ctx.check_grid(f)


def exp_nu(ctx: SphereContext, u: np.ndarray, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Grid values of u and e^{nu}, guarding against exponent overflow."""
    ug = ctx.synthesize(u) if grid is None else grid
    peak = ctx.n * float(np.max(np.abs(ug)))
    if not np.isfinite(peak) or peak > OVERFLOW_LIMIT:
        raise ConformalFactorOverflow(f"n*max|u| = {peak:.3g} exceeds {OVERFLOW_LIMIT}")
    return ug, np.exp(ctx.n * ug)


def paneitz_apply(ctx: SphereContext, mult: PaneitzMultiplier, s: np.ndarray) -> np.ndarray:
    return mult.per_coeff(ctx) * ctx.check_coeffs(s)


def q_curvature(ctx: SphereContext, mult: PaneitzMultiplier, u: np.ndarray) -> np.ndarray:
    """Grid values of Q = e^{-nu} (P_n u + (n-1)!)."""
    ug, e = exp_nu(ctx, u)
    pu = ctx.synthesize(paneitz_apply(ctx, mult, u))
    return (pu + ctx.fact) / e


def _mean_fe(ctx: SphereContext, f, e: np.ndarray) -> float:
    return ctx.mean(f_values(ctx, f) * e)


def alpha(ctx: SphereContext, f, u: np.ndarray) -> float:
    """(n-1)! / mean(f e^{nu})."""
    _, e = exp_nu(ctx, u)
    m = _mean_fe(ctx, f, e)
    if not m > 0:
        raise NonpositiveFMass(f"mean(f e^(nu)) = {m:.6g} <= 0")
    return ctx.fact / m


def energy(ctx: SphereContext, mult: PaneitzMultiplier, u: np.ndarray) -> float:
    """E[u] = (n/2) mean(u P_n u + 2 (n-1)! u), evaluated in coefficient space."""
    u = ctx.check_coeffs(u)
    quad = float(np.sum(mult.per_coeff(ctx) * u * u))
    return 0.5 * ctx.n * (quad + 2.0 * ctx.fact * float(u[0]))


def energy_f(ctx: SphereContext, mult: PaneitzMultiplier, f, u: np.ndarray) -> EnergyReport:
    _, e = exp_nu(ctx, u)
    m = _mean_fe(ctx, f, e)
    if not m > 0:
        raise NonpositiveFMass(f"mean(f e^(nu)) = {m:.6g} <= 0")
    E = energy(ctx, mult, u)
    return EnergyReport(E=E, E_f=E - ctx.fact * math.log(m), alpha=ctx.fact / m, mean_fe=m, volume_mean=ctx.mean(e))


def renormalize_volume(ctx: SphereContext, u: np.ndarray) -> np.ndarray:
    """Shift u by a constant so that mean(e^{nu}) = 1."""
    u = ctx.check_coeffs(u)
    _, e = exp_nu(ctx, u)
    out = u.copy()
    out[0] -= math.log(ctx.mean(e)) / ctx.n
    return out


def finalize_solution(ctx: SphereContext, u: np.ndarray, alpha_value: float) -> np.ndarray:
    """Turn a stationary state with Q = alpha f into a solution of Q = f.

    Adding c = log(alpha)/n scales Q by e^{-nc} = 1/alpha.
    """
    if not alpha_value > 0:
        raise ValueError(f"alpha must be positive, got {alpha_value}")
    out = ctx.check_coeffs(u).copy()
    out[0] += math.log(alpha_value) / ctx.n
    return out


def in_class_cf(ctx: SphereContext, f, u: np.ndarray) -> bool:
    """Unit volume and positive f-mass."""
    try:
        _, e = exp_nu(ctx, u)
    except ConformalFactorOverflow:
        return False
    return abs(ctx.mean(e) - 1.0) <= VOLUME_TOL and _mean_fe(ctx, f, e) > 0


def curvature_residual(ctx: SphereContext, mult: PaneitzMultiplier, f, u: np.ndarray) -> float:
    """int |alpha f - Q|^2 dmu_g over S^n (an integral, not an average)."""
    _, e = exp_nu(ctx, u)
    fg = f_values(ctx, f)
    m = ctx.mean(fg * e)
    if not m > 0:
        raise NonpositiveFMass(f"mean(f e^(nu)) = {m:.6g} <= 0")
    Q = (ctx.synthesize(paneitz_apply(ctx, mult, u)) + ctx.fact) / e
    return ctx.integrate((ctx.fact / m * fg - Q) ** 2 * e)
