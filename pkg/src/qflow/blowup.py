"""Concentration diagnostics: curvature residual, ball-mass scans, blow-up verdicts
and bubble-profile fits in a stereographic chart."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import betainc

from .conformal import PaneitzMultiplier, curvature_residual, exp_nu, paneitz_apply
from .errors import EmptyRadii, FitDiverged
from .sphere import Mode, SphereContext

__all__ = [
    "ConcentrationProbe",
    "BubbleFit",
    "Thresholds",
    "StopSignal",
    "default_radii",
    "residual_l2",
    "concentration_scan",
    "first_radius",
    "detect",
    "fit_bubble",
    "tangent_frame",
]


def _coeffs(state) -> np.ndarray:
    return getattr(state, "u", state)


def _mult(ctx: SphereContext, mult: PaneitzMultiplier | None) -> PaneitzMultiplier:
    return PaneitzMultiplier.for_context(ctx) if mult is None else mult


def residual_l2(ctx: SphereContext, f, state, mult: PaneitzMultiplier | None = None) -> float:
    """int |alpha f - Q|^2 dmu_g for the metric of ``state`` (a FlowState or coefficients)."""
    return curvature_residual(ctx, _mult(ctx, mult), f, _coeffs(state))


def default_radii() -> np.ndarray:
    return np.unique(np.concatenate([np.geomspace(0.01, 0.5, 48), np.linspace(0.5, math.pi, 49)]))


@dataclass(frozen=True)
class ConcentrationProbe:
    p_star: np.ndarray
    r_star: float | None
    radii: np.ndarray
    masses: np.ndarray
    threshold: float
    r_star_half: float | None
    threshold_half: float
    total: float

    @property
    def mass_at_r(self) -> list[tuple[float, float]]:
        return list(zip(self.radii.tolist(), self.masses.tolist()))


def _density(ctx: SphereContext, mult: PaneitzMultiplier, u: np.ndarray) -> np.ndarray:
    # |Q| e^{nu} = |P_n u + (n-1)!|, times the quadrature weights
    pu = ctx.synthesize(paneitz_apply(ctx, mult, u))
    exp_nu(ctx, u)
    return np.abs(pu + ctx.fact) * ctx.weights


def _scan_full2d(ctx: SphereContext, rho: np.ndarray, radii: np.ndarray):
    """Masses of all geodesic balls centred at grid nodes (and both poles).

    Ball membership is the hard indicator on nodes.  For a centre at latitude
    row ``ic`` the members of row ``i`` form a contiguous arc of longitudes,
    so every centre longitude is handled with cyclic prefix sums.
    """
    nlat, nlon = rho.shape
    ct, st = np.cos(ctx.theta), np.sin(ctx.theta)
    cr = np.cos(radii)
    dphi = 2 * math.pi / nlon
    pref = np.concatenate([np.zeros((nlat, 1)), np.cumsum(np.tile(rho, 3), axis=1)], axis=1)
    k = np.arange(nlon)
    masses = np.empty((radii.size, nlat, nlon))
    for ic in range(nlat):
        with np.errstate(divide="ignore", invalid="ignore"):
            C = (cr[:, None] - ct[ic] * ct[None, :]) / (st[ic] * st[None, :])
        ang = np.arccos(np.clip(C, -1.0, 1.0))
        J = np.floor(ang / dphi + 1e-9).astype(int)
        J = np.where(C > 1.0, -1, J)
        J = np.where(C <= -1.0, nlon, J)
        J = np.minimum(J, (nlon - 1) // 2 + 1)
        full = 2 * J + 1 >= nlon
        lo = (k[None, None, :] - J[:, :, None]) + nlon
        hi = (k[None, None, :] + J[:, :, None]) + nlon + 1
        rows = np.arange(nlat)[None, :, None]
        win = pref[rows, np.clip(hi, 0, 3 * nlon)] - pref[rows, np.clip(lo, 0, 3 * nlon)]
        win = np.where(J[:, :, None] < 0, 0.0, win)
        win = np.where(full[:, :, None], pref[rows, 2 * nlon] - pref[rows, nlon], win)
        masses[:, ic, :] = win.sum(axis=1)
    # pole centres: whole latitude rows enter at once
    rowsum = rho.sum(axis=1)
    north = np.array([rowsum[ctx.theta <= r + 1e-12].sum() for r in radii])
    south = np.array([rowsum[math.pi - ctx.theta <= r + 1e-12].sum() for r in radii])
    flat = masses.reshape(radii.size, -1)
    centres = ctx.points.reshape(-1, 3)
    allm = np.concatenate([flat, north[:, None], south[:, None]], axis=1)
    allc = np.concatenate([centres, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])
    return allm, allc


def _scan_axisymmetric(ctx: SphereContext, rho: np.ndarray, radii: np.ndarray):
    """Ball masses for centres on one meridian; the symmetric direction is integrated exactly."""
    n = ctx.n
    theta_c = np.concatenate([[0.0], ctx.theta, [math.pi]])
    ct, st = np.cos(theta_c), np.sin(theta_c)
    ci, si = np.cos(ctx.theta), np.sin(ctx.theta)
    half = (n - 1) / 2.0
    masses = np.empty((radii.size, theta_c.size))
    for j, r in enumerate(radii):
        with np.errstate(divide="ignore", invalid="ignore"):
            C = (math.cos(r) - ct[:, None] * ci[None, :]) / (st[:, None] * si[None, :])
        # fraction of the symmetric (n-1)-sphere with cos(psi) >= C
        frac = betainc(half, half, np.clip((1.0 - C) / 2.0, 0.0, 1.0))
        pole = st < 1e-15
        if pole.any():
            d = np.arccos(np.clip(ct[pole, None] * ci[None, :], -1, 1))
            frac[pole] = (d <= r + 1e-12).astype(float)
        masses[j] = frac @ rho
    centres = np.zeros((theta_c.size, n + 1))
    centres[:, 0] = st
    centres[:, -1] = ct
    return masses, centres


def _ball_masses(ctx: SphereContext, rho: np.ndarray, radii: np.ndarray):
    if ctx.mode is Mode.FULL2D:
        return _scan_full2d(ctx, rho, radii)
    return _scan_axisymmetric(ctx, rho, radii)


def _pick_centre(allm: np.ndarray, row: int) -> int:
    # ties at the threshold radius are broken by the masses at smaller radii
    keys = [allm[j] for j in range(row + 1)]
    return int(np.lexsort(keys)[-1])


def concentration_scan(
    ctx: SphereContext,
    state,
    radii=None,
    mult: PaneitzMultiplier | None = None,
) -> ConcentrationProbe:
    """sup over centres p of int_{B_r(p)} |Q| dmu_g for each radius r.

    Reports the first radius at which the sup reaches (1/4)(n-1)! omega_n (and
    the (1/2) level alongside) together with the maximising centre.
    """
    radii = default_radii() if radii is None else np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise EmptyRadii("concentration scan needs at least one radius")
    if np.any(np.diff(radii) < 0):
        raise ValueError("radii must be sorted ascending")
    mult = _mult(ctx, mult)
    rho = _density(ctx, mult, _coeffs(state))
    allm, centres = _ball_masses(ctx, rho, radii)
    best = allm.max(axis=1)
    quarter = 0.25 * ctx.fact * ctx.omega_n
    half = 0.5 * ctx.fact * ctx.omega_n

    def first(level):
        hit = np.nonzero(best >= level)[0]
        return (int(hit[0]), float(radii[hit[0]])) if hit.size else (None, None)

    idx, r_star = first(quarter)
    _, r_half = first(half)
    row = idx if idx is not None else radii.size - 1
    return ConcentrationProbe(
        p_star=centres[_pick_centre(allm, row)].copy(),
        r_star=r_star,
        radii=radii,
        masses=best,
        threshold=quarter,
        r_star_half=r_half,
        threshold_half=half,
        total=float(rho.sum()),
    )


def first_radius(
    ctx: SphereContext,
    state,
    radii=None,
    mult: PaneitzMultiplier | None = None,
) -> tuple[float | None, np.ndarray]:
    """r_star and p_star only, located by bisection over ``radii``.

    The sup mass is non-decreasing in r, so a handful of radii suffice; this
    is what the flow calls at every recorded step.
    """
    radii = default_radii() if radii is None else np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise EmptyRadii("concentration scan needs at least one radius")
    rho = _density(ctx, _mult(ctx, mult), _coeffs(state))
    level = 0.25 * ctx.fact * ctx.omega_n
    cache = {}

    def masses(i):
        if i not in cache:
            cache[i] = _ball_masses(ctx, rho, radii[i : i + 1])
        return cache[i]

    lo, hi = 0, radii.size - 1
    if masses(hi)[0].max() < level:
        return None, masses(hi)[1][int(np.argmax(masses(hi)[0][0]))].copy()
    while lo < hi:
        mid = (lo + hi) // 2
        if masses(mid)[0].max() >= level:
            hi = mid
        else:
            lo = mid + 1
    allm, centres = masses(lo)
    if lo > 0:
        allm = np.concatenate([masses(lo - 1)[0], allm])
    return float(radii[lo]), centres[_pick_centre(allm, allm.shape[0] - 1)].copy()


@dataclass(frozen=True)
class Thresholds:
    u_blow: float = 6.0
    r_min: float = 0.05
    tol_converge: float = 1e-8
    radii: np.ndarray | None = None


@dataclass(frozen=True)
class StopSignal:
    concentrating: bool
    probe: ConcentrationProbe | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.concentrating


def detect(
    ctx: SphereContext,
    state,
    thresholds: Thresholds = Thresholds(),
    mult: PaneitzMultiplier | None = None,
    f=None,
    probe: ConcentrationProbe | None = None,
) -> StopSignal:
    """Concentrating if max u >= u_blow, or if r_star <= r_min while the residual is above tolerance."""
    mult = _mult(ctx, mult)
    u = _coeffs(state)
    umax = float(np.max(ctx.synthesize(u)))
    if probe is None:
        probe = concentration_scan(ctx, u, thresholds.radii, mult)
    if umax >= thresholds.u_blow:
        return StopSignal(True, probe, f"max u = {umax:.4g} >= u_blow = {thresholds.u_blow}")
    if probe.r_star is not None and probe.r_star <= thresholds.r_min:
        res = getattr(state, "residual_l2", None)
        if res is None and f is not None:
            res = residual_l2(ctx, f, u, mult)
        if res is None or res > thresholds.tol_converge:
            return StopSignal(True, probe, f"r_star = {probe.r_star:.4g} <= r_min = {thresholds.r_min}")
    return StopSignal(False, probe)


# ---------------------------------------------------------------------------
# bubble fitting


@dataclass(frozen=True)
class BubbleFit:
    center: np.ndarray
    lam: float
    z0: np.ndarray
    q_inf: float
    fit_residual: float
    iterations: int = 0
    samples: int = field(default=0, repr=False)


def tangent_frame(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent space at p, as the rows of an n x (n+1) array."""
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    d = p.size
    M = np.eye(d) - np.outer(p, p)
    q, _ = np.linalg.qr(np.column_stack([p, M]))
    E = q[:, 1:d].T
    return E


def chart_point(p: np.ndarray, E: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Inverse stereographic projection from -p: chart origin maps to p."""
    r2 = np.sum(z * z, axis=-1)
    return (2.0 * (z @ E) + (1.0 - r2)[..., None] * p) / (1.0 + r2)[..., None]


def _chart_samples(ctx: SphereContext, window: float, nrad: int = 64, nang: int = 16) -> np.ndarray:
    r = window * (np.arange(1, nrad + 1) / nrad) ** 2
    if ctx.mode is Mode.AXISYMMETRIC:
        z = np.zeros((nrad + 1, ctx.n))
        z[1:, 0] = r
        return z
    if ctx.n != 2:
        raise ValueError("full chart fits are implemented for n = 2")
    ang = 2 * math.pi * np.arange(nang) / nang
    pts = [np.zeros((1, 2))]
    pts.append((r[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)[None]).reshape(-1, 2))
    return np.concatenate(pts)


def fit_bubble(
    ctx: SphereContext,
    state,
    p: np.ndarray,
    window: float = 2.0,
    max_iter: int = 200,
) -> BubbleFit:
    """Least-squares fit of the standard bubble profile in the stereographic chart at p.

    In the chart ``u~(z) = u(psi(z)) + log(2 / (1 + |z|^2))`` is matched to
    ``log(2 lam / (1 + lam^2 |z - z0|^2)) - (1/n) log(q_inf / (n-1)!)`` over
    ``|z| <= window`` with Levenberg-Marquardt.  In axisymmetric mode with p on
    the axis the offset z0 is pinned to zero.
    """
    u = _coeffs(state)
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    axisym = ctx.mode is Mode.AXISYMMETRIC
    if axisym and abs(abs(p[-1]) - 1) > 1e-12:
        raise ValueError("axisymmetric fits need p on the symmetry axis")
    E = tangent_frame(p)
    z = _chart_samples(ctx, window)
    x = chart_point(p, E, z)
    data = ctx.evaluate(u, x) + np.log(2.0 / (1.0 + np.sum(z * z, axis=1)))
    n = ctx.n

    def unpack(theta):
        lam = math.exp(theta[0])
        logq = theta[1]
        z0 = np.zeros(n) if axisym else np.asarray(theta[2:])
        return lam, logq, z0

    def resid(theta):
        lam, logq, z0 = unpack(theta)
        d2 = np.sum((z - z0) ** 2, axis=1)
        return np.log(2 * lam / (1 + lam * lam * d2)) - logq / n - data

    theta0 = np.zeros(2 if axisym else 2 + n)
    theta0[0] = data[0] - math.log(2.0)
    r0 = resid(theta0)
    misfit0 = float(np.sqrt(np.mean(r0 * r0)))
    try:
        sol = least_squares(resid, theta0, method="lm", max_nfev=max_iter * (theta0.size + 1), xtol=1e-14, ftol=1e-14)
    except (ValueError, FloatingPointError) as exc:
        raise FitDiverged(f"bubble fit failed: {exc}") from exc
    misfit = float(np.sqrt(np.mean(sol.fun * sol.fun)))
    if not np.isfinite(misfit) or sol.status <= 0 or misfit > 10 * max(misfit0, 1e-300):
        raise FitDiverged(f"bubble fit did not settle (status {sol.status}, misfit {misfit:.3g} vs {misfit0:.3g})")
    lam, logq, z0 = unpack(sol.x)
    return BubbleFit(
        center=p,
        lam=lam,
        z0=z0,
        q_inf=ctx.fact * math.exp(logq),
        fit_residual=misfit,
        iterations=int(sol.nfev),
        samples=z.shape[0],
    )
