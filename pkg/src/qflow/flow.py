"""Time integration of the normalized flow 2 u_t = alpha f - Q.

The scheme is first-order IMEX: ``(c/2) P_n u`` is treated implicitly with the
frozen coefficient ``c = max e^{-nu}`` (a diagonal solve in coefficient space)
and everything else explicitly.  Every accepted step is volume-renormalized and
must not raise E_f by more than ``ef_slack``; otherwise dt is halved and the
step retried.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .blowup import Thresholds, first_radius
from .conformal import (
    EnergyReport,
    PaneitzMultiplier,
    VOLUME_TOL,
    energy,
    exp_nu,
    f_values,
    in_class_cf,
    paneitz_apply,
    renormalize_volume,
)
from .errors import (
    ConformalFactorOverflow,
    InitialDataRejected,
    NoConvergence,
    NonpositiveFMass,
    NumericFailure,
)
from .mobius import normalize_com
from .sphere import SphereContext

__all__ = [
    "FlowParams",
    "FlowState",
    "StopKind",
    "StopReason",
    "DiagnosticsRecord",
    "make_state",
    "step",
    "run",
    "interpolate_initial",
    "dissipation",
]


@dataclass(frozen=True)
class FlowParams:
    dt0: float = 1e-3
    dt_max: float = 0.1
    t_max: float = 200.0
    tol_converge: float = 1e-8
    u_blow: float = 6.0
    r_min: float = 0.05
    record_every: int = 1
    max_halvings: int = 40
    grow_after: int = 10
    grow_factor: float = 1.2
    ef_slack: float = 1e-10
    max_steps: int | None = None
    track_shadow: bool = True
    scan_radii: np.ndarray | None = None

    def __post_init__(self):
        for name in ("dt0", "dt_max", "tol_converge", "u_blow", "r_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dt0 > self.dt_max:
            raise ValueError("dt0 must not exceed dt_max")
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.u_blow, self.r_min, self.tol_converge, self.scan_radii)


@dataclass(frozen=True)
class FlowState:
    t: float
    dt: float
    u: np.ndarray
    report: EnergyReport
    residual_l2: float
    step_index: int = 0
    accept_streak: int = 0
    grids: "_Grids | None" = field(default=None, repr=False, compare=False)

    @property
    def max_u(self) -> float:
        return float(self.grids.u.max())


@dataclass(frozen=True)
class _Grids:
    u: np.ndarray
    e: np.ndarray
    pu: np.ndarray


class StopKind(str, enum.Enum):
    CONVERGED = "Converged"
    CONCENTRATED = "Concentrated"
    TIMED_OUT = "TimedOut"
    NUMERIC_FAILURE = "NumericFailure"


@dataclass(frozen=True)
class StopReason:
    kind: StopKind
    detail: str = ""
    p_star: np.ndarray | None = None
    r_star: float | None = None


@dataclass(frozen=True)
class DiagnosticsRecord:
    step_index: int
    t: float
    dt: float
    E: float
    E_f: float
    alpha: float
    residual_l2: float
    max_u: float
    min_u: float
    volume_err: float
    theta: np.ndarray
    concentration_radius: float | None
    p_star: np.ndarray | None = field(default=None, repr=False)



def _evaluate(ctx, mult, fg, u) -> tuple[EnergyReport, float, _Grids]:
    """Energy report, residual and cached grid values of a coefficient vector."""
    ug, e = exp_nu(ctx, u)
    mfe = ctx.mean(fg * e)
    if not mfe > 0:
        raise NonpositiveFMass(f"mean(f e^(nu)) = {mfe:.6g} <= 0")
    pu = ctx.synthesize(paneitz_apply(ctx, mult, u))
    a = ctx.fact / mfe
    E = energy(ctx, mult, u)
    rep = EnergyReport(E=E, E_f=E - ctx.fact * math.log(mfe), alpha=a, mean_fe=mfe, volume_mean=ctx.mean(e))
    res = ctx.integrate((a * fg * e - pu - ctx.fact) ** 2 / e)
    return rep, res, _Grids(ug, e, pu)


def make_state(
    ctx: SphereContext,
    mult: PaneitzMultiplier,
    f,
    u: np.ndarray,
    t: float = 0.0,
    dt: float = 1e-3,
    step_index: int = 0,
    accept_streak: int = 0,
) -> FlowState:
    u = ctx.check_coeffs(u)
    rep, res, grids = _evaluate(ctx, mult, f_values(ctx, f), u)
    return FlowState(t, dt, u, rep, res, step_index, accept_streak, grids)


def dissipation(ctx: SphereContext, state: FlowState) -> float:
    """(n/2) mean((alpha f - Q)^2 e^{nu}), the instantaneous rate of decrease of E_f."""
    return 0.5 * ctx.n * state.residual_l2 / ctx.omega_n


def _attempt(ctx, mult, fg, state: FlowState, dt: float) -> np.ndarray:
    g = state.grids
    Q = (g.pu + ctx.fact) / g.e
    c = float(np.max(1.0 / g.e))
    mu = mult.per_coeff(ctx)
    rhs = state.u + dt * (ctx.analyze(0.5 * (state.report.alpha * fg - Q)) + 0.5 * c * mu * state.u)
    return renormalize_volume(ctx, rhs / (1.0 + 0.5 * dt * c * mu))


def step(
    ctx: SphereContext,
    mult: PaneitzMultiplier,
    f,
    state: FlowState,
    params: FlowParams = FlowParams(),
) -> FlowState:
    """Advance by one accepted step.

    Raises :class:`NumericFailure` after ``max_halvings`` rejected attempts and
    lets :class:`ConformalFactorOverflow` propagate.
    """
    if state.grids is None:
        state = make_state(ctx, mult, f, state.u, state.t, state.dt, state.step_index, state.accept_streak)
    if not (abs(state.report.volume_mean - 1.0) <= VOLUME_TOL and state.report.mean_fe > 0):
        raise InitialDataRejected("state is not volume-normalized with positive f-mass")
    fg = f_values(ctx, f)
    dt = state.dt
    old = state.report.E_f
    for _ in range(params.max_halvings + 1):
        try:
            u_new = _attempt(ctx, mult, fg, state, dt)
            rep, res, grids = _evaluate(ctx, mult, fg, u_new)
        except NonpositiveFMass:
            dt *= 0.5
            continue
        if np.all(np.isfinite(u_new)) and rep.E_f <= old + params.ef_slack:
            streak = state.accept_streak + 1
            dt_next = dt
            if streak >= params.grow_after:
                dt_next = min(dt * params.grow_factor, params.dt_max)
                streak = 0
            return FlowState(state.t + dt, dt_next, u_new, rep, res, state.step_index + 1, streak, grids)
        dt *= 0.5
    raise NumericFailure(f"E_f increase not cured after {params.max_halvings} halvings (dt = {dt:.3g})")


def _record(ctx, mult, state: FlowState, dt_taken: float, params: FlowParams) -> DiagnosticsRecord:
    ug = state.grids.u
    theta = np.full(ctx.n + 1, np.nan)
    if params.track_shadow:
        try:
            theta = normalize_com(ctx, state.u, compute_v=False).theta
        except NoConvergence:
            pass
    r_star, p_star = first_radius(ctx, state.u, params.scan_radii, mult)
    return DiagnosticsRecord(
        step_index=state.step_index,
        t=state.t,
        dt=dt_taken,
        E=state.report.E,
        E_f=state.report.E_f,
        alpha=state.report.alpha,
        residual_l2=state.residual_l2,
        max_u=float(ug.max()),
        min_u=float(ug.min()),
        volume_err=state.report.volume_mean - 1.0,
        theta=theta,
        concentration_radius=r_star,
        p_star=p_star,
    )


def run(
    ctx: SphereContext,
    mult: PaneitzMultiplier,
    f,
    u0,
    params: FlowParams = FlowParams(),
    on_record: Callable[[DiagnosticsRecord, FlowState], None] | None = None,
    resume: FlowState | None = None,
) -> tuple[list[DiagnosticsRecord], FlowState, StopReason]:
    """Iterate :func:`step` until convergence, concentration, timeout or failure.

    With ``resume`` the run continues from a saved state and no initial record
    is emitted, so the concatenated rows match an uninterrupted run.
    """
    if resume is None:
        u0 = ctx.check_coeffs(u0)
        if not in_class_cf(ctx, f, u0):
            raise InitialDataRejected("initial data must have unit volume and positive f-mass")
        state = make_state(ctx, mult, f, u0, dt=params.dt0)
    else:
        state = resume if resume.grids is not None else make_state(
            ctx, mult, f, resume.u, resume.t, resume.dt, resume.step_index, resume.accept_streak
        )
    records: list[DiagnosticsRecord] = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec, state)

    last = None
    dt_taken = 0.0
    if resume is None:
        last = _record(ctx, mult, state, 0.0, params)
        emit(last)
    while True:
        if state.t >= params.t_max or (params.max_steps is not None and state.step_index >= params.max_steps):
            reason = StopReason(StopKind.TIMED_OUT, f"t = {state.t:.6g}")
            break
        t_prev = state.t
        try:
            state = step(ctx, mult, f, state, params)
        except ConformalFactorOverflow as exc:
            reason = StopReason(StopKind.CONCENTRATED, f"overflow: {exc}")
            break
        except NumericFailure as exc:
            reason = StopReason(StopKind.NUMERIC_FAILURE, str(exc))
            break
        dt_taken = state.t - t_prev
        converged = state.residual_l2 <= params.tol_converge
        umax = state.max_u
        due = state.step_index % params.record_every == 0
        if due or converged or umax >= params.u_blow:
            last = _record(ctx, mult, state, dt_taken, params)
            emit(last)
        else:
            last = None
        if converged:
            reason = StopReason(StopKind.CONVERGED, f"residual_l2 = {state.residual_l2:.3g}")
            break
        if last is not None:
            if umax >= params.u_blow:
                reason = StopReason(
                    StopKind.CONCENTRATED,
                    f"max u = {umax:.4g} >= u_blow",
                    last.p_star,
                    last.concentration_radius,
                )
                break
            r = last.concentration_radius
            if r is not None and r <= params.r_min:
                reason = StopReason(
                    StopKind.CONCENTRATED, f"r_star = {r:.4g} <= r_min", last.p_star, r
                )
                break
    if last is None or last.step_index != state.step_index:
        last = _record(ctx, mult, state, dt_taken, params)
        emit(last)
    if reason.kind is StopKind.CONCENTRATED and reason.p_star is None:
        reason = replace(reason, p_star=last.p_star, r_star=last.concentration_radius)
    return records, state, reason


def interpolate_initial(ctx: SphereContext, f, u0: np.ndarray, s: float) -> np.ndarray:
    """H(s, u0) = (1/n) log((1 - s) e^{n u0} + s), which keeps unit volume."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    u0 = ctx.check_coeffs(u0)
    if s == 0.0:
        return u0.copy()
    if s == 1.0:
        return ctx.zeros()
    _, e = exp_nu(ctx, u0)
    return ctx.analyze(np.log((1.0 - s) * e + s) / ctx.n)
