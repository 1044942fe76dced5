"""Command-line entry point: ``qflow {run,morse,normalize,bubble-fit,sweep}``."""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .blowup import concentration_scan, fit_bubble
from .conformal import PaneitzMultiplier, finalize_solution, in_class_cf, q_curvature
from .errors import (
    ConfigError,
    FitDiverged,
    InitialDataRejected,
    NoAnalyticDerivatives,
    NoConvergence,
    NonMorseWarning,
    QFlowError,
    SnapshotError,
)
from .flow import StopKind, make_state, run
from .io import (
    DiagnosticsWriter,
    RunConfig,
    Snapshot,
    build_u0,
    parse_config,
    read_snapshot,
    write_snapshot,
)
from .mobius import normalize_com
from .morse import criterion, nearest_critical_point
from .sphere import Mode, SphereContext, make_context

__all__ = ["main", "command_run", "command_morse", "command_normalize", "command_bubble_fit", "command_sweep"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_REJECTED = 4
EXIT_SNAPSHOT = 5


def _vec(x) -> list | None:
    return None if x is None else [float(v) for v in np.asarray(x).ravel()]


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _point_dict(c, p=None) -> dict:
    d = {
        "location": _vec(c.location),
        "f_value": c.f_value,
        "laplacian": c.laplacian,
        "morse_index": c.morse_index,
        "hessian_eigs": _vec(c.hessian_eigs),
        "grad_norm": c.grad_norm,
    }
    if p is not None:
        d["distance"] = float(np.arccos(np.clip(np.dot(c.location, p / np.linalg.norm(p)), -1, 1)))
    return d


def _context(cfg: RunConfig) -> SphereContext:
    return make_context(cfg.n, Mode.parse(cfg.mode), cfg.L)


def _fit_centre(ctx: SphereContext, p: np.ndarray) -> np.ndarray:
    if ctx.mode is Mode.AXISYMMETRIC:
        q = np.zeros(ctx.n + 1)
        q[-1] = 1.0 if p[-1] >= 0 else -1.0
        return q
    return p


def _concentration_report(ctx, cfg, f, state, p_star) -> dict:
    out: dict = {"p_star": _vec(p_star)}
    centre = _fit_centre(ctx, np.asarray(p_star, dtype=float))
    try:
        fit = fit_bubble(ctx, state.u, centre)
        out["bubble_fit"] = {
            "center": _vec(fit.center),
            "lambda": fit.lam,
            "z0": _vec(fit.z0),
            "q_inf": fit.q_inf,
            "q_inf_over_round": fit.q_inf / ctx.fact,
            "fit_residual": fit.fit_residual,
        }
    except FitDiverged as exc:
        out["bubble_fit"] = {"error": str(exc)}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonMorseWarning)
            verdict, search = criterion(f)
        near = nearest_critical_point(search.positive + search.nonpositive, p_star)
        if near is not None:
            out["nearest_critical_point"] = _point_dict(near, np.asarray(p_star, dtype=float))
    except NoAnalyticDerivatives as exc:
        out["nearest_critical_point"] = {"error": str(exc)}
    return out


def command_run(cfg: RunConfig, resume: str | None = None, quiet: bool = False) -> int:
    """Run the flow; writes diagnostics.csv, final.snap and report.json under the output dir."""
    out = cfg.resolved_output()
    out.mkdir(parents=True, exist_ok=True)
    ctx = _context(cfg)
    mult = PaneitzMultiplier.for_context(ctx)
    f = cfg.f
    params = cfg.flow_params()
    start = None
    if resume is not None:
        snap = read_snapshot(resume)
        if snap.config_hash != cfg.digest():
            raise ConfigError("snapshot was written under a different configuration")
        if (snap.n, snap.mode, snap.L) != (ctx.n, ctx.mode.value, ctx.L):
            raise ConfigError("snapshot discretisation does not match the configuration")
        start = make_state(ctx, mult, f, snap.coeffs, snap.t, snap.dt, snap.step_index, snap.accept_streak)
        u0 = snap.coeffs
    else:
        u0 = build_u0(ctx, cfg.u0_spec, cfg.seed)
        if not in_class_cf(ctx, f, u0):
            raise InitialDataRejected("initial data must have unit volume and positive f-mass")
    (out / "config.txt").write_text(cfg.to_text())
    with DiagnosticsWriter(out / "diagnostics.csv", ctx.n, append=resume is not None) as writer:
        records, state, reason = run(ctx, mult, f, u0, params, on_record=writer, resume=start)
    write_snapshot(
        out / "final.snap",
        Snapshot(ctx.n, ctx.mode.value, ctx.L, state.t, state.dt, state.step_index, state.accept_streak, cfg.digest(), state.u),
    )
    report = {
        "stop_reason": reason.kind.value,
        "detail": reason.detail,
        "t": state.t,
        "steps": state.step_index,
        "E": state.report.E,
        "E_f": state.report.E_f,
        "alpha": state.report.alpha,
        "mean_fe": state.report.mean_fe,
        "residual_l2": state.residual_l2,
        "max_u": state.max_u,
        "theta": _vec(records[-1].theta) if records else None,
        "r_star": records[-1].concentration_radius if records else None,
        "config_hash": cfg.digest(),
    }
    if reason.kind is StopKind.CONVERGED:
        sol = finalize_solution(ctx, state.u, state.report.alpha)
        fg = f.sample(ctx)
        report["solution_rel_error"] = float(np.max(np.abs(q_curvature(ctx, mult, sol) - fg)) / np.max(np.abs(fg)))
    if reason.kind is StopKind.CONCENTRATED:
        p = reason.p_star if reason.p_star is not None else records[-1].p_star
        report["concentration"] = _concentration_report(ctx, cfg, f, state, p)
    _dump(out / "report.json", report)
    if not quiet:
        print(f"{reason.kind.value}: {reason.detail} (t = {state.t:.6g}, steps = {state.step_index})")
        print(f"wrote {out}")
    return EXIT_NUMERIC if reason.kind is StopKind.NUMERIC_FAILURE else EXIT_OK


def command_morse(cfg: RunConfig, quiet: bool = False) -> int:
    """Critical points, gamma vector, k sequence and hypothesis checklist."""
    f = cfg.f
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonMorseWarning)
        verdict, search = criterion(f)
    report = {
        "candidate": f.describe(),
        "critical_points": [_point_dict(c) for c in search.positive],
        "excluded_nonpositive": [_point_dict(c) for c in search.nonpositive],
        "gamma": list(verdict.gamma),
        "k_sequence": list(verdict.k_seq) if verdict.k_seq is not None else "UNSOLVABLE",
        "k_recurrence": list(verdict.k_raw),
        "solvable": verdict.solvable,
        "hypotheses": [
            {"name": h.name, "passed": h.passed, "required": h.required, "detail": h.detail}
            for h in verdict.hypothesis_report
        ],
        "warnings": [str(w.message) for w in caught],
        "existence_guaranteed": verdict.headline,
    }
    out = cfg.resolved_output()
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "morse_report.json", report)
    if not quiet:
        print(f"gamma = {list(verdict.gamma)}; k = {report['k_sequence']}")
        print(f"existence guaranteed by the Morse criterion: {verdict.headline}")
    return EXIT_OK


def _snapshot_context(snap: Snapshot) -> SphereContext:
    return make_context(snap.n, Mode.parse(snap.mode), snap.L)


def command_normalize(snapshot: str, output: str | None = None, quiet: bool = False) -> int:
    """One-shot centre-of-mass normalisation of a snapshot."""
    snap = read_snapshot(snapshot)
    ctx = _snapshot_context(snap)
    state = normalize_com(ctx, snap.coeffs)
    res = {
        "q": _vec(state.phi.q),
        "eps": state.phi.eps,
        "ball_point": _vec(state.phi.ball_point),
        "theta": _vec(state.theta),
        "com_residual": state.com_residual,
        "iterations": state.iterations,
    }
    out = Path(output) if output else Path(snapshot).with_suffix(".normalized")
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(out / "normalized.snap", Snapshot(snap.n, snap.mode, snap.L, snap.t, snap.dt, snap.step_index, snap.accept_streak, snap.config_hash, state.v))
    _dump(out / "normalize.json", res)
    if not quiet:
        print(json.dumps(res, indent=2))
    return EXIT_OK


def command_bubble_fit(snapshot: str, centre=None, output: str | None = None, quiet: bool = False) -> int:
    """One-shot bubble-profile fit; the centre defaults to the concentration-scan argmax."""
    snap = read_snapshot(snapshot)
    ctx = _snapshot_context(snap)
    if centre is None:
        centre = concentration_scan(ctx, snap.coeffs).p_star
    fit = fit_bubble(ctx, snap.coeffs, _fit_centre(ctx, np.asarray(centre, dtype=float)))
    res = {
        "center": _vec(fit.center),
        "lambda": fit.lam,
        "z0": _vec(fit.z0),
        "q_inf": fit.q_inf,
        "fit_residual": fit.fit_residual,
    }
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        _dump(Path(output), res)
    if not quiet:
        print(json.dumps(res, indent=2))
    return EXIT_OK


def _sweep_one(args) -> tuple[str, int]:
    text, overrides = args
    cfg = parse_config(text, **overrides)
    try:
        return cfg.output_dir, command_run(cfg, quiet=True)
    except InitialDataRejected:
        return cfg.output_dir, EXIT_REJECTED


def command_sweep(cfg_text: str, grid: dict[str, list[str]], base: dict, jobs: int = 1) -> int:
    """Cartesian product over ``grid``; each run writes to its own subdirectory."""
    keys = sorted(grid)
    base_cfg = parse_config(cfg_text, **base)
    tasks = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        tag = "_".join(f"{k}-{v}" for k, v in zip(keys, combo)).replace("/", "-").replace(":", "-")
        overrides = dict(base)
        overrides.update(zip(keys, combo))
        overrides["output_dir"] = str(Path(base_cfg.output_dir) / tag)
        tasks.append((cfg_text, overrides))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    for out, code in results:
        print(f"{code}\t{out}")
    return max((code for _, code in results), default=EXIT_OK)


# ---------------------------------------------------------------------------
# argument parsing


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key=value configuration file")
    for fld in fields(RunConfig):
        if fld.name.startswith("_"):
            continue
        flag = "--" + fld.name.replace("_", "-")
        p.add_argument(flag, dest=fld.name, default=None, metavar=fld.name.upper())
    p.add_argument("--f", dest="f_alias", default=None, help="alias for --f-spec")
    p.add_argument("--u0", dest="u0_alias", default=None, help="alias for --u0-spec")


def _load_config(ns) -> tuple[str, dict]:
    text = Path(ns.config).read_text() if ns.config else ""
    overrides = {fld.name: getattr(ns, fld.name) for fld in fields(RunConfig) if not fld.name.startswith("_")}
    if ns.f_alias is not None:
        overrides["f_spec"] = ns.f_alias
    if ns.u0_alias is not None:
        overrides["u0_spec"] = ns.u0_alias
    return text, {k: v for k, v in overrides.items() if v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qflow", description="Prescribed Q-curvature flow on S^n.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="integrate the flow")
    _config_flags(p)
    p.add_argument("--resume", help="continue from a snapshot written by an earlier run")

    p = sub.add_parser("morse", help="evaluate the Morse existence criterion for f")
    _config_flags(p)

    p = sub.add_parser("normalize", help="centre-of-mass normalisation of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--output", help="output directory")

    p = sub.add_parser("bubble-fit", help="fit a bubble profile to a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--center", help="comma-separated centre; default: concentration scan argmax")
    p.add_argument("--output", help="JSON file to write")

    p = sub.add_parser("sweep", help="run a grid of configurations")
    _config_flags(p)
    p.add_argument("--param", action="append", default=[], help="key=v1,v2,... (repeatable)")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.verb in ("run", "morse", "sweep"):
            text, overrides = _load_config(ns)
            if ns.verb == "sweep":
                grid = {}
                for item in ns.param:
                    key, _, vals = item.partition("=")
                    sep = "|" if "|" in vals else ","
                    grid[key.strip()] = [v for v in vals.split(sep) if v]
                return command_sweep(text, grid, overrides, ns.jobs)
            cfg = parse_config(text, **overrides)
            if ns.verb == "run":
                return command_run(cfg, resume=ns.resume)
            return command_morse(cfg)
        if ns.verb == "normalize":
            return command_normalize(ns.snapshot, ns.output)
        centre = [float(v) for v in ns.center.split(",")] if ns.center else None
        return command_bubble_fit(ns.snapshot, centre, ns.output)
    except ConfigError as exc:
        print(f"configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InitialDataRejected as exc:
        print(f"initial data rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except FileNotFoundError as exc:
        print(f"no such file: {exc.filename}", file=sys.stderr)
        return EXIT_SNAPSHOT if ns.verb in ("normalize", "bubble-fit") or getattr(ns, "resume", None) else EXIT_CONFIG
    except SnapshotError as exc:
        print(f"snapshot error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SNAPSHOT
    except (NoAnalyticDerivatives, NoConvergence, FitDiverged) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QFlowError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
