"""Run configuration, candidate specs, snapshots and diagnostics files."""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .candidates import AffineF, BumpsF, CandidateF, ConstantF, QuadraticF
from .conformal import renormalize_volume
from .errors import (
    ConfigTypeError,
    CorruptPayload,
    MissingKey,
    NonpositiveMeanF,
    UnknownKey,
    VersionMismatch,
)
from .mobius import MobiusParam, bubble
from .sphere import Mode, SphereContext

__all__ = [
    "OUTPUT_ROOT_ENV",
    "RunConfig",
    "parse_config",
    "parse_fspec",
    "build_u0",
    "Snapshot",
    "write_snapshot",
    "read_snapshot",
    "csv_columns",
    "csv_header",
    "csv_row",
    "DiagnosticsWriter",
    "read_diagnostics",
    "fmt",
]

OUTPUT_ROOT_ENV = "QFLOW_OUTPUT_ROOT"
SNAPSHOT_MAGIC = b"QFSN"
SNAPSHOT_VERSION = 1


def fmt(x) -> str:
    """Text form of a real with 17 significant digits; None becomes an empty field."""
    if x is None:
        return ""
    return "%.17g" % float(x)


# ---------------------------------------------------------------------------
# candidate specs


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigTypeError(f"{what}: expected comma-separated reals, got {text!r}") from exc


def parse_fspec(text: str, n: int) -> CandidateF:
    """Build a candidate from ``family:params``.

    Families::

        constant:c
        affine:a,b,axis                     f = a + b x_axis (axis is 1-based)
        bumps:c0;amp,sharp,p_1..p_{n+1};... f = c0 + sum amp exp(sharp(<x,p> - 1))
        quadratic:c0;M_11..M_dd[;l_1..l_d]  f = c0 + x^T M x + <l, x>
    """
    family, _, body = text.strip().partition(":")
    family = family.strip().lower()
    d = n + 1
    if family == "constant":
        vals = _floats(body, "constant")
        if len(vals) != 1:
            raise ConfigTypeError("constant takes one value")
        return ConstantF(n, vals[0])
    if family == "affine":
        vals = _floats(body, "affine")
        if len(vals) != 3 or vals[2] != int(vals[2]):
            raise ConfigTypeError("affine takes a,b,axis with an integer axis")
        try:
            return AffineF(n, vals[0], vals[1], int(vals[2]))
        except ValueError as exc:
            raise ConfigTypeError(str(exc)) from exc
    if family == "bumps":
        parts = [p for p in body.split(";")]
        c0 = _floats(parts[0], "bumps c0")
        if len(c0) != 1:
            raise ConfigTypeError("bumps: first field is the constant c0")
        bumps = []
        for part in parts[1:]:
            vals = _floats(part, "bump")
            if len(vals) != 2 + d:
                raise ConfigTypeError(f"each bump needs amp,sharp and {d} centre coordinates")
            bumps.append((vals[0], vals[1], vals[2:]))
        try:
            return BumpsF(n, c0[0], bumps)
        except ValueError as exc:
            raise ConfigTypeError(str(exc)) from exc
    if family == "quadratic":
        parts = body.split(";")
        c0 = _floats(parts[0], "quadratic c0")
        M = _floats(parts[1], "quadratic M") if len(parts) > 1 else [0.0] * d * d
        lin = _floats(parts[2], "quadratic l") if len(parts) > 2 else [0.0] * d
        if len(c0) != 1 or len(M) != d * d or len(lin) != d:
            raise ConfigTypeError(f"quadratic needs c0; {d * d} matrix entries; optionally {d} linear terms")
        return QuadraticF(n, c0[0], np.array(M).reshape(d, d), np.array(lin))
    raise ConfigTypeError(f"unknown candidate family {family!r}")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    n: int
    mode: str = ""
    L: int = 32
    dt0: float = 1e-3
    dt_max: float = 0.1
    t_max: float = 200.0
    tol_converge: float = 1e-8
    u_blow: float = 6.0
    r_min: float = 0.05
    record_every: int = 1
    seed: int = 0
    output_dir: str = "qflow_out"
    f_spec: str = "constant:1"
    u0_spec: str = "zero"
    max_steps: int = 0

    # keys that only decide when to stop or where to write; excluded from the hash
    _volatile = ("t_max", "max_steps", "output_dir")

    @property
    def f(self) -> CandidateF:
        return parse_fspec(self.f_spec, self.n)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        items = {k: v for k, v in asdict(self).items() if k not in self._volatile}
        return hashlib.sha256(json.dumps(items, sort_keys=True).encode()).hexdigest()

    def resolved_output(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def with_updates(self, **kw) -> "RunConfig":
        return validate(replace(self, **kw))

    def flow_params(self):
        from .flow import FlowParams

        return FlowParams(
            dt0=self.dt0,
            dt_max=self.dt_max,
            t_max=self.t_max,
            tol_converge=self.tol_converge,
            u_blow=self.u_blow,
            r_min=self.r_min,
            record_every=self.record_every,
            max_steps=self.max_steps or None,
        )


_ALIASES = {"f": "f_spec", "u0": "u0_spec"}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigTypeError(f"{key}: cannot read {raw!r} as {kind}") from exc
    return raw


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.n < 2 or cfg.n % 2:
        raise ConfigTypeError(f"n must be an even integer >= 2, got {cfg.n}")
    mode = cfg.mode or ("full2d" if cfg.n == 2 else "axisymmetric")
    try:
        mode = Mode.parse(mode).value
    except ValueError as exc:
        raise ConfigTypeError(str(exc)) from exc
    for key in ("dt0", "dt_max", "tol_converge", "u_blow", "r_min"):
        if not getattr(cfg, key) > 0:
            raise ConfigTypeError(f"{key} must be positive")
    if cfg.dt0 > cfg.dt_max:
        raise ConfigTypeError("dt0 must not exceed dt_max")
    if cfg.t_max < 0 or cfg.record_every < 1 or cfg.L < 8 or cfg.max_steps < 0:
        raise ConfigTypeError("t_max >= 0, record_every >= 1, L >= 8 and max_steps >= 0 are required")
    f = parse_fspec(cfg.f_spec, cfg.n)
    mean = f.mean()
    if not mean > 0:
        raise NonpositiveMeanF(f"violated hypothesis: positive mean of f (mean f = {mean:.6g})")
    if mode == Mode.AXISYMMETRIC.value and not f.is_axisymmetric():
        raise ConfigTypeError(f"{cfg.f_spec!r} is not axisymmetric; use mode=full2d")
    return replace(cfg, mode=mode)


def parse_config(text: str, **overrides) -> RunConfig:
    """Read ``key=value`` lines (``#`` starts a comment) into a validated config."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigTypeError(f"line {lineno}: expected key=value, got {line!r}")
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _TYPES or key.startswith("_"):
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    for key, raw in overrides.items():
        if raw is None:
            continue
        key = _ALIASES.get(key, key)
        if key not in _TYPES:
            raise UnknownKey(f"unknown key {key!r}")
        values[key] = _coerce(key, str(raw)) if isinstance(raw, str) else raw
    if "n" not in values:
        raise MissingKey("n")
    return validate(RunConfig(**values))


def build_u0(ctx: SphereContext, spec: str, seed: int = 0) -> np.ndarray:
    """Initial conformal factor from ``zero``, ``harmonic:amp,l[,m]``,
    ``bubble:eps,q_1..q_{n+1}`` or ``random:amp,lmax``; always volume-normalized."""
    family, _, body = spec.strip().partition(":")
    family = family.lower()
    if family == "zero":
        return ctx.zeros()
    vals = _floats(body, family)
    if family == "harmonic":
        if len(vals) not in (2, 3):
            raise ConfigTypeError("harmonic takes amp,l[,m]")
        m = int(vals[2]) if len(vals) == 3 else 0
        return renormalize_volume(ctx, vals[0] * ctx.unit(int(vals[1]), m))
    if family == "bubble":
        if len(vals) != ctx.n + 2:
            raise ConfigTypeError(f"bubble takes eps and {ctx.n + 1} centre coordinates")
        return renormalize_volume(ctx, bubble(ctx, MobiusParam(np.array(vals[1:]), vals[0])))
    if family == "random":
        if len(vals) != 2:
            raise ConfigTypeError("random takes amp,lmax")
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(ctx.ncoeffs) * (ctx.degrees <= vals[1]) * (ctx.degrees > 0)
        g = ctx.synthesize(c)
        c *= vals[0] / max(float(np.max(np.abs(g))), 1e-300)
        return renormalize_volume(ctx, c)
    raise ConfigTypeError(f"unknown initial data {spec!r}")


# ---------------------------------------------------------------------------
# snapshots


@dataclass(frozen=True)
class Snapshot:
    n: int
    mode: str
    L: int
    t: float
    dt: float
    step_index: int
    accept_streak: int
    config_hash: str
    coeffs: np.ndarray

    def header(self) -> dict:
        return {
            "format_version": SNAPSHOT_VERSION,
            "n": self.n,
            "mode": self.mode,
            "L": self.L,
            "t": float(self.t).hex(),
            "dt": float(self.dt).hex(),
            "step_index": self.step_index,
            "accept_streak": self.accept_streak,
            "config_hash": self.config_hash,
            "ncoeffs": int(self.coeffs.size),
        }


def snapshot_bytes(s: Snapshot) -> bytes:
    head = json.dumps(s.header(), sort_keys=True).encode()
    body = SNAPSHOT_MAGIC + bytes([SNAPSHOT_VERSION]) + struct.pack("<I", len(head)) + head
    body += np.ascontiguousarray(s.coeffs, dtype="<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def snapshot_from_bytes(data: bytes) -> Snapshot:
    if len(data) < 9 or data[:4] != SNAPSHOT_MAGIC:
        raise CorruptPayload("not a qflow snapshot")
    if data[4] != SNAPSHOT_VERSION:
        raise VersionMismatch(f"snapshot format {data[4]}, this reader handles {SNAPSHOT_VERSION}")
    if len(data) < 9 + 32:
        raise CorruptPayload("snapshot truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptPayload("snapshot checksum mismatch")
    (hlen,) = struct.unpack("<I", body[5:9])
    try:
        head = json.loads(body[9 : 9 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload("unreadable snapshot header") from exc
    payload = body[9 + hlen :]
    if len(payload) != 8 * head["ncoeffs"]:
        raise CorruptPayload("coefficient payload has the wrong length")
    coeffs = np.frombuffer(payload, dtype="<f8").astype(float)
    return Snapshot(
        n=head["n"],
        mode=head["mode"],
        L=head["L"],
        t=float.fromhex(head["t"]),
        dt=float.fromhex(head["dt"]),
        step_index=head["step_index"],
        accept_streak=head["accept_streak"],
        config_hash=head["config_hash"],
        coeffs=coeffs,
    )


def write_snapshot(path, s: Snapshot) -> None:
    Path(path).write_bytes(snapshot_bytes(s))


def read_snapshot(path) -> Snapshot:
    return snapshot_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# diagnostics.csv


def csv_columns(n: int) -> list[str]:
    base = ["t", "dt", "E", "E_f", "alpha", "residual_l2", "max_u", "min_u", "volume_err"]
    return base + [f"theta_{i}" for i in range(n + 1)] + ["r_star"]


def csv_header(n: int) -> str:
    return ",".join(csv_columns(n)) + "\n"


def csv_row(rec) -> str:
    vals = [rec.t, rec.dt, rec.E, rec.E_f, rec.alpha, rec.residual_l2, rec.max_u, rec.min_u, rec.volume_err]
    vals += list(rec.theta)
    vals.append(rec.concentration_radius)
    return ",".join(fmt(v) for v in vals) + "\n"


class DiagnosticsWriter:
    """Streams records to ``diagnostics.csv``; appends when resuming."""

    def __init__(self, path, n: int, append: bool = False):
        self.path = Path(path)
        fresh = not (append and self.path.exists())
        self._fh = open(self.path, "w" if fresh else "a", newline="")
        if fresh:
            self._fh.write(csv_header(n))

    def __call__(self, rec, state=None) -> None:
        self._fh.write(csv_row(rec))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> dict[str, np.ndarray]:
    """Columns of a diagnostics file as float arrays (empty fields become NaN)."""
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    rows = [[float(v) if v else math.nan for v in line.split(",")] for line in lines[1:] if line]
    data = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return {c: data[:, i] for i, c in enumerate(cols)}
