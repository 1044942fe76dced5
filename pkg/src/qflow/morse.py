"""Critical points of a curvature candidate and the Morse-theoretic existence test.

For a candidate f on S^n let gamma_i count the critical points q with
f(q) > 0, Delta f(q) < 0 and Morse index n - i.  If the integer system

    gamma_0 = 1 + k_0,   gamma_i = k_{i-1} + k_i  (1 <= i <= n),   k_n = 0

has no non-negative solution then Q = f is solvable on S^n.  The system has
at most one candidate solution, found by forward recurrence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidateF, sphere_seeds
from .errors import NoAnalyticDerivatives, NonMorseWarning
from .sphere import Mode, SphereContext

__all__ = [
    "CriticalPoint",
    "CriticalSearch",
    "HypothesisCheck",
    "CriterionVerdict",
    "BetaLevels",
    "SampledF",
    "search_critical_points",
    "find_critical_points",
    "gamma_counts",
    "solve_k",
    "morse_polynomial_check",
    "beta_levels",
    "hypothesis_report",
    "criterion",
    "nearest_critical_point",
]

GRAD_TOL = 1e-8
EIG_TOL = 1e-10
LAPLACE_TOL = 1e-8
DEDUP_DIST = 1e-6
LEVEL_TOL = 1e-9


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    f_value: float
    grad_norm: float
    laplacian: float
    morse_index: int
    hessian_eigs: np.ndarray

    @property
    def nondegenerate(self) -> bool:
        return bool(np.all(np.abs(self.hessian_eigs) >= EIG_TOL))


@dataclass(frozen=True)
class CriticalSearch:
    """All critical points found, split by the sign of f."""

    positive: list
    nonpositive: list
    seeds: int
    continuum: bool

    @property
    def points(self) -> list:
        return self.positive


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    required: bool
    detail: str = ""


@dataclass(frozen=True)
class CriterionVerdict:
    gamma: tuple
    k_seq: tuple | None
    solvable: bool
    hypothesis_report: tuple = ()
    k_raw: tuple = field(default=(), repr=False)

    @property
    def guarantees_existence(self) -> bool:
        return not self.solvable

    @property
    def hypotheses_hold(self) -> bool:
        return all(c.passed for c in self.hypothesis_report if c.required)

    @property
    def headline(self) -> str:
        if not self.hypotheses_hold:
            return "hypotheses-violated"
        return "yes" if self.guarantees_existence else "no"


@dataclass(frozen=True)
class BetaLevels:
    values: tuple
    distinct: bool


# ---------------------------------------------------------------------------
# candidates known only through samples


@dataclass(eq=False)
class SampledF(CandidateF):
    """A candidate on S^2 given by grid samples, differentiated numerically.

    The ambient extension is the degree-0 homogeneous one, F(y) = f(y/|y|),
    and its derivatives come from central differences of the spectral
    interpolant.
    """

    ctx: SphereContext = None
    coeffs: np.ndarray = None
    h: float = 1e-4

    analytic = False

    def __post_init__(self):
        if self.ctx is None or self.coeffs is None:
            raise ValueError("SampledF needs a context and coefficients")
        if self.ctx.n > 2 or self.ctx.mode is not Mode.FULL2D:
            raise NoAnalyticDerivatives("sampled candidates are only supported on full S^2 grids")

    @classmethod
    def from_grid(cls, ctx: SphereContext, values: np.ndarray) -> "SampledF":
        return cls(n=ctx.n, ctx=ctx, coeffs=ctx.analyze(values))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        y = x / np.linalg.norm(x, axis=-1, keepdims=True)
        return self.ctx.evaluate(self.coeffs, y)

    def gradient(self, x):
        # all 2(n+1) stencil points in one evaluation
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.n + 1) * self.h
        pts = np.stack([x[..., None, :] + eye, x[..., None, :] - eye], axis=-3)
        v = self.value(pts)
        return (v[..., 0, :] - v[..., 1, :]) / (2 * self.h)

    def hessian(self, x):
        # central second differences, H_ij = [F(++) - F(+-) - F(-+) + F(--)] / 4h^2
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.n + 1) * self.h
        shift = np.stack([eye, -eye])  # (2, d, d)
        pts = x[..., None, None, None, None, :] + shift[:, :, None, None, :] + shift[None, None, :, :, :]
        v = self.value(pts)  # (..., 2, d, 2, d)
        H = (v[..., 0, :, 0, :] - v[..., 0, :, 1, :] - v[..., 1, :, 0, :] + v[..., 1, :, 1, :]) / (4 * self.h**2)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def search_seeds(self, count: int = 400) -> np.ndarray:
        """Grid nodes where |grad f|^2 is locally minimal, plus the axes.

        |grad f|^2 = Delta(f^2)/2 - f Delta f is evaluated spectrally; aliasing
        only perturbs the seeds, which Newton then refines.
        """
        ctx = self.ctx
        fg = ctx.synthesize(self.coeffs)
        g2 = 0.5 * ctx.synthesize(ctx.laplacian(ctx.analyze(fg * fg))) - fg * ctx.synthesize(ctx.laplacian(self.coeffs))
        padded = np.pad(g2, ((1, 1), (0, 0)), mode="edge")
        is_min = np.ones(g2.shape, dtype=bool)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di or dj:
                    nb = np.roll(padded, (-di, -dj), axis=(0, 1))[1:-1]
                    is_min &= g2 <= nb
        cand = ctx.points[is_min]
        order = np.argsort(g2[is_min])[:count]
        return np.concatenate([cand[order], self.special_points()])

    def mean(self):
        return float(self.coeffs[0])


# ---------------------------------------------------------------------------
# critical point search


def _frame(x: np.ndarray) -> np.ndarray:
    d = x.size
    q, _ = np.linalg.qr(np.column_stack([x, np.eye(d)]))
    return q[:, 1:d].T


def _newton(f: CandidateF, x: np.ndarray, max_iter: int = 60, max_step: float = 0.5):
    x = x / np.linalg.norm(x)
    for _ in range(max_iter):
        E = _frame(x)
        g = E @ f.sphere_gradient(x)
        gn = float(np.linalg.norm(g))
        if gn < 1e-13:
            break
        H = E @ f.sphere_hessian(x) @ E.T
        try:
            v = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            v = -np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(v)):
            return None
        norm = float(np.linalg.norm(v))
        if norm > max_step:
            v *= max_step / norm
            norm = max_step
        w = v @ E
        x_new = math.cos(norm) * x + (math.sin(norm) / norm if norm else 1.0) * w
        x_new /= np.linalg.norm(x_new)
        if np.linalg.norm(x_new - x) < 1e-15:
            x = x_new
            break
        x = x_new
    return x


def _classify(f: CandidateF, x: np.ndarray) -> CriticalPoint:
    E = _frame(x)
    eigs = np.linalg.eigvalsh(E @ f.sphere_hessian(x) @ E.T)
    return CriticalPoint(
        location=x,
        f_value=float(f.value(x)),
        grad_norm=float(np.linalg.norm(f.sphere_gradient(x))),
        laplacian=float(f.sphere_laplacian(x)),
        morse_index=int(np.sum(eigs < 0)),
        hessian_eigs=eigs,
    )


def search_critical_points(f: CandidateF, seeds: np.ndarray | None = None, count: int = 400) -> CriticalSearch:
    """Riemannian Newton from many seeds; deduplicated and split by sign of f."""
    if seeds is None:
        seeds = f.search_seeds(count)
    found: list[CriticalPoint] = []
    for s in seeds:
        x = _newton(f, np.asarray(s, dtype=float))
        if x is None:
            continue
        cp = _classify(f, x)
        if cp.grad_norm > GRAD_TOL:
            continue
        if any(np.arccos(np.clip(cp.location @ o.location, -1, 1)) < DEDUP_DIST for o in found):
            continue
        found.append(cp)
    pos = sorted((c for c in found if c.f_value > 0), key=lambda c: -c.f_value)
    neg = sorted((c for c in found if c.f_value <= 0), key=lambda c: -c.f_value)
    # only {f > 0} matters; a continuum there shows up as many distinct hits from
    # generic seeds, or as degenerate points with neighbours close by
    degenerate = [c for c in pos if not c.nondegenerate]
    continuum = (len(seeds) >= 64 and len(pos) > len(seeds) // 4) or any(
        np.arccos(np.clip(a.location @ b.location, -1, 1)) < 0.2
        for a in degenerate
        for b in pos
        if b is not a
    )
    return CriticalSearch(positive=pos, nonpositive=neg, seeds=len(seeds), continuum=continuum)


def find_critical_points(ctx: SphereContext | None, f) -> list[CriticalPoint]:
    """Critical points of f with f > 0, each with Morse index and Laplacian.

    Degenerate Hessians are reported through :class:`NonMorseWarning`.  Plain
    grid samples are accepted on full S^2 contexts only.
    """
    if not isinstance(f, CandidateF):
        if ctx is None or ctx.n > 2 or ctx.mode is not Mode.FULL2D:
            raise NoAnalyticDerivatives("grid-only candidates need a full S^2 context")
        f = SampledF.from_grid(ctx, np.asarray(f, dtype=float))
    res = search_critical_points(f)
    for c in res.positive:
        if not c.nondegenerate:
            warnings.warn(
                f"degenerate Hessian at {np.round(c.location, 6).tolist()} (eigs {c.hessian_eigs})",
                NonMorseWarning,
                stacklevel=2,
            )
    return res.positive


# ---------------------------------------------------------------------------
# the integer system


def gamma_counts(points, n: int) -> tuple:
    """gamma_i = #{q : f(q) > 0, Delta f(q) < 0, ind(f, q) = n - i}."""
    gamma = [0] * (n + 1)
    for c in points:
        if c.f_value > 0 and c.laplacian < 0 and 0 <= c.morse_index <= n:
            gamma[n - c.morse_index] += 1
    return tuple(gamma)


def solve_k(gamma, n: int | None = None) -> CriterionVerdict:
    """Forward recurrence k_0 = gamma_0 - 1, k_i = gamma_i - k_{i-1}."""
    gamma = tuple(int(g) for g in gamma)
    n = len(gamma) - 1 if n is None else n
    if len(gamma) != n + 1 or any(g < 0 for g in gamma):
        raise ValueError(f"gamma must hold {n + 1} non-negative integers")
    k = [gamma[0] - 1]
    for i in range(1, n + 1):
        k.append(gamma[i] - k[-1])
    solvable = all(v >= 0 for v in k) and k[n] == 0
    return CriterionVerdict(gamma=gamma, k_seq=tuple(k) if solvable else None, solvable=solvable, k_raw=tuple(k))


def morse_polynomial_check(gamma, k_seq) -> bool:
    """sum_j gamma_j s^j == 1 + (1 + s) sum_j k_j s^j, coefficient by coefficient."""
    if k_seq is None:
        return False
    lhs = np.zeros(max(len(gamma), len(k_seq) + 1), dtype=object)
    rhs = np.zeros_like(lhs)
    lhs[: len(gamma)] = [int(g) for g in gamma]
    rhs[0] += 1
    for j, kj in enumerate(k_seq):
        rhs[j] += int(kj)
        rhs[j + 1] += int(kj)
    return bool(all(a == b for a, b in zip(lhs, rhs)))


def beta_levels(points, n: int) -> BetaLevels:
    """beta = -(n-1)! log f(q), sorted, with a distinctness flag."""
    fact = math.factorial(n - 1)
    vals = []
    for c in points:
        fv = c.f_value if hasattr(c, "f_value") else float(c)
        if not fv > 0:
            raise ValueError("critical levels need f > 0")
        vals.append(-fact * math.log(fv))
    vals.sort()
    distinct = all(b - a > LEVEL_TOL for a, b in zip(vals, vals[1:]))
    return BetaLevels(tuple(vals), distinct)


# ---------------------------------------------------------------------------
# hypotheses and the verdict


def _range(f: CandidateF) -> tuple[float, float]:
    x = np.concatenate([sphere_seeds(f.n, 2000), f.special_points()])
    v = f.value(x)
    lo, hi = float(v.min()), float(v.max())
    if hasattr(f, "max_value"):
        hi = max(hi, f.max_value())
    return lo, hi


def hypothesis_report(f: CandidateF, search: CriticalSearch) -> tuple:
    n = f.n
    lo, hi = _range(f)
    mean = f.mean()
    pos = search.positive
    bad_morse = [c for c in pos if not c.nondegenerate]
    flat = [c for c in pos if abs(c.laplacian) < LAPLACE_TOL]
    checks = [
        HypothesisCheck("positive mean", mean > 0, True, f"mean f = {mean:.6g}"),
        HypothesisCheck(
            "isolated critical points in {f > 0}",
            not search.continuum and len(pos) > 0,
            True,
            "continuum of critical points detected" if search.continuum else f"{len(pos)} points",
        ),
        HypothesisCheck(
            "non-degeneracy (Delta f)^2 + |grad f|^2 != 0",
            not flat,
            True,
            f"{len(flat)} critical points with |Delta f| < {LAPLACE_TOL}",
        ),
        HypothesisCheck(
            "Morse non-degenerate Hessian",
            not bad_morse,
            True,
            f"{len(bad_morse)} degenerate critical points",
        ),
        HypothesisCheck("sign change", lo < 0 < hi, False, f"min f ~ {lo:.6g}, max f ~ {hi:.6g}"),
        HypothesisCheck("dimension n >= 4", n >= 4, False, f"n = {n}"),
    ]
    if pos:
        levels = beta_levels(pos, n)
        checks.append(HypothesisCheck("distinct critical levels", levels.distinct, False, ""))
    return tuple(checks)


def criterion(f: CandidateF, search: CriticalSearch | None = None) -> tuple[CriterionVerdict, CriticalSearch]:
    """Full verdict for a candidate: gamma, k sequence and hypothesis checklist."""
    if not getattr(f, "analytic", False) and f.n > 2:
        raise NoAnalyticDerivatives(f"{f.describe()} has no closed-form derivatives")
    if search is None:
        search = search_critical_points(f)
    core = solve_k(gamma_counts(search.positive, f.n), f.n)
    verdict = CriterionVerdict(
        gamma=core.gamma,
        k_seq=core.k_seq,
        solvable=core.solvable,
        hypothesis_report=hypothesis_report(f, search),
        k_raw=core.k_raw,
    )
    return verdict, search


def nearest_critical_point(points, p: np.ndarray) -> CriticalPoint | None:
    if not points:
        return None
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    return max(points, key=lambda c: float(c.location @ p))
