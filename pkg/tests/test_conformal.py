import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from qflow.candidates import AffineF, ConstantF
from qflow.conformal import (
    PaneitzMultiplier,
    alpha,
    curvature_residual,
    energy,
    energy_f,
    exp_nu,
    finalize_solution,
    in_class_cf,
    paneitz_apply,
    q_curvature,
    renormalize_volume,
)
from qflow.errors import ConformalFactorOverflow, NonpositiveFMass, ShapeMismatch
from qflow.sphere import make_context


@pytest.fixture(scope="module")
def mult4(ctx4):
    return PaneitzMultiplier.for_context(ctx4)


def test_multiplier_values():
    assert list(PaneitzMultiplier.build(2, 8).mu[:4]) == [0, 2, 6, 12]
    assert list(PaneitzMultiplier.build(4, 8).mu[:3]) == [0, 24, 10 * 12]


def test_paneitz_on_basis(ctx2, mult2, ctx4, mult4):
    assert np.all(paneitz_apply(ctx2, mult2, ctx2.unit(0)) == 0)
    assert np.allclose(paneitz_apply(ctx2, mult2, ctx2.unit(2, 1)), 6 * ctx2.unit(2, 1))
    assert np.allclose(paneitz_apply(ctx4, mult4, ctx4.unit(1)), 24 * ctx4.unit(1))


def test_multiplier_context_mismatch(ctx2):
    with pytest.raises(ShapeMismatch):
        PaneitzMultiplier.build(2, 16).per_coeff(ctx2)


def test_q_curvature_round_and_scaled(ctx2, mult2, ctx4, mult4):
    assert np.allclose(q_curvature(ctx2, mult2, ctx2.zeros()), 1.0, atol=1e-14)
    assert np.allclose(q_curvature(ctx4, mult4, ctx4.zeros()), 6.0, atol=1e-13)
    c = 0.3
    u = c * ctx4.unit(0)
    assert np.allclose(q_curvature(ctx4, mult4, u), 6.0 * math.exp(-4 * c), atol=1e-13)


def test_gauss_constraint_random(ctx2, mult2, ctx4, mult4, rng):
    for ctx, mult in ((ctx2, mult2), (ctx4, mult4)):
        for _ in range(10):
            u = random_field(ctx, rng, amp=0.5, lmax=12)
            _, e = exp_nu(ctx, u)
            assert ctx.mean(q_curvature(ctx, mult, u) * e) == pytest.approx(ctx.fact, abs=1e-8)


def test_alpha_examples(ctx2, ctx4):
    assert alpha(ctx2, ConstantF(2, 1.0), ctx2.zeros()) == pytest.approx(1.0, abs=1e-14)
    assert alpha(ctx2, AffineF(2, 0.5, 1.0, 3), ctx2.zeros()) == pytest.approx(2.0, abs=1e-12)
    assert alpha(ctx4, ConstantF(4, 6.0), ctx4.zeros()) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(NonpositiveFMass):
        alpha(ctx2, AffineF(2, -1.0, 0.1, 3), ctx2.zeros())


def test_energy_examples(ctx2, mult2, ctx4, mult4):
    assert energy(ctx2, mult2, ctx2.zeros()) == 0.0
    c = 0.7
    assert energy(ctx2, mult2, c * ctx2.unit(0)) == pytest.approx(2 * 1 * c, abs=1e-14)
    assert energy(ctx4, mult4, c * ctx4.unit(0)) == pytest.approx(4 * 6 * c, abs=1e-13)


def test_energy_matches_grid_quadrature(ctx2, mult2, rng):
    # coefficient-space energy against the grid form (n/2) mean(u P u + 2 (n-1)! u)
    u = random_field(ctx2, rng, amp=1.0, lmax=10)
    ug = ctx2.synthesize(u)
    pu = ctx2.synthesize(paneitz_apply(ctx2, mult2, u))
    grid = 0.5 * 2 * ctx2.mean(ug * pu + 2 * ug)
    assert energy(ctx2, mult2, u) == pytest.approx(grid, abs=1e-12)


def test_beckner_nonnegative(ctx2, mult2, ctx4, mult4, rng):
    for ctx, mult in ((ctx2, mult2), (ctx4, mult4)):
        for _ in range(20):
            u = renormalize_volume(ctx, random_field(ctx, rng, amp=rng.uniform(0.1, 2.0), lmax=10))
            assert energy(ctx, mult, u) >= -1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 2.5), st.integers(1, 16))
def test_beckner_nonnegative_property(seed, amp, lmax):
    ctx, mult = _ctx16()
    u = renormalize_volume(ctx, random_field(ctx, np.random.default_rng(seed), amp, lmax))
    assert energy(ctx, mult, u) >= -1e-8


def test_energy_f_examples(ctx2, mult2, ctx4, mult4):
    rep = energy_f(ctx2, mult2, AffineF(2, 0.5, 1.0, 3), ctx2.zeros())
    assert rep.E_f == pytest.approx(0.6931471805599453, abs=1e-10)
    assert rep.alpha == pytest.approx(2.0, abs=1e-12)
    rep4 = energy_f(ctx4, mult4, ConstantF(4, 6.0), ctx4.zeros())
    assert rep4.E_f == pytest.approx(-6 * math.log(6), abs=1e-12)


def test_renormalize_volume(ctx2, rng):
    u = ctx2.zeros()
    assert np.array_equal(renormalize_volume(ctx2, u), u)
    assert np.max(np.abs(renormalize_volume(ctx2, 0.8 * ctx2.unit(0)))) <= 1e-15
    for _ in range(5):
        v = renormalize_volume(ctx2, random_field(ctx2, rng, 1.5, 8))
        _, e = exp_nu(ctx2, v)
        assert ctx2.mean(e) == pytest.approx(1.0, abs=1e-13)


def test_finalize_solution(ctx2, mult2):
    u = ctx2.zeros()
    assert np.array_equal(finalize_solution(ctx2, u, 1.0), u)
    v = finalize_solution(ctx2, u, 4.0)
    assert np.allclose(ctx2.synthesize(v), math.log(2.0), atol=1e-14)
    assert np.allclose(q_curvature(ctx2, mult2, v), 0.25, atol=1e-14)
    with pytest.raises(ValueError):
        finalize_solution(ctx2, u, 0.0)


def test_in_class(ctx2):
    u = ctx2.zeros()
    assert in_class_cf(ctx2, AffineF(2, 0.5, 1.0, 3), u)
    assert not in_class_cf(ctx2, AffineF(2, -1.0, 0.1, 3), u)
    assert not in_class_cf(ctx2, ConstantF(2, 1.0), 0.2 * ctx2.unit(0))


def test_overflow_guard(ctx2):
    with pytest.raises(ConformalFactorOverflow):
        exp_nu(ctx2, 200.0 * ctx2.unit(0))


def test_curvature_residual_round(ctx2, mult2):
    assert curvature_residual(ctx2, mult2, ConstantF(2, 1.0), ctx2.zeros()) <= 1e-20


_CTX16 = {}


def _ctx16():
    if not _CTX16:
        ctx = make_context(2, "full2d", 16)
        _CTX16["v"] = (ctx, PaneitzMultiplier.for_context(ctx))
    return _CTX16["v"]
