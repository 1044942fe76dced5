import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from qflow.blowup import tangent_frame
from qflow.candidates import AffineF, ConstantF
from qflow.conformal import PaneitzMultiplier, energy_f, exp_nu, q_curvature, renormalize_volume
from qflow.mobius import (
    MobiusParam,
    apply_map,
    bubble,
    bubble_energy_f,
    bubble_values,
    center_of_mass,
    normalize_com,
    pullback,
    shadow_point,
)
from qflow.sphere import make_context

NORTH = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def axi200():
    return make_context(2, "axisymmetric", 200)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _fd_log_jacobian(p, x, h=1e-6):
    """(1/n) log |det d phi(x)| by central differences in tangent frames."""
    E, Ey = tangent_frame(x), tangent_frame(apply_map(p, x))
    J = np.empty((len(Ey), len(E)))
    for j, e in enumerate(E):
        fwd = apply_map(p, _unit(x + h * e))
        bwd = apply_map(p, _unit(x - h * e))
        J[:, j] = Ey @ (fwd - bwd) / (2 * h)
    return math.log(abs(np.linalg.det(J))) / len(E)


def test_identity_dilation_is_zero(ctx2):
    assert np.max(np.abs(bubble(ctx2, MobiusParam(NORTH, 1.0)))) <= 1e-14


@pytest.mark.parametrize("eps", [0.05, 0.37, 1.0, 3.0])
def test_value_at_centre_matches_jacobian(eps, rng):
    q = _unit(rng.standard_normal(3))
    p = MobiusParam(q, eps)
    assert bubble_values(p, q) == pytest.approx(math.log(1.0 / eps), abs=1e-12)
    assert _fd_log_jacobian(p, q) == pytest.approx(math.log(1.0 / eps), abs=1e-8)
    for x in rng.standard_normal((5, 3)):
        x = _unit(x)
        assert _fd_log_jacobian(p, x) == pytest.approx(float(bubble_values(p, x)), abs=1e-8)


def test_map_fixes_centre_and_inverse_undoes(rng):
    p = MobiusParam(rng.standard_normal(3), 0.4)
    x = rng.standard_normal((20, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.allclose(apply_map(p, p.q), p.q)
    assert np.allclose(apply_map(p.inverse(), apply_map(p, x)), x, atol=1e-12)
    assert np.allclose(np.linalg.norm(apply_map(p, x), axis=1), 1.0)
    assert np.allclose(MobiusParam.from_ball(p.ball_point).ball_point, p.ball_point)
    assert np.allclose(MobiusParam.from_ball(-p.ball_point).ball_point, p.inverse().ball_point)


def test_param_validation():
    with pytest.raises(ValueError):
        MobiusParam(np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        MobiusParam(NORTH, 0.0)
    with pytest.raises(ValueError):
        MobiusParam.from_ball(np.array([0.0, 0.0, 1.0]))


def test_bubble_volume_invariance(ctx2_64, axi200, rng):
    for q in [NORTH, rng.standard_normal(3), rng.standard_normal(3)]:
        for eps in (1.0, 0.6, 0.3, 0.2):
            _, e = exp_nu(ctx2_64, bubble(ctx2_64, MobiusParam(q, eps)))
            assert ctx2_64.mean(e) == pytest.approx(1.0, abs=1e-10)
    for eps in (0.1, 0.05):
        _, e = exp_nu(axi200, bubble(axi200, MobiusParam(-NORTH, eps)))
        assert axi200.mean(e) == pytest.approx(1.0, abs=1e-10)


def test_axisymmetric_bubbles_need_axis(ctx4):
    with pytest.raises(ValueError):
        bubble(ctx4, MobiusParam(np.array([1.0, 0, 0, 0, 0]), 0.5))


def test_pullback_examples(ctx2_64, rng):
    ctx = ctx2_64
    p = MobiusParam(rng.standard_normal(3), 0.6)
    assert np.allclose(pullback(ctx, ctx.zeros(), p), bubble(ctx, p), atol=1e-12)
    u = renormalize_volume(ctx, random_field(ctx, rng, 0.5, 4))
    assert np.max(np.abs(pullback(ctx, u, MobiusParam(NORTH, 1.0)) - u)) <= 1e-12
    for _ in range(3):
        q = MobiusParam(rng.standard_normal(3), rng.uniform(0.5, 1.5))
        _, e = exp_nu(ctx, pullback(ctx, u, q))
        assert ctx.mean(e) == pytest.approx(1.0, abs=1e-9)


def test_pullback_is_natural_for_curvature(ctx2_64, rng):
    # Q of the pulled back metric is Q composed with the map
    ctx = ctx2_64
    mult = PaneitzMultiplier.for_context(ctx)
    u = renormalize_volume(ctx, random_field(ctx, rng, 0.5, 4))
    p = MobiusParam(rng.standard_normal(3), 0.7)
    Qv = q_curvature(ctx, mult, pullback(ctx, u, p))
    Qu = ctx.evaluate(ctx.analyze(q_curvature(ctx, mult, u)), apply_map(p, ctx.points))
    assert np.max(np.abs(Qv - Qu)) <= 1e-8


def test_energy_invariant_for_constant_f(ctx2_64, rng):
    ctx = ctx2_64
    mult = PaneitzMultiplier.for_context(ctx)
    f = ConstantF(2, 1.0)
    u = renormalize_volume(ctx, random_field(ctx, rng, 0.5, 4))
    v = pullback(ctx, u, MobiusParam(rng.standard_normal(3), 0.7))
    assert energy_f(ctx, mult, f, v).E_f == pytest.approx(energy_f(ctx, mult, f, u).E_f, abs=1e-10)


def test_center_of_mass(ctx2, ctx2_64, rng):
    assert np.max(np.abs(center_of_mass(ctx2, ctx2.zeros()))) <= 1e-13
    q = _unit(rng.standard_normal(3))
    c = center_of_mass(ctx2_64, bubble(ctx2_64, MobiusParam(q, 0.2)))
    assert np.linalg.norm(np.cross(c, q)) <= 1e-12 and c @ q > 0
    # even degrees only: antipodally symmetric
    u = random_field(ctx2, rng, 1.0, 6) * (ctx2.degrees % 2 == 0)
    assert np.max(np.abs(center_of_mass(ctx2, u))) <= 1e-12


def test_normalize_round_state(ctx2):
    st_ = normalize_com(ctx2, ctx2.zeros())
    assert st_.iterations == 0
    assert np.allclose(st_.phi.ball_point, 0.0)
    assert np.allclose(st_.theta, 0.0, atol=1e-14)


def test_normalize_bubble_recovers_inverse(axi200):
    p = MobiusParam(NORTH, 0.1)
    st_ = normalize_com(axi200, bubble(axi200, p))
    assert st_.com_residual <= 1e-8
    # the normalising map undoes the dilation: (south, 0.1) is the same map as (north, 10)
    assert np.allclose(st_.phi.ball_point, -p.ball_point, atol=1e-6)
    assert 1.0 / st_.phi.eps == pytest.approx(10.0, rel=1e-6)
    assert np.max(np.abs(axi200.synthesize(st_.v))) <= 1e-8
    assert np.max(np.abs(center_of_mass(axi200, st_.v))) <= 1e-8


def test_normalize_random_states_converge_fast(ctx2, rng):
    for _ in range(10):
        u = random_field(ctx2, rng, rng.uniform(0.5, 3.0), 4)
        st_ = normalize_com(ctx2, u, compute_v=False)
        assert st_.iterations <= 30 and st_.com_residual <= 1e-8


def test_normalized_metric_has_zero_centre(ctx2_64, rng):
    # the pulled back factor itself is balanced when the grid resolves it
    for amp in (0.5, 1.0, 2.0):
        st_ = normalize_com(ctx2_64, random_field(ctx2_64, rng, amp, 4))
        assert np.max(np.abs(center_of_mass(ctx2_64, st_.v))) <= 1e-10


def test_shadow_point():
    assert np.allclose(shadow_point(MobiusParam(NORTH, 1.0)), 0.0, atol=1e-14)
    # phi_{q,eps} pushes mass to -q as eps -> 0, and to +q as eps -> infinity
    assert shadow_point(MobiusParam(NORTH, 1e-3))[2] == pytest.approx(-1.0, abs=1e-3)
    assert shadow_point(MobiusParam(NORTH, 10.0))[2] > 0.9


def test_bubble_energy_matches_spectral(ctx2_64):
    # semi-analytic E_f against the fully resolved spectral energy
    f = AffineF(2, 0.5, 1.0, 3)
    mult = PaneitzMultiplier.for_context(ctx2_64)
    for eps in (0.8, 0.5, 0.3):
        p = MobiusParam(_unit([0.2, 0.1, 1.0]), eps)
        spectral = energy_f(ctx2_64, mult, f, bubble(ctx2_64, p)).E_f
        assert bubble_energy_f(ctx2_64, f, p) == pytest.approx(spectral, abs=1e-9)


@pytest.mark.parametrize("q", [[0, 0, 1], [0.3, -0.2, 0.5], [1, 1, 1]])
def test_bubble_energy_degenerates_to_level(ctx2_64, q):
    f = AffineF(2, 0.5, 1.0, 3)
    q = _unit(q)
    ef = bubble_energy_f(ctx2_64, f, MobiusParam(q, 1e-3))
    assert ef == pytest.approx(-math.log(float(f.value(q))), abs=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 5.0))
def test_bubble_volume_property(a, b, c, eps):
    if a * a + b * b + c * c < 1e-3:
        return
    ctx = _ctx64()
    _, e = exp_nu(ctx, bubble(ctx, MobiusParam(np.array([a, b, c]), eps)))
    assert ctx.mean(e) == pytest.approx(1.0, abs=1e-9)


_CTX = {}


def _ctx64():
    if not _CTX:
        _CTX["c"] = make_context(2, "full2d", 64)
    return _CTX["c"]
