import math

import numpy as np
import pytest
from scipy.special import betaincinv

from conftest import random_field
from qflow.blowup import (
    Thresholds,
    concentration_scan,
    default_radii,
    detect,
    first_radius,
    fit_bubble,
    residual_l2,
    tangent_frame,
)
from qflow.candidates import AffineF, ConstantF
from qflow.conformal import renormalize_volume
from qflow.errors import EmptyRadii
from qflow.mobius import MobiusParam, bubble
from qflow.sphere import make_context


@pytest.fixture(scope="module")
def axi2():
    return make_context(2, "axisymmetric", 200)


@pytest.fixture(scope="module")
def axi2_400():
    return make_context(2, "axisymmetric", 400)


@pytest.fixture(scope="module")
def axi4():
    return make_context(4, "axisymmetric", 200)


def _north(n):
    return np.eye(n + 1)[-1]


def _quarter_radius(n, eps):
    """Radius of the ball around q holding a quarter of the volume of bubble(q, eps).

    The dilation maps the cap of radius r to the cap of radius R with
    tan(R/2) = tan(r/2)/eps, and a cap of radius R on S^n holds the fraction
    I_{(1 - cos R)/2}(n/2, n/2) of the volume.
    """
    x = betaincinv(n / 2, n / 2, 0.25)
    R = math.acos(1.0 - 2.0 * x)
    return 2.0 * math.atan(eps * math.tan(R / 2))


def _radius_tolerance(ctx, r):
    radii = default_radii()
    above = radii[radii >= r]
    gap = above[0] - radii[radii < r][-1] if above.size and (radii < r).any() else 0.0
    return gap + ctx.grid_spacing


def test_residual_examples(ctx2):
    assert residual_l2(ctx2, ConstantF(2, 1.0), ctx2.zeros()) <= 1e-20
    # alpha = 2, Q = 1: int (2f - 1)^2 = int 4 x_3^2 = 16 pi / 3
    assert residual_l2(ctx2, AffineF(2, 0.5, 1.0, 3), ctx2.zeros()) == pytest.approx(16.755160819145562, abs=1e-8)
    assert 16 * math.pi / 3 == pytest.approx(16.755160819145562, abs=1e-14)


@pytest.mark.parametrize("mode", ["full2d", "axisymmetric"])
def test_scan_round_state_hits_quarter_at_pi_over_3(mode):
    ctx = make_context(2, mode, 64)
    probe = concentration_scan(ctx, ctx.zeros())
    assert probe.threshold == pytest.approx(math.pi)
    assert abs(probe.r_star - math.pi / 3) <= ctx.grid_spacing
    # the half level is reached at the equator
    assert abs(probe.r_star_half - math.pi / 2) <= ctx.grid_spacing + 0.06
    assert probe.total == pytest.approx(4 * math.pi, abs=1e-10)
    assert _quarter_radius(2, 1.0) == pytest.approx(math.pi / 3)


def test_scan_on_bubbles(ctx2_64, axi2, axi4, rng):
    q = rng.standard_normal(3)
    cases = [
        (ctx2_64, MobiusParam(_north(2), 0.1)),
        (ctx2_64, MobiusParam(q, 0.15)),
        (axi2, MobiusParam(_north(2), 0.05)),
        (axi4, MobiusParam(_north(4), 0.1)),
    ]
    for ctx, p in cases:
        u = bubble(ctx, p)
        probe = concentration_scan(ctx, u)
        r = _quarter_radius(ctx.n, p.eps)
        assert abs(probe.r_star - r) <= _radius_tolerance(ctx, r)
        assert math.acos(min(1.0, float(probe.p_star @ p.q))) <= 2 * ctx.grid_spacing
        # the bisection in the flow agrees with the full scan
        r_b, p_b = first_radius(ctx, u)
        assert r_b == probe.r_star
        assert np.allclose(p_b, probe.p_star)


def test_full_sphere_mass_bounds_gauss_total(ctx2, rng):
    # |Q| >= Q, so the whole-sphere mass is at least (n-1)! omega_n
    for _ in range(5):
        u = renormalize_volume(ctx2, random_field(ctx2, rng, 1.0, 6))
        probe = concentration_scan(ctx2, u, radii=[math.pi])
        assert probe.masses[-1] >= 4 * math.pi - 1e-8


def test_scan_argument_errors(ctx2):
    with pytest.raises(EmptyRadii):
        concentration_scan(ctx2, ctx2.zeros(), radii=[])
    with pytest.raises(EmptyRadii):
        first_radius(ctx2, ctx2.zeros(), radii=[])
    with pytest.raises(ValueError):
        concentration_scan(ctx2, ctx2.zeros(), radii=[0.5, 0.2])


def test_detect(ctx2, axi2_400):
    assert not detect(ctx2, ctx2.zeros())
    u = bubble(axi2_400, MobiusParam(_north(2), 0.02))
    sig = detect(axi2_400, u)
    assert sig.concentrating and "r_star" in sig.reason
    assert sig.probe.p_star[-1] == pytest.approx(1.0)
    # with u_blow below max u the amplitude test fires first
    assert "max u" in detect(axi2_400, u, Thresholds(u_blow=3.0)).reason


def test_detect_spares_stationary_states(axi2):
    # a bubble with f constant solves Q = alpha f exactly, so a small r_star alone gives no verdict
    u = bubble(axi2, MobiusParam(_north(2), 0.1))
    th = Thresholds(r_min=0.2)
    assert concentration_scan(axi2, u).r_star <= th.r_min
    assert residual_l2(axi2, ConstantF(2, 1.0), u) <= 1e-10
    assert not detect(axi2, u, th, f=ConstantF(2, 1.0))
    assert detect(axi2, u, th, f=AffineF(2, 0.5, 1.0, 3))


def test_fit_recovers_bubble(ctx2_64, axi2, axi4, rng):
    q = rng.standard_normal(3)
    cases = [
        (ctx2_64, MobiusParam(_north(2), 0.1)),
        (ctx2_64, MobiusParam(q, 0.15)),
        (axi2, MobiusParam(_north(2), 0.05)),
        (axi4, MobiusParam(_north(4), 0.1)),
    ]
    for ctx, p in cases:
        fit = fit_bubble(ctx, bubble(ctx, p), p.q)
        assert fit.lam == pytest.approx(1.0 / p.eps, rel=1e-2)
        assert fit.q_inf == pytest.approx(ctx.fact, rel=1e-2)
        assert np.max(np.abs(fit.z0)) <= 1e-6


def test_fit_scale_follows_dilation(axi2):
    lams = [fit_bubble(axi2, bubble(axi2, MobiusParam(_north(2), e)), _north(2)).lam for e in (0.2, 0.1, 0.05)]
    assert lams[1] / lams[0] == pytest.approx(2.0, rel=1e-3)
    assert lams[2] / lams[1] == pytest.approx(2.0, rel=1e-3)


def test_fit_on_round_state_gives_unit_scale(ctx2):
    # the round metric is itself the eps = 1 bubble, so the fit reports lambda = 1
    fit = fit_bubble(ctx2, ctx2.zeros(), _north(2))
    assert fit.lam == pytest.approx(1.0, abs=1e-8)
    assert fit.q_inf == pytest.approx(1.0, abs=1e-8)


def test_fit_offset_centre(ctx2_64):
    # fitting slightly off the true centre is absorbed by z0
    p = MobiusParam(_north(2), 0.1)
    tilt = np.array([0.02, 0.0, 1.0])
    fit = fit_bubble(ctx2_64, bubble(ctx2_64, p), tilt)
    assert fit.lam == pytest.approx(10.0, rel=1e-2)
    assert np.linalg.norm(fit.z0) > 1e-3


def test_axisymmetric_fit_needs_axis(axi2):
    with pytest.raises(ValueError):
        fit_bubble(axi2, axi2.zeros(), np.array([1.0, 0.0, 0.0]))


def test_tangent_frame_is_orthonormal(rng):
    for n in (2, 4):
        for p in [_north(n), -_north(n), *rng.standard_normal((5, n + 1))]:
            p = p / np.linalg.norm(p)
            E = tangent_frame(p)
            assert E.shape == (n, n + 1)
            assert np.allclose(E @ E.T, np.eye(n), atol=1e-13)
            assert np.allclose(E @ p, 0.0, atol=1e-13)
