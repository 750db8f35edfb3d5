import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from coulombgap.errors import OutsideDomain
from coulombgap.fluctuation import (
    GapContext,
    RadialTestFunction,
    constant_function,
    decompose_radial,
    droplet_edges,
    ef_vf,
    equilibrium_integral,
    exact_linear_cgf,
    exact_linear_moments,
    log_function,
    mean_dual,
    neumann_jump_L,
    poisson_modify,
    power_function,
    predict_total,
    step_function,
)
from coulombgap.orthopoly import PerturbedWeight, SmoothStep
from coulombgap.potential import Piece, PowerProfile, RadialPotential, ginibre
from coulombgap.sampler import bootstrap_se, build_sampler, empirical_cgf, sample_linear_stat


@pytest.fixture(scope="module")
def gap_ctx(gap_pot):
    return GapContext.from_potential(gap_pot)


@pytest.fixture(scope="module")
def disk_ctx():
    return GapContext.from_potential(ginibre())


def quiet(func, *args):
    # scipy.quad may warn on the kinked step pieces; values are still checked
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return func(*args)


def gap_bump() -> RadialTestFunction:
    """Smooth bump supported strictly inside the gap (1, 1.5)."""
    return step_function(SmoothStep(1.05, 1.15)) - step_function(SmoothStep(1.3, 1.45))


# -- Poisson modification -------------------------------------------------------------


def test_droplet_geometry(gap_ctx):
    d = gap_ctx.droplet
    assert d.components[0] == pytest.approx((0.0, 1.0), abs=1e-12)
    assert d.components[1][0] == pytest.approx(1.5, abs=1e-12)
    assert [e.label for e in droplet_edges(d)] == ["b0", "a1", "b1"]


def test_log_is_already_harmonic(gap_ctx):
    ps = poisson_modify(log_function(), gap_ctx.droplet)
    (_, _, a, b), = ps.gaps
    assert a == pytest.approx(0.0, abs=1e-14) and b == pytest.approx(1.0, rel=1e-14)
    assert ps.continuity_defect() < 1e-12


def test_constant_extends_to_itself(gap_ctx):
    ps = poisson_modify(constant_function(2.5), gap_ctx.droplet)
    r = np.array([0.5, 1.2, 1.51, 3.0])
    assert np.allclose(ps(r), 2.5, atol=0)


def test_square_log_coefficient_closed_form(gap_ctx):
    d = gap_ctx.droplet
    b0, a1 = d.components[0][1], d.components[1][0]
    ps = poisson_modify(power_function(2), d)
    assert ps.log_coefficients[0] == pytest.approx((a1**2 - b0**2) / math.log(a1 / b0), rel=1e-12)
    assert ps.exterior == pytest.approx(d.outer_edge**2, rel=1e-14)
    assert ps.continuity_defect() < 1e-12


# -- decomposition ------------------------------------------------------------------


def test_square_has_coefficient_one_and_a_quarter(gap_ctx):
    dec = decompose_radial(power_function(2), gap_ctx.droplet, gap_ctx.omega)
    assert dec.lam == pytest.approx(1.25, abs=1e-12)


def test_constant_has_no_step_part(gap_ctx):
    assert decompose_radial(constant_function(3.0), gap_ctx.droplet, gap_ctx.omega).lam == 0.0


def test_step_decomposes_to_zero(gap_ctx):
    omega = gap_ctx.omega
    dec = decompose_radial(step_function(omega), gap_ctx.droplet, omega)
    assert dec.lam == pytest.approx(1.0, abs=1e-14)
    r = np.linspace(0.01, 1.8, 300)
    assert np.max(np.abs(dec.f1(r))) < 1e-14
    assert quiet(ef_vf, dec.f1, gap_ctx.pot, gap_ctx.droplet) == pytest.approx((0.0, 0.0), abs=1e-12)


@pytest.mark.parametrize("f", [power_function(2), power_function(1, 0.3), power_function(3, -1.0)])
def test_decomposition_reconstructs(gap_ctx, f):
    dec = decompose_radial(f, gap_ctx.droplet, gap_ctx.omega)
    r = np.linspace(0.01, 1.8, 500)
    assert np.max(np.abs(dec.f1(r) + dec.lam * dec.omega(r) - f(r))) < 1e-12
    # f1 has no log|z| part across the gap
    assert abs(poisson_modify(dec.f1, gap_ctx.droplet).log_coefficients[0]) < 1e-12


def test_decomposition_needs_step_inside_gap(gap_ctx):
    with pytest.raises(ValueError):
        decompose_radial(power_function(2), gap_ctx.droplet, SmoothStep(0.5, 1.2))


# -- Neumann jump -------------------------------------------------------------------


@pytest.mark.parametrize("edge", ["b0", "a1", "b1"])
def test_neumann_jump_dual_path(gap_ctx, edge):
    closed = neumann_jump_L(gap_ctx.pot, gap_ctx.droplet, edge)
    fd = neumann_jump_L(gap_ctx.pot, gap_ctx.droplet, edge, method="fd")
    assert closed == pytest.approx(fd, abs=1e-8)


def test_neumann_jump_vanishes_for_constant_laplacian(disk_ctx):
    assert neumann_jump_L(disk_ctx.pot, disk_ctx.droplet, "b0") == 0.0


def test_neumann_jump_sign_for_increasing_laplacian():
    # Q = r^4: Delta Q = 4 r^2, droplet radius 2^{-1/4}, flat exterior extension
    pot = RadialPotential([Piece(0.0, 3.0, PowerProfile(1.0, 4.0))])
    ctx = GapContext.from_potential(pot)
    radius = ctx.droplet.outer_edge
    assert radius == pytest.approx(2.0**-0.25, rel=1e-10)
    jump = neumann_jump_L(pot, ctx.droplet, "b0")
    assert jump < 0.0
    assert jump == pytest.approx(-2.0 / radius, rel=1e-10)


def test_neumann_jump_unknown_edge(gap_ctx):
    with pytest.raises(OutsideDomain):
        neumann_jump_L(gap_ctx.pot, gap_ctx.droplet, "b7")
    with pytest.raises(ValueError):
        neumann_jump_L(gap_ctx.pot, gap_ctx.droplet, "b0", method="spline")


# -- mean and variance --------------------------------------------------------------


def test_square_on_gap_potential(gap_ctx):
    dec = decompose_radial(power_function(2), gap_ctx.droplet, gap_ctx.omega)
    e_f, v_f = quiet(ef_vf, dec.f1, gap_ctx.pot, gap_ctx.droplet)
    assert e_f == pytest.approx(quiet(mean_dual, dec.f1, gap_ctx.pot, gap_ctx.droplet), abs=1e-10)
    # f1 = r^2 on the inner disk and r^2 - 1.25 on the ring, no gap term
    ring = gap_ctx.droplet.components[1]
    expected_v = 0.5 * (integrate.quad(lambda r: 4 * r**3, 0, 1)[0] + integrate.quad(lambda r: 4 * r**3, *ring)[0])
    assert v_f == pytest.approx(expected_v, rel=1e-10)


def test_constant_laplacian_constant_function(disk_ctx):
    assert ef_vf(constant_function(1.7), disk_ctx.pot, disk_ctx.droplet) == pytest.approx((0.0, 0.0), abs=1e-14)


def test_ginibre_square_matches_gamma_limits(disk_ctx):
    # sum |z_j|^2 is a sum of Gamma(j+1, 1/n): mean (n+1)/2, variance (n+1)/(2n)
    f = power_function(2)
    e_f, v_f = ef_vf(f, disk_ctx.pot, disk_ctx.droplet)
    n = 1024
    assert equilibrium_integral(f, disk_ctx.pot, disk_ctx.droplet) == pytest.approx(0.5, abs=1e-12)
    assert v_f == pytest.approx((n + 1) / (2 * n), rel=0.01)
    assert e_f == pytest.approx((n + 1) / 2 - n * 0.5, rel=0.01)


def test_ginibre_pipeline_against_exact_moments(disk_ctx):
    n = 1024
    f = power_function(2)
    exact = exact_linear_moments(PerturbedWeight(ginibre()), n, f, 0.5)
    assert exact.variance == pytest.approx((n + 1) / (2 * n), rel=1e-8)
    _, v_f = ef_vf(f, disk_ctx.pot, disk_ctx.droplet)
    assert abs(v_f / exact.variance - 1.0) < 0.01


def test_variance_ignores_changes_inside_gap(gap_ctx):
    f1 = decompose_radial(power_function(2), gap_ctx.droplet, gap_ctx.omega).f1
    base = quiet(ef_vf, f1, gap_ctx.pot, gap_ctx.droplet)
    moved = quiet(ef_vf, f1 + gap_bump(), gap_ctx.pot, gap_ctx.droplet)
    assert moved[1] == pytest.approx(base[1], abs=1e-10)
    assert moved[0] == pytest.approx(base[0], abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(c1=st.floats(-2.0, 2.0), c2=st.floats(-2.0, 2.0), k1=st.sampled_from([1.0, 2.0, 3.0]), k2=st.sampled_from([1.5, 2.0, 4.0]))
def test_mean_additive_and_variance_quadratic(gap_pot, c1, c2, k1, k2):
    ctx = GapContext.from_potential(gap_pot)
    d, pot = ctx.droplet, ctx.pot
    f = decompose_radial(power_function(k1, c1), d, ctx.omega).f1
    g = decompose_radial(power_function(k2, c2), d, ctx.omega).f1
    ef, vf = quiet(ef_vf, f, pot, d)
    eg, vg = quiet(ef_vf, g, pot, d)
    e_sum, v_sum = quiet(ef_vf, f + g, pot, d)
    _, v_diff = quiet(ef_vf, f - g, pot, d)
    assert e_sum == pytest.approx(ef + eg, abs=1e-10)
    assert v_sum + v_diff == pytest.approx(2 * vf + 2 * vg, abs=1e-10)
    assert vf >= 0.0 and vg >= 0.0


# -- combined prediction ------------------------------------------------------------


def test_step_prediction_is_pure_discrete(gap_ctx):
    pred = quiet(predict_total, step_function(gap_ctx.omega), gap_ctx, 256)
    assert pred.lam == pytest.approx(1.0)
    assert pred.e_f == pytest.approx(0.0, abs=1e-12) and pred.v_f == pytest.approx(0.0, abs=1e-12)
    assert pred.sigma_f == pytest.approx(1.0 - gap_ctx.tau_star, abs=1e-8)


def test_constant_prediction_vanishes(gap_ctx):
    pred = predict_total(constant_function(4.0), gap_ctx, 256)
    assert pred.lam == 0.0 and pred.heine_plus is None
    # the bulk and edge terms of e_f cancel for constants
    assert pred.cgf(1.0) == pytest.approx(0.0, abs=1e-14)
    assert pred.mean == pytest.approx(0.0, abs=1e-14) and pred.variance == 0.0


def test_prediction_export(gap_ctx):
    pred = quiet(predict_total, power_function(2), gap_ctx, 512)
    data = json.loads(pred.to_json())
    for key in ("e_f", "v_f", "lambda", "theta_plus", "theta_minus", "q", "n", "x_n", "schema_version"):
        assert key in data
    assert data["x_n"] == pytest.approx(0.6, abs=1e-9)
    assert data["theta_plus"] * data["theta_minus"] == pytest.approx(data["q"], rel=1e-12)
    assert pred.cgf(0.0) == 0.0


@pytest.mark.parametrize("f", [power_function(2), power_function(1)])
def test_prediction_tracks_exact_cgf(gap_ctx, gap_weight, f):
    pred = quiet(predict_total, f, gap_ctx, 512)
    exact = exact_linear_cgf(gap_weight, 512, f, pred.sigma_f, [-1.0, 1.0])
    assert np.allclose(exact, [pred.cgf(-1.0), pred.cgf(1.0)], atol=0.01)


def test_monte_carlo_cgf_concordance(gap_ctx, gap_weight):
    n, replicas = 256, 6000
    ms = build_sampler(gap_weight, n, seed=21)
    for f in (power_function(2), power_function(1)):
        pred = quiet(predict_total, f, gap_ctx, n)
        lin = sample_linear_stat(ms, f, pred.sigma_f, replicas).lin_stats
        for t in (-1.0, 0.0, 1.0):
            est = empirical_cgf(lin, t)
            se = bootstrap_se(lin, lambda x, t=t: empirical_cgf(x, t), draws=200, seed=4)
            assert abs(est - pred.cgf(t)) <= 3 * se + 1e-12, (f.label, t)
