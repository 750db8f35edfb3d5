import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coulombgap.conformal import (
    EllipticOutpost,
    ExteriorMap,
    QuasiPolyContext,
    annulus_dirichlet,
    capacity_of,
    circle_map,
    ellipse_map,
    exterior_dirichlet,
    harmonic_measure,
    heine_from_geometry,
    level_curve,
    map_eval,
)
from coulombgap.errors import BadGeometry, DomainError, OutsideGap


@pytest.fixture(scope="module")
def ellipse():
    return ellipse_map(1.2, 0.8)


@pytest.fixture(scope="module")
def elliptic_outpost():
    return EllipticOutpost()


def test_circle_map_at_one():
    assert map_eval(circle_map(1.7), 1.0) == pytest.approx(1.7)


def test_joukowski_endpoints(ellipse):
    assert map_eval(ellipse, 1.0) == pytest.approx(1.2, abs=1e-15)
    assert map_eval(ellipse, 1j) == pytest.approx(0.8j, abs=1e-15)


def test_map_eval_refuses_inside_disk(ellipse):
    with pytest.raises(DomainError):
        map_eval(ellipse, 0.5)


def test_capacities(ellipse):
    assert capacity_of(circle_map(2.5)) == 2.5
    assert capacity_of(ellipse) == pytest.approx(1.0)
    assert capacity_of(ellipse.scaled(3.0)) == pytest.approx(3.0)


def test_non_univalent_map_rejected():
    # psi'(w) = 1 - 2/w^3 vanishes outside the unit disk
    with pytest.raises(ValueError):
        ExteriorMap(1.0, (0.0, 0.0, 1.0))


def test_map_round_trip(tmp_path, ellipse):
    path = tmp_path / "map.json"
    ellipse.save(path)
    assert ExteriorMap.load(path) == ellipse


def test_inverse_recovers_points(ellipse):
    w = 1.3 * np.exp(1j * np.linspace(0, 2 * np.pi, 17))
    assert np.allclose(ellipse.inverse(ellipse(w)), w, atol=1e-13)


def test_level_curve_circle():
    pts = level_curve(circle_map(2.0), 1.5, 64)
    assert np.allclose(np.abs(pts), 3.0, atol=1e-15)


def test_level_curve_rho_one_is_base_curve(ellipse):
    theta = 2 * np.pi * np.arange(32) / 32
    assert np.allclose(level_curve(ellipse, 1.0, 32), ellipse(np.exp(1j * theta)))


def test_level_curve_points_invert_to_radius(ellipse):
    pts = level_curve(ellipse, 1.5, 200)
    assert np.allclose(np.abs(ellipse.inverse(pts)), 1.5, atol=1e-10)


def test_level_map_capacity(ellipse):
    assert capacity_of(ellipse.level_map(1.5)) == pytest.approx(1.5 * capacity_of(ellipse), rel=1e-12)


def test_harmonic_measure_boundary_and_midpoint(ellipse):
    assert harmonic_measure(ellipse, 1.5, complex(ellipse(1.0))) == pytest.approx(0.0, abs=1e-12)
    assert harmonic_measure(ellipse, 1.5, complex(ellipse(1.5j))) == pytest.approx(1.0, abs=1e-12)
    m = circle_map(1.0)
    assert harmonic_measure(m, 2.25, math.sqrt(2.25)) == pytest.approx(0.5, abs=1e-14)


def test_harmonic_measure_outside_gap(ellipse):
    with pytest.raises(OutsideGap):
        harmonic_measure(ellipse, 1.5, complex(ellipse(3.0)))
    with pytest.raises(BadGeometry):
        harmonic_measure(ellipse, 0.9, 1.0)


@settings(max_examples=20, deadline=None)
@given(radius=st.floats(1.01, 1.49))
def test_harmonic_measure_mean_value(radius):
    m = ellipse_map(1.2, 0.8)
    theta = 2 * np.pi * np.arange(256) / 256
    vals = harmonic_measure(m, 1.5, m(radius * np.exp(1j * theta)))
    assert np.mean(vals) == pytest.approx(math.log(radius) / math.log(1.5), abs=1e-10)


def test_heine_from_geometry_outpost():
    p = heine_from_geometry(1.0, 1.5, math.log(2.0))
    assert p.theta == pytest.approx(1 / 3, abs=1e-15)
    assert p.q == pytest.approx(4 / 9, abs=1e-15)


def test_heine_from_geometry_degenerate():
    p = heine_from_geometry(1.0 - 1e-9, 1.0, 0.0)
    assert p.q < 1.0 and p.theta == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(BadGeometry):
        heine_from_geometry(1.0, 1.0, 0.0)


# -- Dirichlet solvers ----------------------------------------------------------------


def test_exterior_dirichlet_reproduces_trace(ellipse):
    data = lambda z: np.real(1.0 / z) + 0.3
    sol = exterior_dirichlet(ellipse, data)
    pts = level_curve(ellipse, 1.0, 97)
    assert np.allclose(sol(pts).real, data(pts), atol=1e-10)
    assert sol.at_infinity == pytest.approx(0.3, abs=1e-12)


def test_annulus_constant_data_gives_log_ratio(elliptic_outpost):
    d1, d2 = 1.0, 4.0
    inner = elliptic_outpost.map
    data = lambda z: np.where(np.abs(inner.inverse(z)) < 1.25, 0.5 * math.log(d1), 0.5 * math.log(d2))
    sol = annulus_dirichlet(inner, 1.5, data)
    assert sol.c == pytest.approx(0.5 * math.log(d2 / d1), abs=1e-12)
    assert sol.compat_residual < 1e-12
    assert abs(sol.residual_log_coefficient()) < 1e-12
    assert sol.condition_c_holds


def test_annulus_zero_data(ellipse):
    sol = annulus_dirichlet(ellipse, 1.5, lambda z: np.zeros(np.shape(z)))
    assert sol.c == 0.0
    assert not np.any(sol.h1_coeffs) and not np.any(sol.pos_coeffs)


def test_annulus_holomorphic_trace(ellipse):
    sol = annulus_dirichlet(ellipse, 1.5, lambda z: np.real(1.0 / z))
    assert abs(sol.c) < 1e-10
    assert sol.compat_residual < 1e-10


def test_annulus_reconstructs_boundary_data(ellipse):
    data = lambda z: np.real(z**2) + 0.2 * np.log(np.abs(z)) + np.imag(z)
    sol = annulus_dirichlet(ellipse, 1.5, data)
    for radius in (1.0, 1.5):
        pts = level_curve(ellipse, radius, 256)
        assert np.allclose(sol.H(pts), data(pts), atol=1e-8)
    # w^2-type data is not the trace of something holomorphic outside C1
    assert not sol.condition_c_holds


def test_annulus_rejects_bad_ratio(ellipse):
    with pytest.raises(BadGeometry):
        annulus_dirichlet(ellipse, 1.0, lambda z: np.zeros(np.shape(z)))


def test_elliptic_outpost_constant(elliptic_outpost):
    eo = elliptic_outpost
    sol = annulus_dirichlet(eo.map, eo.rho, eo.half_log_laplacian)
    assert sol.c == pytest.approx(0.5 * math.log(eo.delta2 / eo.delta1), abs=1e-10)
    assert sol.compat_residual < 1e-12


def test_elliptic_outpost_laplacian_matches_finite_differences(elliptic_outpost):
    eo = elliptic_outpost
    z = eo.map(np.array([1.45, 1.5j, -1.55 + 0.1j]))
    h = 1e-4
    fd = (eo.value(z + h) + eo.value(z - h) + eo.value(z + 1j * h) + eo.value(z - 1j * h) - 4 * eo.value(z)) / h**2
    assert np.allclose(eo.laplacian(z), fd / 4.0, rtol=1e-5)
    # the well pins the Laplacian on the outpost curve
    on_curve = level_curve(eo.map, eo.rho, 16)
    assert np.allclose(eo.laplacian(on_curve), eo.delta2, rtol=1e-12)


def test_quasipoly_branches_agree(elliptic_outpost):
    eo = elliptic_outpost
    ctx = QuasiPolyContext(eo.map, eo.rho, eo.value, eo.half_log_laplacian)
    z = ctx.m2(np.array([1.3, 1.6j, -2.0 + 0.5j]))
    a = ctx.quasipoly(40, 40, z, "inner")
    b = ctx.quasipoly(40, 40, z, "outer")
    assert np.max(np.abs(a / b - 1.0)) < 1e-10


def test_quasipoly_monic(elliptic_outpost):
    eo = elliptic_outpost
    ctx = QuasiPolyContext(eo.map, eo.rho, eo.value, eo.half_log_laplacian)
    z = np.array([1e6 + 0j])
    assert ctx.quasipoly(5, 40, z)[0] / z[0] ** 5 == pytest.approx(1.0, abs=1e-5)


def test_quasipoly_radial_collapse():
    from coulombgap.orthopoly import QuasiPolyData, quasipoly_eval
    from coulombgap.potential import gap_constants, ginibre_outpost

    pot = ginibre_outpost()
    g = QuasiPolyData.from_radial(pot, gap_constants(pot, 1.0, 1.5, 1.0))
    assert quasipoly_eval(g, 7, 64, 2.0) == pytest.approx(2.0**7, rel=1e-12)
