import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoloop import geo
from geoloop.errors import DomainExitError, NoConvergenceError, NumericsError, RangeError
from geoloop.manifold import TangentVector, catalog

import oracles
from conftest import entry


def test_step_count_has_floor_and_divides_span():
    assert geo.step_count(1.0, 1e-3) == 1000
    assert geo.step_count(1e-3, 1e-3) == 10
    assert geo.step_count(0.25, 0.1) == 10
    assert geo.step_count(2.0, 0.3) == 10
    assert geo.step_count(5.0, 0.3) == 17


def test_hermite_exact_for_cubics():
    t = np.linspace(0, 1, 11)
    f = lambda t: 2 * t**3 - t**2 + 0.5
    df = lambda t: 6 * t**2 - 2 * t
    q = np.array([0.0, 0.033, 0.5, 0.77, 1.0])
    assert np.allclose(geo.hermite(0, 0.1, f(t), df(t), q), f(q), atol=1e-14)
    assert np.allclose(geo.hermite_derivative(0, 0.1, f(t), df(t), q), df(q), atol=1e-13)


def test_d1_d2_fourth_order_on_quartics():
    t = np.linspace(0, 1, 21)
    f = t**4 - t**2
    assert np.allclose(geo.d1_uniform(f, 0.05), 4 * t**3 - 2 * t, atol=1e-12)
    assert np.allclose(geo.d2_uniform(f, 0.05), 12 * t[2:-2] ** 2 - 2, atol=1e-10)
    with pytest.raises(NumericsError):
        geo.d1_uniform(f[:4], 0.05)


def test_mixed_stencil_on_bilinear_product():
    f = lambda x, y: np.sin(x[:, 0]) * y[:, 1] ** 2
    x0, y0 = np.array([0.3, 0.0]), np.array([0.0, 0.7])
    est = geo.fd_second_mixed(f, x0, y0, 0, 1, 1e-3)
    assert est == pytest.approx(np.cos(0.3) * 2 * 0.7, rel=1e-6)
    with pytest.raises(ValueError):
        geo.fd_second_mixed(f, x0, y0, 0, 1, 0.0)


def test_flat_geodesic_is_straight():
    e = entry("flat2")
    path = geo.integrate_geodesic(e.connection, TangentVector([0, 0], [1, 0]), 1.0)
    assert np.allclose(path.end(), [1, 0], atol=1e-15)
    assert np.allclose(path.position(0.37), [0.37, 0], atol=1e-15)


def test_sphere_exp_matches_great_circle():
    e = entry("sphere2-stereographic")
    p, v = np.array([0.1, -0.2]), np.array([0.6, 0.3])
    assert np.allclose(geo.exp_map(e.connection, TangentVector(p, v)), e.closed_forms.exp(p, v), atol=1e-10)


def test_half_plane_vertical_geodesic():
    e = entry("hyperbolic-halfplane")
    end = geo.exp_map(e.connection, TangentVector([0, 1], [0, 1]))
    assert np.allclose(end, [0, np.e], atol=1e-9)


def test_half_plane_exp_matches_closed_form():
    e = entry("hyperbolic-halfplane")
    p, v = np.array([0.2, 0.9]), np.array([0.5, -0.2])
    assert np.allclose(geo.exp_map(e.connection, TangentVector(p, v)), e.closed_forms.exp(p, v), atol=1e-10)


def test_exp_matches_adaptive_oracle_on_poly():
    conn = entry("poly-perturbed2").connection
    from geoloop.manifold import eval_gamma

    p, v = np.array([0.1, 0.05]), np.array([0.4, -0.3])
    ref = oracles.geodesic(lambda x: eval_gamma(conn, x), p, v)
    assert np.allclose(geo.exp_batch(conn, p, v), ref, atol=1e-11)


def test_domain_exit_keeps_partial_path():
    e = entry("hyperbolic-halfplane")
    # far too fast for the step: the RK4 state overshoots below y = 0
    with pytest.raises(DomainExitError) as info:
        geo.integrate_geodesic(e.connection, TangentVector([0, 0.05], [0, -1e3]), 1.0)
    err = info.value
    assert 0 <= err.t_exit < 1.0
    with pytest.raises(DomainExitError) as info:
        geo.integrate_geodesic(catalog("flat2").connection, TangentVector([0, 0], [1e9, 0]), 1.0)
    assert info.value.partial is not None
    assert info.value.partial.t_end < 1.0


def test_path_range_checks():
    path = geo.integrate_geodesic(entry("flat2").connection, TangentVector([0, 0], [1, 0]), 1.0)
    with pytest.raises(RangeError):
        path.position(1.5)
    with pytest.raises(RangeError):
        path.velocity(-0.1)


def test_log_round_trip_and_closed_form_distance():
    e = entry("sphere2-stereographic")
    a, y = np.array([0.05, 0.1]), np.array([-0.2, 0.25])
    u = geo.log_map(e.connection, a, y)
    assert np.allclose(geo.exp_map(e.connection, u), y, atol=1e-11)
    lam = 2 / (1 + a @ a)
    assert lam * np.linalg.norm(u.components) == pytest.approx(e.closed_forms.distance(a, y), rel=1e-9)


def test_log_reports_failure_outside_domain():
    e = entry("hyperbolic-halfplane")
    with pytest.raises((DomainExitError, NoConvergenceError)):
        geo.log_batch(e.connection, np.array([0, 1.0]), np.array([0, -1.0]))


def test_log_non_strict_marks_failures():
    conn = entry("hyperbolic-halfplane").connection
    a = np.array([[0, 1.0], [0, 1.0]])
    y = np.array([[0.1, 1.1], [0, -1.0]])
    u, ok = geo.log_batch(conn, a, y, strict=False)
    assert ok.tolist() == [True, False]


def test_transport_matches_sphere_closed_form():
    e = entry("sphere2-stereographic")
    p, v, w = np.array([0.1, 0.0]), np.array([0.3, 0.4]), np.array([-0.2, 0.5])
    path = geo.integrate_geodesic(e.connection, TangentVector(p, v), 1.0)
    moved = geo.parallel_transport(e.connection, path, TangentVector(p, w), 0.6)
    assert np.allclose(moved.components, e.closed_forms.transport(p, v, w, 0.6), atol=1e-10)
    assert np.allclose(moved.base, e.closed_forms.exp(p, v, 0.6), atol=1e-10)


def test_transport_frame_matches_adaptive_oracle():
    e = entry("poly-perturbed2")
    from geoloop.manifold import eval_gamma

    a, u = np.array([0.0, 0.1]), np.array([0.3, -0.2])
    _, P = geo.transport_frames(e.connection, a, u)
    _, Pref = oracles.geodesic(lambda x: eval_gamma(e.connection, x), a, u, frame=True)
    assert np.allclose(P, Pref, atol=1e-11)


def test_transport_rejects_foreign_base():
    conn = entry("flat2").connection
    path = geo.integrate_geodesic(conn, TangentVector([0, 0], [1, 0]), 1.0)
    with pytest.raises(ValueError):
        geo.parallel_transport(conn, path, TangentVector([1, 0], [0, 1]), 0.5)


def test_geodesic_residual_small_along_integrated_path():
    e = entry("sphere2-stereographic")
    path = geo.integrate_geodesic(e.connection, TangentVector([0.1, 0.1], [0.5, -0.2]), 1.0)
    assert np.max(geo.geodesic_residual(e.connection, path.positions, path.h)) < 1e-7


def test_newton_solve_batched_scalar_problem():
    def F(rows, U):
        return U**3, np.ones(len(rows), bool)

    target = np.array([[8.0], [27.0], [0.001]])
    u, conv, resid, _ = geo.newton_solve(F, target, np.ones((3, 1)))
    assert conv.all()
    assert np.allclose(u[:, 0], [2, 3, 0.1], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_log_inverts_exp_on_sphere(u1, u2):
    conn = entry("sphere2-stereographic").connection
    a = np.array([0.1, -0.1])
    u = np.array([u1, u2])
    y = geo.exp_batch(conn, a, u)
    assert np.allclose(geo.log_batch(conn, a, y), u, atol=1e-10)
