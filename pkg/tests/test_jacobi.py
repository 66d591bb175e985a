import numpy as np
import pytest

from geoloop import geo, jacobi
from geoloop.errors import RangeError
from geoloop.manifold import TangentVector, eval_gamma, polynomial_connection

from conftest import ALL, entry

SPHERE = "sphere2-stereographic"


def _path(name, v, base=None, t_end=1.0):
    e = entry(name)
    a = e.base_point if base is None else np.asarray(base, float)
    return geo.integrate_geodesic(e.connection, TangentVector(a, np.asarray(v, float)), t_end)


def test_flat_field_is_affine_in_t():
    path = _path("flat2", [1, 0])
    f = jacobi.jacobi_solve(path.connection, path, [0.2, 1.0], [0.5, -0.3])
    t = path.times[:, None]
    assert np.allclose(f.X, [0.2, 1.0] + t * np.array([0.5, -0.3]), atol=1e-13)
    assert np.allclose(f.DX, [0.5, -0.3], atol=1e-13)


@pytest.mark.parametrize("name", ALL)
def test_velocity_initial_data_reproduces_velocity_field(name):
    n = entry(name).connection.dim
    v = np.zeros(n)
    v[0] = 0.2
    v[-1] = 0.1
    path = _path(name, v)
    f = jacobi.jacobi_solve(path.connection, path, v, np.zeros(n))
    assert np.max(np.abs(f.X - path.velocities)) < 1e-9


def test_sphere_normal_field_follows_sine():
    path = _path(SPHERE, [0.5, 0.0], t_end=1.5)  # unit metric speed at the origin
    f = jacobi.jacobi_solve(path.connection, path, [0, 0], [0, 0.5])
    for t in (0.5, 1.0, 1.5):
        p = path.position(t)
        norm = 2 / (1 + p @ p) * np.linalg.norm(f.value(t))
        assert norm == pytest.approx(np.sin(t), abs=1e-5)


def test_linearity_in_initial_data():
    path = _path("poly-perturbed2", [0.3, 0.2])
    c = path.connection
    X0, V0, X1, V1 = np.array([0.1, 0.0]), np.array([0.0, 0.2]), np.array([-0.3, 0.4]), np.array([0.1, 0.1])
    f0, f1 = jacobi.jacobi_solve_many(c, path, [X0, X1], [V0, V1])
    f = jacobi.jacobi_solve(c, path, 2 * X0 - 0.5 * X1, 2 * V0 - 0.5 * V1)
    assert np.max(np.abs(f.X - (2 * f0.X - 0.5 * f1.X))) < 1e-9


def test_covariant_derivative_interpolates_samples():
    path = _path(SPHERE, [0.3, 0.1])
    f = jacobi.jacobi_solve(path.connection, path, [0.1, 0.2], [0.0, 0.1])
    k = 400
    assert np.allclose(f.covariant_derivative(path.times[k]), f.DX[k], atol=1e-8)


@pytest.mark.parametrize("name", ALL)
def test_natural_fields(name):
    n = entry(name).connection.dim
    v = np.full(n, 0.15)
    path = _path(name, v)
    first, second = jacobi.natural_fields(path)
    assert np.max(jacobi.jacobi_residual(first)) < 1e-6
    assert np.max(jacobi.jacobi_residual(second)) < 1e-6
    assert not np.any(second.X[0])
    assert np.allclose(second.DX[0], v, atol=1e-12)


def test_flat_natural_fields_explicit():
    path = _path("flat2", [1, 0])
    first, second = jacobi.natural_fields(path)
    assert np.allclose(first.X, [1, 0])
    assert np.allclose(second.X, path.times[:, None] * [1, 0])


def test_residual_detects_a_wrong_field():
    path = _path(SPHERE, [0.4, 0.0])
    first, _ = jacobi.natural_fields(path)
    bent = jacobi.JacobiField(path, first.X + 0.01 * path.times[:, None] ** 2, first.Xdot, first.DX)
    assert np.max(jacobi.jacobi_residual(bent)) > 1e-3


def test_flat_alpha_is_translation():
    g = jacobi.variation_alpha(entry("flat2").connection, [0, 0], [0, 1], [1, 0])
    S, T = np.meshgrid(g.s, g.t, indexing="ij")
    assert np.allclose(g.points, np.stack([T, S], axis=-1), atol=1e-13)
    assert g.provenance == "alpha-transport"
    assert np.allclose(jacobi.infinitesimal_variation(g, g.t), [0, 1], atol=1e-10)


def test_alpha_center_row_and_initial_field():
    e = entry(SPHERE)
    zeta, xi = np.array([0, 0.2]), np.array([0.2, 0])
    g = jacobi.variation_alpha(e.connection, e.base_point, zeta, xi)
    base = _path(SPHERE, xi)
    assert np.max(np.abs(g.points[g.center()] - base.position(g.t))) < 1e-10
    assert np.allclose(jacobi.infinitesimal_variation(g, 0.0), zeta, atol=1e-6)
    with pytest.raises(RangeError):
        jacobi.infinitesimal_variation(g, 1.5)


def test_beta_flat_and_initial_field():
    g = jacobi.variation_beta(entry("flat2").connection, [0, 0], [1, 0], [0, 2])
    S, T = np.meshgrid(g.s, g.t, indexing="ij")
    assert np.allclose(g.points, np.stack([T, 2 * S * T], axis=-1), atol=1e-13)
    e = entry(SPHERE)
    g = jacobi.variation_beta(e.connection, e.base_point, [0.2, 0], [0.05, 0.1])
    assert np.linalg.norm(jacobi.infinitesimal_variation(g, 0.0)) < 1e-9


@pytest.mark.parametrize("name", ["sphere2-stereographic", "hyperbolic-halfplane", "poly-perturbed2"])
def test_beta_routes_agree(name):
    e = entry(name)
    kw = dict(ds=0.2, dt=0.1, s_max=1.0)
    direct = jacobi.variation_beta(e.connection, e.base_point, [0.15, 0], [0.05, 0.1], **kw)
    summed = jacobi.variation_beta(e.connection, e.base_point, [0.15, 0], [0.05, 0.1], route="lambda", **kw)
    assert summed.provenance == "beta-sum"
    assert np.max(np.abs(direct.points - summed.points)) < 1e-9


def test_grid_step_must_divide_span():
    with pytest.raises(ValueError):
        jacobi.variation_alpha(entry("flat2").connection, [0, 0], [0, 1], [1, 0], dt=0.3)


def test_variation_of_a_torsion_connection_solves_the_field_equation():
    c0 = np.zeros((2, 2, 2))
    c0[0, 0, 1] = 0.4
    c0[1, 1, 0] = -0.3
    c1 = np.zeros((2,) * 4)
    c1[0, 1, 1, 0] = 0.5
    conn = polynomial_connection(c0, c1)
    assert np.any(eval_gamma(conn, np.zeros(2)) != np.swapaxes(eval_gamma(conn, np.zeros(2)), -1, -2))
    report = jacobi.verify_jacobi_variation(conn, np.zeros(2), [0, 0.2], [0.2, 0.1])
    assert report["jacobi-variation.discrepancy"].residual < 1e-6


def test_zero_transversal_is_rejected():
    e = entry(SPHERE)
    report = jacobi.verify_transported_variation(e.connection, e.base_point, [0, 0], [0.2, 0])
    entry_ = report["transported-variation.precondition"]
    assert not entry_.passed and "zeta = 0" in entry_.meta["error"]


def test_flat_transported_variation_exact():
    report = jacobi.verify_transported_variation(entry("flat2").connection, [0, 0], [0, 1], [1, 0])
    assert report.passed
    assert report["transported-variation.transversal-rate"].residual == 0.0


def test_discrepancy_contracts_with_ds():
    e = entry(SPHERE)
    coarse = jacobi.variation_discrepancy(e.connection, e.base_point, [0, 0.2], [0.2, 0], 4e-2, 1e-2, 1e-3)
    fine = jacobi.variation_discrepancy(e.connection, e.base_point, [0, 0.2], [0.2, 0], 1e-2, 1e-2, 1e-3)
    assert coarse / fine >= 12
