"""Jacobi fields, geodesic variations, and the checks tying them to the loop."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from . import geo
from .errors import DomainExitError, NumericsError, RangeError
from .geo import DEFAULT_NUMERICS, GeodesicPath, Numerics, d1_uniform, hermite, hermite_derivative
from .loops import OdularStructure
from .manifold import Connection, TangentVector, as_points, eval_gamma, riemann
from .report import ResidualReport

PROVENANCE = ("alpha-transport", "beta-sum", "direct")
ORDER_FLOOR = 1e-9


def _torsion_apply(G, X, v):
    # T(X, v)^i = (G^i_jk - G^i_kj) X^j v^k
    return np.einsum("...ijk,...j,...k->...i", G - np.swapaxes(G, -1, -2), X, v)


def _gamma_apply(G, u, w):
    return np.einsum("...ijk,...j,...k->...i", G, u, w)


@dataclass(frozen=True, eq=False)
class JacobiField:
    """A vector field along ``path`` sampled on the path's step grid.

    ``X``/``Xdot`` are chart components and their plain time derivative;
    ``DX`` is the covariant derivative along the path.
    """

    path: GeodesicPath
    X: np.ndarray
    Xdot: np.ndarray
    DX: np.ndarray

    @property
    def times(self):
        return self.path.times

    def value(self, t):
        return hermite(0.0, self.path.h, self.X, self.Xdot, self.path._check(t))

    def covariant_derivative(self, t):
        t = self.path._check(t)
        X = self.value(t)
        Xd = hermite_derivative(0.0, self.path.h, self.X, self.Xdot, t)
        G = eval_gamma(self.path.connection, self.path.position(t))
        return Xd + _gamma_apply(G, self.path.velocity(t), X)


def jacobi_solve(conn: Connection, path: GeodesicPath, X0, V0) -> JacobiField:
    """Solve D^2 X/dt^2 + R(X, Y) Y = 0 along ``path`` with X(0) = X0, DX/dt(0) = V0.

    Integrated as the first-order pair X, W = DX/dt + T(X, Y) with
    DW/dt = -R(X, Y) Y, which is the variation equation for any connection
    and the usual Jacobi system when the torsion T vanishes.  Uses the
    path's step; the geodesic is integrated again alongside.
    """
    n = conn.dim
    X0 = np.asarray(X0, dtype=float).reshape(n)
    V0 = np.asarray(V0, dtype=float).reshape(n)
    if not (np.all(np.isfinite(X0)) and np.all(np.isfinite(V0))):
        raise ValueError("initial data must be finite")
    x0, v0 = path.initial.base, path.initial.components
    W0 = V0 + _torsion_apply(eval_gamma(conn, x0), X0, v0)
    samples, derivs, status, t_exit = K.jacobi_flow(
        conn.kind, conn.params, x0[None].copy(), v0[None].copy(), X0[None].copy(), W0[None].copy(),
        float(path.h), int(path.nsteps), float(conn.fd_step))
    if status[0]:
        raise DomainExitError(t_exit[0])
    s, d = samples[0], derivs[0]
    X, W, Xdot = s[:, 2 * n:3 * n], s[:, 3 * n:], d[:, 2 * n:3 * n]
    G = eval_gamma(conn, path.positions)
    DX = W - _torsion_apply(G, X, path.velocities)
    return JacobiField(path, X, Xdot, DX)


def jacobi_solve_many(conn: Connection, path: GeodesicPath, X0s, V0s):
    return [jacobi_solve(conn, path, X0, V0) for X0, V0 in zip(np.atleast_2d(X0s), np.atleast_2d(V0s))]


def jacobi_residual(field: JacobiField):
    """Pointwise |D/dt(DX/dt + T(X, Y)) + R(X, Y) Y| by 5-point differences of the samples.

    Independent of how the field was produced; returns one value per sample.
    """
    path = field.path
    conn = path.connection
    h = path.h
    v = path.velocities
    G = eval_gamma(conn, path.positions)
    R = riemann(conn, path.positions)
    Z = d1_uniform(field.X, h) + _gamma_apply(G, v, field.X)
    Q = Z + _torsion_apply(G, field.X, v)
    curv = np.einsum("tijkl,tj,tk,tl->ti", R, v, field.X, v)
    res = d1_uniform(Q, h) + _gamma_apply(G, v, Q) + curv
    return np.linalg.norm(res, axis=-1)


def natural_fields(path: GeodesicPath):
    """The fields Y(t) and t Y(t) along a geodesic with velocity Y."""
    conn = path.connection
    t = path.times[:, None]
    v, acc = path.velocities, path.accelerations
    G = eval_gamma(conn, path.positions)
    DY = acc + _gamma_apply(G, v, v)
    first = JacobiField(path, v.copy(), acc.copy(), DY)
    second = JacobiField(path, t * v, v + t * acc, v + t * DY)
    return first, second


# -- variations -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VariationGrid:
    """Samples points[i, j] = alpha(s[i], t[j]) of a family of geodesics t -> alpha(s, t)."""

    s: np.ndarray
    t: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"provenance must be one of {PROVENANCE}")

    @property
    def ds(self):
        return float(self.s[1] - self.s[0])

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def center(self):
        i = int(np.argmin(np.abs(self.s)))
        if abs(self.s[i]) > 1e-12 * max(1.0, abs(self.ds)):
            raise RangeError("grid has no s = 0 row")
        return i

    def rows_at(self, t):
        """Every row evaluated at parameter t by Hermite interpolation in t."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise RangeError(f"t outside [{self.t[0]}, {self.t[-1]}]")
        P = np.moveaxis(self.points, 1, 0)
        V = np.moveaxis(self.velocities, 1, 0)
        out = hermite(self.t[0], self.dt, P, V, t)
        return np.moveaxis(out, 0, 1) if t.ndim else out


def _axis(span, step, symmetric):
    m = int(round(span / step))
    if m < 1 or abs(m * step - span) > 1e-9 * span:
        raise ValueError(f"step {step} must divide {span}")
    idx = np.arange(-m, m + 1) if symmetric else np.arange(0, m + 1)
    return idx * step


def _rows(conn, starts, vels, t_axis, h):
    """Integrate the geodesics (starts[i], vels[i]) over [0, t_axis[-1]] and sample at t_axis."""
    t_end = float(t_axis[-1])
    N = geo.step_count(t_end, h)
    h_eff = t_end / N
    samples, derivs, _, status, t_exit = K.geodesic_flow(
        conn.kind, conn.params, np.ascontiguousarray(starts, dtype=float),
        np.ascontiguousarray(vels, dtype=float), h_eff, N, False, True)
    if np.any(status):
        raise DomainExitError(np.nanmin(t_exit[status != 0]))
    n = conn.dim
    X = np.moveaxis(samples[:, :, :n], 1, 0)
    V = np.moveaxis(samples[:, :, n:], 1, 0)
    A = np.moveaxis(derivs[:, :, n:], 1, 0)
    pts = np.moveaxis(hermite(0.0, h_eff, X, V, t_axis), 0, 1)
    vel = np.moveaxis(hermite(0.0, h_eff, V, A, t_axis), 0, 1)
    return pts, vel


def variation_alpha(conn: Connection, a, zeta, xi, *, ds=1e-3, dt=1e-2, s_max=5e-3,
                    h=geo.H_DEFAULT) -> VariationGrid:
    """alpha(s, t) = Exp_{x(s)} tau^a_{x(s)} (t xi) with x(s) = Exp_a(s zeta).

    Each row is the geodesic from x(s) with the transported xi as velocity.
    """
    a = as_points(a, conn.dim)
    zeta = np.asarray(zeta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    s = _axis(s_max, ds, True)
    t = _axis(1.0, dt, False)
    starts, P = geo.transport_frames(conn, np.broadcast_to(a, (len(s), conn.dim)), s[:, None] * zeta, h)
    pts, vel = _rows(conn, starts, P @ xi, t, h)
    return VariationGrid(s, t, pts, vel, "alpha-transport")


def variation_beta(conn: Connection, a, xi, eta, *, ds=1e-3, dt=1e-2, s_max=5e-3,
                   h=geo.H_DEFAULT, route="direct", numerics: Numerics = DEFAULT_NUMERICS) -> VariationGrid:
    """beta(s, t) = Exp_a(t xi + s t eta).

    ``route="direct"`` integrates each row from a; ``route="lambda"`` builds
    every point as Lambda(x(t), a, y(s, t)) with x(t) = Exp_a(t xi) and
    y(s, t) = Exp_a(s t eta).
    """
    a = as_points(a, conn.dim)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    s = _axis(s_max, ds, True)
    t = _axis(1.0, dt, False)
    vels = xi + s[:, None] * eta
    if route == "direct":
        pts, vel = _rows(conn, np.broadcast_to(a, vels.shape), vels, t, h)
        return VariationGrid(s, t, pts, vel, "direct")
    if route != "lambda":
        raise ValueError("route must be 'direct' or 'lambda'")
    S = OdularStructure(conn, numerics)
    x = S.exp(a, t[:, None] * xi)  # (T, n)
    y = S.exp(a, (s[:, None, None] * t[None, :, None]) * eta)  # (S, T, n)
    pts = S.Lambda(np.broadcast_to(x, y.shape), a, y)
    # row velocities are not observable through Lambda; take them by differences in t
    vel = d1_uniform(pts, float(t[1] - t[0]), axis=1)
    return VariationGrid(s, t, pts, vel, "beta-sum")


def infinitesimal_variation(grid: VariationGrid, t):
    """Central difference of alpha in s at s = 0: the variation field at t."""
    if len(grid.s) < 5:
        raise RangeError("need at least 5 s-samples")
    i = grid.center()
    rows = grid.rows_at(t)
    return (rows[i + 1] - rows[i - 1]) / (2 * grid.ds)


def _initial_variation_rate(grid: VariationGrid):
    # d/dt of the variation field at t = 0 equals d/ds of the row velocities there
    i = grid.center()
    V = grid.velocities[:, 0]
    return (V[i + 1] - V[i - 1]) / (2 * grid.ds)


# -- verifiers --------------------------------------------------------------

def variation_discrepancy(conn, a, zeta, xi, ds, dt=1e-2, h=geo.H_DEFAULT):
    """Sup over the t grid of |d alpha/ds - X| where X solves the field equation with matched data."""
    grid = variation_alpha(conn, a, zeta, xi, ds=ds, dt=dt, s_max=5 * ds, h=h)
    Xfd = infinitesimal_variation(grid, grid.t)
    X0 = Xfd[0]
    G0 = eval_gamma(conn, a)
    DX0 = _initial_variation_rate(grid) + _gamma_apply(G0, xi, X0)
    path = geo.integrate_geodesic(conn, TangentVector(a, xi), 1.0, h, frame=False)
    field = jacobi_solve(conn, path, X0, DX0)
    return float(np.max(np.linalg.norm(field.value(grid.t) - Xfd, axis=-1)))


def verify_jacobi_variation(conn: Connection, a, zeta, xi, *, ds=1e-3, dt=1e-2, h=geo.H_DEFAULT,
                            tol=1e-4, order_factor=12.0, floor=ORDER_FLOOR) -> ResidualReport:
    """Variation field of alpha against the Jacobi solution with the same initial data.

    Also checks that the discrepancy shrinks by ``order_factor`` when ds is
    quartered, unless the finer run is already below ``floor``.
    """
    a = as_points(a, conn.dim)
    report = ResidualReport("jacobi-variation")
    meta = {"ds": ds, "dt": dt, "h": h, "zeta": list(map(float, zeta)), "xi": list(map(float, xi))}
    coarse = {}

    def discrepancy():
        coarse["v"] = variation_discrepancy(conn, a, zeta, xi, ds, dt, h)
        return coarse["v"]

    report.run("jacobi-variation.discrepancy", "dalpha/ds along alpha solves D^2X/dt^2 + R(X,Y)Y = 0",
               tol, discrepancy, meta)

    def order():
        fine = variation_discrepancy(conn, a, zeta, xi, ds / 4, dt, h)
        ratio = coarse["v"] / fine if fine > 0 else np.inf
        order_meta.update(coarse=coarse["v"], fine=fine, ratio=float(ratio))
        if fine <= floor:
            return 0.0
        return order_factor / ratio

    order_meta = dict(meta, factor=order_factor, floor=floor)
    if "v" in coarse:
        report.run("jacobi-variation.order", "variation discrepancy contracts as ds^2", 1.0, order, order_meta)
    else:
        report.add("jacobi-variation.order", "variation discrepancy contracts as ds^2", None, 1.0,
                   {**order_meta, "error": "coarse discrepancy unavailable"})
    return report


def verify_transported_variation(conn: Connection, a, zeta, xi, *, ds=1e-3, dt=1e-2, s_max=5e-3,
                                 h=geo.H_DEFAULT, tol_dx=1e-5, tol_rows=1e-7) -> ResidualReport:
    """Checks on alpha(s, t) = Exp_{x(s)} tau (t xi) along the transversal x(s) = Exp_a(s zeta).

    X(s, 0) must be nonzero with vanishing covariant t-derivative, every row
    must be a geodesic, and each row must start with the transported xi.
    """
    a = as_points(a, conn.dim)
    zeta = np.asarray(zeta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    report = ResidualReport("transported-variation")
    meta = {"ds": ds, "dt": dt, "s_max": s_max, "h": h}
    if not np.any(zeta):
        report.add("transported-variation.precondition", "X(s,0) != 0 along the transversal geodesic",
                   None, 0.0, {**meta, "error": "zeta = 0 makes X(s,0) vanish; input rejected"})
        return report
    try:
        grid = variation_alpha(conn, a, zeta, xi, ds=ds, dt=dt, s_max=s_max, h=h)
        starts, P = geo.transport_frames(conn, np.broadcast_to(a, (len(grid.s), conn.dim)),
                                         grid.s[:, None] * zeta, h)
    except (DomainExitError, NumericsError) as exc:
        for key in ("transversal-rate", "rows-geodesic", "rows-velocity", "center-row"):
            report.add(f"transported-variation.{key}", "", None, 0.0, {**meta, "error": str(exc)})
        return report

    X = d1_uniform(grid.points[:, 0], ds)  # X(s, 0) = dx/ds
    Xdot = d1_uniform(grid.velocities[:, 0], ds)  # d/dt X(s, 0) = d/ds of the start velocities
    G = eval_gamma(conn, grid.points[:, 0])
    DX = Xdot + _gamma_apply(G, grid.velocities[:, 0], X)
    report.add("transported-variation.precondition", "X(s,0) != 0 along the transversal geodesic",
               0.0 if np.min(np.linalg.norm(X, axis=-1)) > 0 else None, 0.0,
               {**meta, "min_norm": float(np.min(np.linalg.norm(X, axis=-1)))})
    report.add("transported-variation.transversal-rate", "DX(s,0)/dt = 0 along the transversal geodesic",
               float(np.max(np.linalg.norm(DX, axis=-1))), tol_dx, meta)

    rows = max(float(np.max(geo.geodesic_residual(conn, row, grid.dt))) for row in grid.points)
    report.add("transported-variation.rows-geodesic", "each t -> alpha(s,t) is a geodesic", rows, tol_rows, meta)
    v0 = d1_uniform(grid.points, grid.dt, axis=1)[:, 0]
    report.add("transported-variation.rows-velocity", "row s starts with velocity tau^a_x(s) xi",
               float(np.max(np.linalg.norm(v0 - P @ xi, axis=-1))), tol_rows, meta)
    base = geo.integrate_geodesic(conn, TangentVector(a, xi), 1.0, h, frame=False)
    report.add("transported-variation.center-row", "alpha(0,t) = Exp_a(t xi)",
               float(np.max(np.linalg.norm(grid.points[grid.center()] - base.position(grid.t), axis=-1))),
               1e-10, meta)
    return report


def verify_jacobi_generates_structure(conn: Connection, a, zeta, xi, eta, *, n_s=11, n_t=11, s_max=1.0,
                                      h=geo.H_DEFAULT, ds=1e-3, dt=1e-2, tol=1e-6,
                                      numerics: Numerics = DEFAULT_NUMERICS) -> ResidualReport:
    """Rebuild L, Lambda and omega from geodesic variations and compare with the loop operations.

    On an n_s x n_t grid over s in [-s_max, s_max], t in [0, 1]:
    alpha(s, t) against L(x(s), a, y(t)), the direct beta against
    Lambda(x(t), a, y(s, t)), and each beta row against omega_t of its
    endpoint.  A fine beta grid checks the variation field at t = 0.
    """
    a = as_points(a, conn.dim)
    zeta, xi, eta = (np.asarray(v, dtype=float) for v in (zeta, xi, eta))
    report = ResidualReport("variation-structure")
    S = OdularStructure(conn, numerics)
    gs, gt = 2 * s_max / (n_s - 1), 1.0 / (n_t - 1)
    meta = {"grid": [n_s, n_t], "s_max": s_max, "h": h}

    def alpha_vs_L():
        grid = variation_alpha(conn, a, zeta, xi, ds=gs, dt=gt, s_max=s_max, h=h)
        x = S.exp(a, grid.s[:, None] * zeta)
        y = S.exp(a, grid.t[:, None] * xi)
        L = S.L_outer(a, x, y)
        return float(np.max(np.linalg.norm(L - grid.points, axis=-1)))

    def beta_vs_lambda():
        direct = variation_beta(conn, a, xi, eta, ds=gs, dt=gt, s_max=s_max, h=h)
        x = S.exp(a, direct.t[:, None] * xi)
        y = S.exp(a, (direct.s[:, None, None] * direct.t[None, :, None]) * eta)
        lam = S.Lambda(np.broadcast_to(x, y.shape), a, y)
        return float(np.max(np.linalg.norm(lam - direct.points, axis=-1)))

    def omega_rows():
        direct = variation_beta(conn, a, xi, eta, ds=gs, dt=gt, s_max=s_max, h=h)
        ends = np.broadcast_to(direct.points[:, -1:, :], direct.points.shape)
        om = S.omega(np.broadcast_to(direct.t, direct.points.shape[:2]), a, ends)
        return float(np.max(np.linalg.norm(om - direct.points, axis=-1)))

    report.run("variation-structure.alpha-L", "alpha(s,t) = L(x(s), a, y(t))", tol, alpha_vs_L, meta)
    report.run("variation-structure.beta-Lambda", "beta(s,t) = Lambda(x(t), a, y(s,t))", tol, beta_vs_lambda, meta)
    report.run("variation-structure.omega-rows", "beta(s,t) = omega_t(a, beta(s,1))", tol, omega_rows, meta)

    fine_meta = {"ds": ds, "dt": dt, "h": h}
    cache = {}

    def fine():
        if "g" not in cache:
            cache["g"] = variation_beta(conn, a, xi, eta, ds=ds, dt=dt, s_max=5 * ds, h=h)
        return cache["g"]

    def beta_x0():
        return float(np.linalg.norm(infinitesimal_variation(fine(), 0.0)))

    def beta_dx0():
        g = fine()
        X = infinitesimal_variation(g, g.t[:5])
        Xdot0 = d1_uniform(X, g.dt)[0]
        DX0 = Xdot0 + _gamma_apply(eval_gamma(conn, a), xi, X[0])
        return float(np.linalg.norm(DX0 - eta))

    report.run("variation-structure.beta-X0", "beta variation field vanishes at t = 0", 1e-9, beta_x0, fine_meta)
    report.run("variation-structure.beta-DX0", "beta variation field has DX/dt(0) = eta", 1e-5, beta_dx0, fine_meta)
    return report
