"""Geodesic loops and the odular operations built on them.

All operations are batched: points may carry leading batch axes and are
broadcast against each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geo
from .errors import DomainExitError, NoConvergenceError
from .geo import DEFAULT_NUMERICS, Numerics
from .manifold import Connection, as_points, eval_gamma, grid_connection
from .report import ResidualReport

LOOP_EXP_STEPS = 8


class OdularStructure:
    """The ternary operations L, omega_t and Lambda of a connection.

    ``L(x, a, y) = Exp_x tau^a_x Exp_a^{-1} y``, ``omega(t, a, z) = Exp_a t Exp_a^{-1} z``
    and ``Lambda(x, a, y) = Exp_a (Exp_a^{-1} x + Exp_a^{-1} y)``.
    """

    def __init__(self, connection: Connection, numerics: Numerics = DEFAULT_NUMERICS):
        self.connection = connection
        self.numerics = numerics

    def __repr__(self):
        return f"OdularStructure({self.connection.name!r})"

    # primitives
    def exp(self, base, v):
        return geo.exp_batch(self.connection, base, v, self.numerics.h)

    def log(self, a, y):
        return geo.log_batch(self.connection, a, y, self.numerics)

    def transport(self, a, u):
        """Endpoint and transport matrix along t -> Exp_a(t u), t in [0, 1]."""
        return geo.transport_frames(self.connection, a, u, self.numerics.h)

    def _pts(self, p):
        return as_points(p, self.connection.dim)

    def L(self, x, a, y):
        x, a, y = np.broadcast_arrays(self._pts(x), self._pts(a), self._pts(y))
        uv = self.log(np.stack([a, a]), np.stack([x, y]))
        _, P = self.transport(a, uv[0])
        w = np.einsum("...ij,...j->...i", P, uv[1])
        return self.exp(x, w)

    def omega(self, t, a, z):
        a, z = np.broadcast_arrays(self._pts(a), self._pts(z))
        t = np.asarray(t, dtype=float)[..., None]
        return self.exp(a, t * self.log(a, z))

    def Lambda(self, x, a, y):
        x, a, y = np.broadcast_arrays(self._pts(x), self._pts(a), self._pts(y))
        uv = self.log(np.stack([a, a]), np.stack([x, y]))
        return self.exp(a, uv[0] + uv[1])

    def L_outer(self, a, xs, ys, strict=True):
        """L(x, a, y) for every x in xs and y in ys, sharing logs and transports.

        Shapes: a (..., n), xs (..., mx, n), ys (..., my, n) -> (..., mx, my, n).
        With ``strict=False`` failing entries come back as NaN.
        """
        conn, num = self.connection, self.numerics
        a, xs, ys = self._pts(a), self._pts(xs), self._pts(ys)
        mx = xs.shape[-2]
        pts = np.concatenate([xs, ys], axis=-2)
        base = np.broadcast_to(a[..., None, :], pts.shape)
        if strict:
            logs = geo.log_batch(conn, base, pts, num)
            ok = np.ones(pts.shape[:-1], bool)
        else:
            logs, ok = geo.log_batch(conn, base, pts, num, strict=False)
        U, Y = logs[..., :mx, :], logs[..., mx:, :]
        _, _, P, okP, t_exit = geo.flow_endpoints(conn, base[..., :mx, :], U, num.h, frame=True)
        if strict and not np.all(okP):
            raise DomainExitError(np.nanmin(t_exit[~okP]))
        w = np.einsum("...xij,...yj->...xyi", P, Y)
        xb = np.broadcast_to(xs[..., :, None, :], w.shape)
        out, _, _, okE, t_exit = geo.flow_endpoints(conn, xb, w, num.h)
        if strict and not np.all(okE):
            raise DomainExitError(np.nanmin(t_exit[~okE]))
        good = okE & okP[..., :, None] & ok[..., :mx, None] & ok[..., None, mx:]
        return np.where(good[..., None], out, np.nan)


@dataclass(frozen=True, eq=False)
class LoopContext:
    """A local loop with neutral element ``neutral``.

    ``radius`` is the sampling scale for admissible arguments; it must not
    exceed the connection's trust radius.
    """

    connection: Connection
    neutral: np.ndarray
    radius: Optional[float] = None
    numerics: Numerics = DEFAULT_NUMERICS
    structure: OdularStructure = field(init=False, repr=False)

    def __post_init__(self):
        a = as_points(self.neutral, self.connection.dim).astype(float).copy()
        a.setflags(write=False)
        object.__setattr__(self, "neutral", a)
        r = self.connection.trust_radius if self.radius is None else float(self.radius)
        if not 0 < r <= self.connection.trust_radius:
            raise ValueError("radius must be positive and at most the trust radius")
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "structure", OdularStructure(self.connection, self.numerics))


def loop_L(ctx: LoopContext, x, y):
    return ctx.structure.L(x, ctx.neutral, y)


def omega(ctx: LoopContext, t, z):
    return ctx.structure.omega(t, ctx.neutral, z)


def lambda_(ctx: LoopContext, x, y):
    return ctx.structure.Lambda(x, ctx.neutral, y)


def _newton_points(ctx, F, target, guess, what):
    num = ctx.numerics
    target = np.atleast_2d(target)
    u, conv, resid, it = geo.newton_solve(F, target, np.atleast_2d(guess), num.newton_tol,
                                          num.newton_max_iter, num.jac_step)
    if not np.all(conv):
        raise NoConvergenceError(np.max(resid[~conv]), it, what)
    return u


def left_divide(ctx: LoopContext, x, z):
    """y with L(x, a, y) = z."""
    S = ctx.structure
    x, z = np.broadcast_arrays(S._pts(x), S._pts(z))
    shape = x.shape
    x2, z2 = x.reshape(-1, ctx.connection.dim), z.reshape(-1, ctx.connection.dim)
    a = np.broadcast_to(ctx.neutral, x2.shape)
    # invert the composition for the starting point, then polish on L itself
    _, P = S.transport(a, S.log(a, x2))
    w = np.linalg.solve(P, S.log(x2, z2)[..., None])[..., 0]
    guess = S.exp(a, w)

    def F(rows, Y):
        try:
            return S.L(x2[rows], ctx.neutral, Y), np.ones(len(rows), bool)
        except (DomainExitError, NoConvergenceError):
            return np.full_like(Y, np.nan), np.zeros(len(rows), bool)

    return _newton_points(ctx, F, z2, guess, "left division").reshape(shape)


def right_divide(ctx: LoopContext, z, y):
    """x with L(x, a, y) = z."""
    S = ctx.structure
    z, y = np.broadcast_arrays(S._pts(z), S._pts(y))
    shape = z.shape
    z2, y2 = z.reshape(-1, ctx.connection.dim), y.reshape(-1, ctx.connection.dim)

    def F(rows, X):
        try:
            return S.L(X, ctx.neutral, y2[rows]), np.ones(len(rows), bool)
        except (DomainExitError, NoConvergenceError):
            return np.full_like(X, np.nan), np.zeros(len(rows), bool)

    guess = z2 - y2 + ctx.neutral
    return _newton_points(ctx, F, z2, guess, "right division").reshape(shape)


def _stencil(a, step):
    n = a.shape[-1]
    E = np.eye(n) * step
    return np.stack([a + E, a - E], axis=1).reshape(2 * n, n)  # +e0, -e0, +e1, -e1, ...


class _LeftFields:
    # caches Log_a of the stencil points; each evaluation is then one
    # log + transport + 2n exps per point
    def __init__(self, ctx):
        self.ctx = ctx
        a = ctx.neutral
        self.step = ctx.numerics.field_step
        self.stencil = _stencil(a, self.step)
        S = ctx.structure
        self.stencil_logs = S.log(np.broadcast_to(a, self.stencil.shape), self.stencil)

    def __call__(self, x, guess=None):
        ctx, S = self.ctx, self.ctx.structure
        num = ctx.numerics
        x = S._pts(x)
        shape = x.shape[:-1]
        n = ctx.connection.dim
        x2 = x.reshape(-1, n)
        a = np.broadcast_to(ctx.neutral, x2.shape)
        if guess is None:
            U = S.log(a, x2)
        else:
            def F(rows, V):
                xe, _, _, ok, _ = geo.flow_endpoints(ctx.connection, a[rows], V, num.h)
                return xe, ok
            U = _newton_points(ctx, F, x2, np.reshape(guess, x2.shape), "log_map shooting")
        _, P = S.transport(a, U)
        w = np.einsum("bij,sj->bsi", P, self.stencil_logs)
        vals = S.exp(np.broadcast_to(x2[:, None, :], w.shape), w).reshape(-1, n, 2, n)
        A = np.swapaxes((vals[:, :, 0] - vals[:, :, 1]) / (2 * self.step), 1, 2)
        self.last_logs = U
        return A.reshape(shape + (n, n))


def fundamental_fields_left(ctx: LoopContext):
    """x -> A(x), the differential at the neutral of y -> L(x, a, y); columns A_j."""
    return _LeftFields(ctx)


def fundamental_fields_right(ctx: LoopContext):
    """y -> B(y), the differential at the neutral of x -> L(x, a, y)."""
    step = ctx.numerics.field_step
    stencil = _stencil(ctx.neutral, step)
    S = ctx.structure
    n = ctx.connection.dim

    def B(y):
        y = S._pts(y)
        shape = y.shape[:-1]
        y2 = y.reshape(-1, n)
        vals = S.L_outer(np.broadcast_to(ctx.neutral, y2.shape), np.broadcast_to(stencil, (len(y2),) + stencil.shape),
                         y2[:, None, :])[:, :, 0].reshape(-1, n, 2, n)
        out = np.swapaxes((vals[:, :, 0] - vals[:, :, 1]) / (2 * step), 1, 2)
        return out.reshape(shape + (n, n))

    return B


@dataclass(frozen=True)
class LoopExpResult:
    point: np.ndarray
    times: np.ndarray
    points: np.ndarray


def _loop_exp(ctx, X, steps, fields=None):
    """RK4 for f' = A(f) X, f(0) = a, batched over X of shape (B, n)."""
    fields = fields or _LeftFields(ctx)
    X = np.asarray(X, dtype=float)
    B, n = X.shape
    f = np.broadcast_to(ctx.neutral, X.shape).copy()
    dt = 1.0 / steps
    traj = [f.copy()]
    logs = np.zeros_like(X)

    def rhs(p, guess):
        A = fields(p, guess)
        return np.einsum("bij,bj->bi", A, X), fields.last_logs

    for _ in range(steps):
        # continuation guess for Log_a: previous log plus the chart increment
        k1, l1 = rhs(f, logs)
        p2 = f + 0.5 * dt * k1
        k2, _ = rhs(p2, l1 + (p2 - f))
        p3 = f + 0.5 * dt * k2
        k3, _ = rhs(p3, l1 + (p3 - f))
        p4 = f + dt * k3
        k4, _ = rhs(p4, l1 + (p4 - f))
        fn = f + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        logs = l1 + (fn - f)
        f = fn
        traj.append(f.copy())
    return f, np.stack(traj, axis=1)


def loop_exponential(ctx: LoopContext, X, steps: int = LOOP_EXP_STEPS) -> LoopExpResult:
    """Exponential map of the loop: solution at t=1 of f' = A(f) X, f(0) = neutral."""
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        a = np.array(ctx.neutral)
        return LoopExpResult(a, np.linspace(0, 1, steps + 1), np.repeat(a[None], steps + 1, 0))
    f, traj = _loop_exp(ctx, X.reshape(1, -1), steps)
    return LoopExpResult(f[0], np.linspace(0, 1, steps + 1), traj[0])


def loop_exponential_batch(ctx, X, steps=LOOP_EXP_STEPS):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.broadcast_to(ctx.neutral, X.shape).copy()
    nz = np.any(X != 0, axis=1)
    if np.any(nz):
        out[nz] = _loop_exp(ctx, X[nz], steps)[0]
    return out


def loop_logarithm(ctx, x, steps=LOOP_EXP_STEPS):
    """Inverse of the loop exponential by Newton shooting, chart-difference start."""
    x = np.atleast_2d(as_points(x, ctx.connection.dim))
    fields = _LeftFields(ctx)

    def F(rows, U):
        out = np.broadcast_to(ctx.neutral, U.shape).copy()
        nz = np.any(U != 0, axis=1)
        if np.any(nz):
            out[nz] = _loop_exp(ctx, U[nz], steps, fields)[0]
        return out, np.ones(len(rows), bool)

    return _newton_points(ctx, F, x, x - ctx.neutral, "loop logarithm")


def canonical_scalar(ctx: LoopContext, t, x, steps=LOOP_EXP_STEPS):
    """t x = LExp(t LExp^{-1} x) for the loop's own exponential."""
    x = as_points(x, ctx.connection.dim)
    t = np.asarray(t, dtype=float)
    X = loop_logarithm(ctx, x.reshape(-1, x.shape[-1]), steps).reshape(x.shape)
    tX = np.broadcast_to(t[..., None] * X, np.broadcast_shapes(t.shape + (1,), X.shape))
    return loop_exponential_batch(ctx, tX.reshape(-1, x.shape[-1]), steps).reshape(tX.shape)


def canonical_sum(ctx: LoopContext, x, y, steps=LOOP_EXP_STEPS):
    """x + y = LExp(LExp^{-1} x + LExp^{-1} y)."""
    x, y = np.broadcast_arrays(as_points(x, ctx.connection.dim), as_points(y, ctx.connection.dim))
    n = ctx.connection.dim
    logs = loop_logarithm(ctx, np.concatenate([x.reshape(-1, n), y.reshape(-1, n)]), steps)
    m = x.reshape(-1, n).shape[0]
    return loop_exponential_batch(ctx, logs[:m] + logs[m:], steps).reshape(x.shape)


def monoassociativity_residual(ctx: LoopContext, t, u, x):
    """|t x . u x - (t + u) x| in the chart, with t x = omega_t(x)."""
    tx = omega(ctx, t, x)
    ux = omega(ctx, u, x)
    lhs = loop_L(ctx, tx, ux)
    rhs = omega(ctx, np.add(t, u), x)
    return np.linalg.norm(lhs - rhs, axis=-1)


def reconstruct_connection(structure: OdularStructure, a, strict=True):
    """Tangent connection of the loop: minus the mixed second derivative of L at x = y = a.

    Gamma^i_jk(a) = -d^2 L(x, a, y)^i / dx^j dy^k, by the central 4-point
    stencil with the structure's ``mixed_step``.  Batched over ``a``.
    """
    a = as_points(a, structure.connection.dim)
    n = a.shape[-1]
    step = structure.numerics.mixed_step
    E = np.eye(n) * step
    st = np.stack([a[..., None, :] + E, a[..., None, :] - E], axis=-2)  # (..., n, 2, n)
    st = st.reshape(a.shape[:-1] + (2 * n, n))
    vals = structure.L_outer(a, st, st, strict=strict)  # (..., 2n, 2n, n)
    vals = vals.reshape(a.shape[:-1] + (n, 2, n, 2, n))
    fpp, fpm = vals[..., :, 0, :, 0, :], vals[..., :, 0, :, 1, :]
    fmp, fmm = vals[..., :, 1, :, 0, :], vals[..., :, 1, :, 1, :]
    d = geo.mixed_stencil(fpp, fpm, fmp, fmm, step)  # (..., j, k, i)
    return -np.moveaxis(d, -1, -3)


def rebuild_connection(structure: OdularStructure, a, radius, spacing=0.05):
    """Tabulate the tangent connection on a grid around a and interpolate it.

    The grid covers the box of half-width 2 * radius + spacing, enough for
    every L, omega, Lambda evaluation on arguments within ``radius``.
    """
    a = as_points(a, structure.connection.dim)
    n = a.shape[0]
    half = int(np.ceil((2 * radius + spacing) / spacing))
    axis = np.arange(-half, half + 1) * spacing
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1) + a
    G = reconstruct_connection(structure, mesh, strict=False)
    origin = a - half * spacing
    return grid_connection(origin, spacing, G, name=f"rebuilt:{structure.connection.name}",
                           trust_radius=structure.connection.trust_radius)


def verify_structure_rebuild(conn: Connection, a, sample, radius, *, spacing=0.05, tol=1e-3,
                             numerics: Numerics = DEFAULT_NUMERICS) -> ResidualReport:
    """Compare the odular structure of ``conn`` with that of its rebuilt tangent connection.

    ``sample`` is a sequence of (x, y, t).  Reports the sup chart distance
    between the two structures' L, omega and Lambda over the sample.
    """
    report = ResidualReport("structure-rebuild")
    S1 = OdularStructure(conn, numerics)
    a = as_points(a, conn.dim)
    S2 = OdularStructure(rebuild_connection(S1, a, radius, spacing), numerics)
    xs = np.array([s[0] for s in sample], dtype=float)
    ys = np.array([s[1] for s in sample], dtype=float)
    ts = np.array([s[2] for s in sample], dtype=float)
    meta = {"samples": len(sample), "spacing": spacing, "radius": radius}
    ops = {
        "L": lambda S: S.L(xs, a, ys),
        "omega": lambda S: S.omega(ts, a, xs),
        "Lambda": lambda S: S.Lambda(xs, a, ys),
    }
    anchors = {
        "L": "L(x,a,y) of rebuilt connection = L(x,a,y)",
        "omega": "omega_t(a,z) of rebuilt connection = omega_t(a,z)",
        "Lambda": "Lambda(x,a,y) of rebuilt connection = Lambda(x,a,y)",
    }
    for key, op in ops.items():
        report.run(f"structure-rebuild.{key}", anchors[key], tol,
                   lambda op=op: float(np.max(np.linalg.norm(op(S1) - op(S2), axis=-1))), meta)
    return report


def verify_connection_recovery(conn: Connection, points, *, tol=5e-4,
                               numerics: Numerics = DEFAULT_NUMERICS) -> ResidualReport:
    """Max component error between the reconstructed tangent connection and Gamma at ``points``."""
    report = ResidualReport("connection-recovery")
    pts = as_points(points, conn.dim).reshape(-1, conn.dim)
    S = OdularStructure(conn, numerics)
    meta = {"points": len(pts), "mixed_step": numerics.mixed_step, "h": numerics.h}

    def err():
        return float(np.max(np.abs(reconstruct_connection(S, pts) - eval_gamma(conn, pts))))

    report.run("connection-recovery.gamma", "-d2 L(x,a,y)/dx dy at x=y=a equals Gamma(a)", tol, err, meta)
    return report
