"""Geodesics, exponential and logarithm maps, parallel transport, stencils."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .errors import DomainExitError, NoConvergenceError, NumericsError, RangeError
from .manifold import Connection, TangentVector, as_points

H_DEFAULT = 1e-3
NEWTON_TOL = 1e-12
NEWTON_ACCEPT = 1e-10
NEWTON_MAX_ITER = 50
JAC_STEP = 1e-6
MIXED_STEP = 1e-3


@dataclass(frozen=True)
class Numerics:
    """Step sizes and solver settings shared by the higher-level operations."""

    h: float = H_DEFAULT
    newton_tol: float = NEWTON_TOL
    newton_max_iter: int = NEWTON_MAX_ITER
    jac_step: float = JAC_STEP
    mixed_step: float = MIXED_STEP
    field_step: float = 1e-4

    def __post_init__(self):
        for name in ("h", "newton_tol", "jac_step", "mixed_step", "field_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


DEFAULT_NUMERICS = Numerics()


def step_count(t_end, h):
    # at least 10 steps; the effective step divides t_end exactly
    return max(10, int(math.ceil(t_end / h - 1e-9)))


# -- dense output -----------------------------------------------------------

def _locate(t, t0, h, N):
    u = (t - t0) / h
    r = np.round(u)
    u = np.where(np.abs(u - r) < 1e-9, r, u)
    i = np.clip(np.floor(u).astype(int), 0, N - 1)
    return i, u - i


def hermite(t0, h, values, derivs, t):
    """Cubic Hermite interpolation of uniformly sampled values with derivatives.

    ``values``/``derivs`` have shape (N+1, ...); ``t`` may be scalar or 1-d.
    """
    t = np.asarray(t, dtype=float)
    N = values.shape[0] - 1
    i, s = _locate(t, t0, h, N)
    shape = (-1,) + (1,) * (values.ndim - 1)
    s_ = s.reshape(shape)
    h00 = 2 * s_**3 - 3 * s_**2 + 1
    h10 = s_**3 - 2 * s_**2 + s_
    h01 = -2 * s_**3 + 3 * s_**2
    h11 = s_**3 - s_**2
    i = i.ravel()
    y0, y1 = values[i], values[i + 1]
    d0, d1 = derivs[i], derivs[i + 1]
    out = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    return out.reshape(t.shape + values.shape[1:])


def hermite_derivative(t0, h, values, derivs, t):
    t = np.asarray(t, dtype=float)
    N = values.shape[0] - 1
    i, s = _locate(t, t0, h, N)
    s = s.reshape((-1,) + (1,) * (values.ndim - 1))
    i = i.ravel()
    g00 = (6 * s**2 - 6 * s) / h
    g10 = 3 * s**2 - 4 * s + 1
    g01 = (-6 * s**2 + 6 * s) / h
    g11 = 3 * s**2 - 2 * s
    out = g00 * values[i] + g10 * derivs[i] + g01 * values[i + 1] + g11 * derivs[i + 1]
    return out.reshape(t.shape + values.shape[1:])


@dataclass(frozen=True, eq=False)
class GeodesicPath:
    connection: Connection
    initial: TangentVector
    t_end: float
    h: float
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    frames: Optional[np.ndarray] = None
    frame_rates: Optional[np.ndarray] = None

    @property
    def times(self):
        return self.h * np.arange(self.positions.shape[0])

    @property
    def nsteps(self):
        return self.positions.shape[0] - 1

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.t_end + 1e-12):
            raise RangeError(f"t outside [0, {self.t_end}]")
        return np.clip(t, 0.0, self.t_end)

    def position(self, t):
        return hermite(0.0, self.h, self.positions, self.velocities, self._check(t))

    def velocity(self, t):
        return hermite(0.0, self.h, self.velocities, self.accelerations, self._check(t))

    def frame(self, t):
        if self.frames is None:
            raise ValueError("path was integrated without a transport frame")
        return hermite(0.0, self.h, self.frames, self.frame_rates, self._check(t))

    def end(self):
        return self.positions[-1].copy()


def _flow(conn, x0, v0, h, nsteps, frame, store):
    x0 = np.ascontiguousarray(x0, dtype=float)
    v0 = np.ascontiguousarray(v0, dtype=float)
    return K.geodesic_flow(conn.kind, conn.params, x0, v0, float(h), int(nsteps), bool(frame), bool(store))


def integrate_geodesic(conn: Connection, init: TangentVector, t_end: float, h: float = H_DEFAULT,
                       frame: bool = True) -> GeodesicPath:
    """Fixed-step RK4 solution of x'' = -Gamma(x)(x', x') on [0, t_end].

    The transport frame P(t) (columns: transported basis of the start
    tangent space) is integrated jointly unless ``frame`` is False.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not h > 0:
        raise ValueError("h must be positive")
    n = conn.dim
    N = step_count(t_end, h)
    h_eff = t_end / N
    samples, derivs, _, status, t_exit = _flow(
        conn, init.base[None], init.components[None], h_eff, N, frame, True)
    def build(k):
        s, d = samples[0, :k], derivs[0, :k]
        P = s[:, 2 * n:].reshape(-1, n, n) if frame else None
        Pd = d[:, 2 * n:].reshape(-1, n, n) if frame else None
        return GeodesicPath(conn, init, h_eff * (k - 1), h_eff, s[:, :n], s[:, n:2 * n], d[:, n:2 * n], P, Pd)
    if status[0]:
        k = int(round(t_exit[0] / h_eff))
        raise DomainExitError(t_exit[0], partial=build(k) if k >= 2 else None)
    return build(N + 1)


def flow_endpoints(conn, base, vel, h=H_DEFAULT, frame=False):
    """Batched time-1 geodesic flow. Returns (x, v, P or None, ok mask, t_exit)."""
    base = np.asarray(base, dtype=float)
    vel = np.asarray(vel, dtype=float)
    base, vel = np.broadcast_arrays(base, vel)
    n = conn.dim
    shape = base.shape[:-1]
    N = step_count(1.0, h)
    _, _, end, status, t_exit = _flow(conn, base.reshape(-1, n), vel.reshape(-1, n), 1.0 / N, N, frame, False)
    x = end[:, :n].reshape(shape + (n,))
    v = end[:, n:2 * n].reshape(shape + (n,))
    P = end[:, 2 * n:].reshape(shape + (n, n)) if frame else None
    return x, v, P, (status == 0).reshape(shape), t_exit.reshape(shape)


def exp_batch(conn, base, vel, h=H_DEFAULT):
    x, _, _, ok, t_exit = flow_endpoints(conn, base, vel, h)
    if not np.all(ok):
        raise DomainExitError(np.nanmin(t_exit[~ok]))
    return x


def exp_map(conn: Connection, X: TangentVector, h: float = H_DEFAULT) -> np.ndarray:
    """Exp_a(X): time-1 point of the geodesic with initial velocity X."""
    return exp_batch(conn, X.base, X.components, h)


# -- Newton shooting --------------------------------------------------------

def newton_solve(F: Callable, target, u0, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER,
                 jac_step=JAC_STEP, accept=NEWTON_ACCEPT):
    """Batched damped Newton iteration for F(u) = target.

    ``F(rows, U)`` evaluates element ``rows[m]`` of the batch at ``U[m]`` and
    returns (values, ok).  Forward-difference Jacobian, refreshed after each
    accepted step; the step is halved whenever the residual would grow.  Returns (u, converged, residual, iterations).
    """
    target = np.asarray(target, dtype=float)
    u = np.array(u0, dtype=float)
    B, n = target.shape
    eye = np.eye(n) * jac_step

    def values(rows, U):
        vals, ok = F(rows, U)
        res = np.where(ok, np.linalg.norm(target[rows] - vals, axis=1), np.inf)
        return vals, res

    def jacobian(rows, U, base_vals):
        # forward differences, only requested once a step is actually needed
        pts = (U[:, None, :] + eye[None]).reshape(-1, n)
        vals, ok = F(np.repeat(rows, n), pts)
        vals = vals.reshape(len(rows), n, n)
        ok = ok.reshape(len(rows), n).all(axis=1)
        return np.swapaxes(vals - base_vals[:, None, :], 1, 2) / jac_step, ok

    all_rows = np.arange(B)
    val, resid = values(all_rows, u)
    J = np.full((B, n, n), np.nan)
    step = np.zeros_like(u)
    lam = np.ones(B)
    done = resid <= tol
    failed = ~np.isfinite(resid)
    need_step = ~done & ~failed
    it = 0
    while it < max_iter:
        new = np.flatnonzero(need_step & ~done & ~failed)
        if new.size:
            Jn, okJ = jacobian(new, u[new], val[new])
            J[new] = Jn
            failed[new[~okJ]] = True
            for m in new[okJ]:
                try:
                    step[m] = np.linalg.solve(J[m], target[m] - val[m])
                except np.linalg.LinAlgError:
                    failed[m] = True
            need_step[new] = False
        active = np.flatnonzero(~done & ~failed)
        if active.size == 0:
            break
        it += 1
        trial = u[active] + lam[active, None] * step[active]
        tval, tres = values(active, trial)
        better = tres < resid[active]
        acc = active[better]
        u[acc], val[acc], resid[acc] = trial[better], tval[better], tres[better]
        lam[acc] = 1.0
        need_step[acc] = True
        rej = active[~better]
        lam[rej] *= 0.5
        # stagnation at roundoff level counts as converged if within the accept bound
        stalled = rej[lam[rej] < 1e-6]
        done[stalled[resid[stalled] <= accept]] = True
        failed[stalled[resid[stalled] > accept]] = True
        done |= resid <= tol
    converged = done | (resid <= accept)
    return u, converged, resid, it


def log_batch(conn, a, y, numerics: Numerics = DEFAULT_NUMERICS, strict=True):
    """Batched Exp_a^{-1} y by Newton shooting on the initial velocity."""
    a, y = np.broadcast_arrays(as_points(a, conn.dim), as_points(y, conn.dim))
    shape = a.shape[:-1]
    a2 = a.reshape(-1, conn.dim)
    y2 = y.reshape(-1, conn.dim)

    def F(rows, U):
        x, _, _, ok, _ = flow_endpoints(conn, a2[rows], U, numerics.h)
        return x, ok

    u, conv, resid, it = newton_solve(F, y2, y2 - a2, numerics.newton_tol, numerics.newton_max_iter,
                                      numerics.jac_step)
    if strict and not np.all(conv):
        bad = np.flatnonzero(~conv)
        r = resid[bad[0]]
        if not np.isfinite(r):
            raise DomainExitError(np.nan, "domain exit during shooting")
        raise NoConvergenceError(np.max(resid[bad]), it, "log_map shooting")
    u = u.reshape(shape + (conn.dim,))
    if strict:
        return u
    return u, conv.reshape(shape)


def log_map(conn: Connection, a, y, numerics: Numerics = DEFAULT_NUMERICS) -> TangentVector:
    a = as_points(a, conn.dim)
    return TangentVector(a, log_batch(conn, a, y, numerics))


# -- parallel transport -----------------------------------------------------

def parallel_transport(conn: Connection, path: GeodesicPath, v: TangentVector, t) -> TangentVector:
    """Transport v from the start of ``path`` to parameter t along it."""
    if path.frames is None:
        raise ValueError("path has no transport frame")
    if not np.allclose(v.base, path.initial.base, rtol=0, atol=1e-12):
        raise ValueError("vector must be based at the path's start point")
    P = path.frame(t)
    return TangentVector(path.position(t), P @ v.components)


def transport_frames(conn, base, vel, h=H_DEFAULT):
    """Batched endpoint x(1) and transport matrix P(1) along Exp(base, t*vel)."""
    x, _, P, ok, t_exit = flow_endpoints(conn, base, vel, h, frame=True)
    if not np.all(ok):
        raise DomainExitError(np.nanmin(t_exit[~ok]))
    return x, P


# -- finite-difference stencils --------------------------------------------

def mixed_stencil(fpp, fpm, fmp, fmm, step):
    return (fpp - fpm - fmp + fmm) / (4.0 * step * step)


def fd_second_mixed(f, x0, y0, j, k, step=MIXED_STEP):
    """Central 4-point estimate of d^2 f / dx^j dy^k at (x0, y0).

    ``f(x, y)`` must accept stacked arguments of shape (4, n).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    ej = np.zeros_like(x0)
    ej[j] = step
    ek = np.zeros_like(y0)
    ek[k] = step
    xs = np.stack([x0 + ej, x0 + ej, x0 - ej, x0 - ej])
    ys = np.stack([y0 + ek, y0 - ek, y0 + ek, y0 - ek])
    vals = np.asarray(f(xs, ys), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericsError("non-finite samples in mixed-derivative stencil")
    return mixed_stencil(vals[0], vals[1], vals[2], vals[3], step)


def d1_uniform(values, step, axis=0):
    """First derivative of uniformly sampled data, fourth order everywhere.

    Central 5-point stencil inside, one-sided 5-point stencils at the two
    samples nearest each end.  Needs at least 5 samples.
    """
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    m = f.shape[0]
    if m < 5:
        raise NumericsError("need at least 5 samples")
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * step)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * step)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * step)
    out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * step)
    out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * step)
    return np.moveaxis(out, 0, axis)


def d2_uniform(values, step, axis=0):
    """Second derivative, 5-point central stencil; interior samples only."""
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if f.shape[0] < 5:
        raise NumericsError("need at least 5 samples")
    out = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * step * step)
    return np.moveaxis(out, 0, axis)


def geodesic_residual(conn, positions, step):
    """|x'' + Gamma(x)(x', x')| at interior samples of a uniformly sampled curve."""
    from .manifold import eval_gamma

    x = np.asarray(positions, dtype=float)
    v = d1_uniform(x, step)[2:-2]
    a = d2_uniform(x, step)
    G = eval_gamma(conn, x[2:-2])
    r = a + np.einsum("tijk,tj,tk->ti", G, v, v)
    return np.linalg.norm(r, axis=-1)
