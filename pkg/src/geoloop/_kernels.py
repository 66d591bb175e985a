"""Compiled inner loops.

Every connection is presented to the kernels as ``(kind, params)``: an integer
selecting the coefficient family and a flat float64 parameter vector.  Keeping
the dispatch inside one compiled function lets all kernels be cached on disk.
"""
import numpy as np
from numba import njit

FLAT = 0
CONFORMAL_SPHERE = 1
HALF_SPACE = 2
POLYNOMIAL = 3
GRID = 4

ESCAPE = 1e8


@njit(cache=True, error_model='numpy')
def _grid_gamma(params, x, G):
    n = G.shape[0]
    nn = n * n * n
    for i in range(n):
        for j in range(n):
            for k in range(n):
                G[i, j, k] = 0.0
    base = 0
    stride = 1
    idx = np.empty(n, np.int64)
    w = np.empty(n)
    strides = np.empty(n, np.int64)
    for d in range(n - 1, -1, -1):
        m = int(params[d])
        strides[d] = stride
        stride *= m
    for d in range(n):
        m = int(params[d])
        o = params[n + d]
        s = params[2 * n + d]
        u = (x[d] - o) / s
        if not (u >= 0.0 and u <= m - 1):
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        G[i, j, k] = np.nan
            return
        c = int(np.floor(u))
        if c > m - 2:
            c = m - 2
        idx[d] = c
        w[d] = u - c
        base += c * strides[d]
    off = 3 * n
    for corner in range(1 << n):
        weight = 1.0
        node = base
        for d in range(n):
            if (corner >> d) & 1:
                weight *= w[d]
                node += strides[d]
            else:
                weight *= 1.0 - w[d]
        if weight == 0.0:
            continue
        start = off + node * nn
        q = 0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    G[i, j, k] += weight * params[start + q]
                    q += 1


@njit(cache=True, inline='always', error_model='numpy')
def gamma_at(kind, params, x, G):
    # only x[:n] is read, n = G.shape[0]; callers may pass a longer state vector
    n = G.shape[0]
    if kind == FLAT:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    G[i, j, k] = 0.0
    elif kind == CONFORMAL_SPHERE:
        r2 = 0.0
        for i in range(n):
            r2 += x[i] * x[i]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    G[i, j, k] = 0.0
        for i in range(n):
            for j in range(n):
                d = -2.0 * x[j] / (1.0 + r2)
                G[i, i, j] += d
                G[i, j, i] += d
                G[j, i, i] -= d
    elif kind == HALF_SPACE:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    G[i, j, k] = 0.0
        d = -1.0 / x[n - 1]
        for i in range(n):
            G[i, i, n - 1] += d
            G[i, n - 1, i] += d
            G[n - 1, i, i] -= d
    elif kind == POLYNOMIAL:
        n3 = n * n * n
        o1 = n3
        o2 = n3 + n3 * n
        q = 0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    acc = params[q]
                    for l in range(n):
                        acc += params[o1 + q * n + l] * x[l]
                        for m in range(n):
                            acc += params[o2 + (q * n + l) * n + m] * x[l] * x[m]
                    G[i, j, k] = acc
                    q += 1
    else:
        _grid_gamma(params, x, G)


@njit(cache=True, inline='always', error_model='numpy')
def inside(kind, params, x, n):
    for i in range(n):
        if not np.isfinite(x[i]) or abs(x[i]) > ESCAPE:
            return False
    if kind == HALF_SPACE:
        return x[n - 1] > 0.0
    if kind == GRID:
        for d in range(n):
            m = params[d]
            o = params[n + d]
            s = params[2 * n + d]
            if x[d] < o or x[d] > o + (m - 1) * s:
                return False
    return True


@njit(cache=True, error_model='numpy')
def gamma_derivs(kind, params, x, fdh, dG):
    """dG[l, i, j, k] = d_l Gamma^i_jk by central differences."""
    n = x.shape[0]
    xt = x.copy()
    Gp = np.empty((n, n, n))
    Gm = np.empty((n, n, n))
    for l in range(n):
        xt[l] = x[l] + fdh
        gamma_at(kind, params, xt, Gp)
        xt[l] = x[l] - fdh
        gamma_at(kind, params, xt, Gm)
        xt[l] = x[l]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    dG[l, i, j, k] = (Gp[i, j, k] - Gm[i, j, k]) / (2.0 * fdh)


@njit(cache=True, error_model='numpy')
def riemann_at(kind, params, x, fdh, G, dG, R):
    n = x.shape[0]
    gamma_at(kind, params, x, G)
    gamma_derivs(kind, params, x, fdh, dG)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    acc = dG[k, i, l, j] - dG[l, i, k, j]
                    for m in range(n):
                        acc += G[i, k, m] * G[m, l, j] - G[i, l, m] * G[m, k, j]
                    R[i, j, k, l] = acc


@njit(cache=True, error_model='numpy')
def inside_batch(kind, params, xs):
    B, n = xs.shape
    out = np.empty(B, np.bool_)
    for b in range(B):
        out[b] = inside(kind, params, xs[b], n)
    return out


@njit(cache=True, error_model='numpy')
def gamma_batch(kind, params, xs):
    B, n = xs.shape
    out = np.empty((B, n, n, n))
    G = np.empty((n, n, n))
    for b in range(B):
        gamma_at(kind, params, xs[b], G)
        out[b] = G
    return out


@njit(cache=True, error_model='numpy')
def riemann_batch(kind, params, xs, fdh):
    B, n = xs.shape
    out = np.empty((B, n, n, n, n))
    G = np.empty((n, n, n))
    dG = np.empty((n, n, n, n))
    R = np.empty((n, n, n, n))
    for b in range(B):
        riemann_at(kind, params, xs[b], fdh, G, dG, R)
        out[b] = R
    return out


@njit(cache=True, inline='always', error_model='numpy')
def _geo_rhs(kind, params, y, n, frame, G, dy):
    gamma_at(kind, params, y, G)
    for i in range(n):
        dy[i] = y[n + i]
        acc = 0.0
        for j in range(n):
            vj = y[n + j]
            for k in range(n):
                acc -= G[i, j, k] * vj * y[n + k]
        dy[n + i] = acc
    if frame:
        p0 = 2 * n
        for i in range(n):
            for m in range(n):
                acc = 0.0
                for j in range(n):
                    vj = y[n + j]
                    for k in range(n):
                        acc -= G[i, j, k] * vj * y[p0 + k * n + m]
                dy[p0 + i * n + m] = acc


@njit(cache=True, error_model='numpy')
def _jac_rhs(kind, params, y, n, fdh, G, dG, R, dy):
    # state (x, v, X, W) with W = DX/dt + T(X, v)
    riemann_at(kind, params, y[:n], fdh, G, dG, R)
    for i in range(n):
        dy[i] = y[n + i]
        a = 0.0
        dX = y[3 * n + i]
        dW = 0.0
        for j in range(n):
            vj = y[n + j]
            Xj = y[2 * n + j]
            for k in range(n):
                g = G[i, j, k]
                a -= g * vj * y[n + k]
                dX -= g * Xj * y[n + k]
                dW -= g * vj * y[3 * n + k]
                for l in range(n):
                    dW -= R[i, j, k, l] * vj * y[2 * n + k] * y[n + l]
        dy[n + i] = a
        dy[2 * n + i] = dX
        dy[3 * n + i] = dW


@njit(cache=True, inline='always', error_model='numpy')
def _state_ok(kind, params, y, n):
    for q in range(y.shape[0]):
        if not np.isfinite(y[q]):
            return False
    return inside(kind, params, y, n)


@njit(cache=True, error_model='numpy')
def geodesic_flow(kind, params, x0, v0, h, nsteps, frame, store):
    """Fixed-step RK4 for the geodesic equation, optionally with a transport frame.

    Returns (samples, derivs, end, status, t_exit); samples/derivs have a
    zero-length time axis unless ``store``.  status is 0 on success, 1 when the
    trajectory left the chart domain.
    """
    B, n = x0.shape
    L = 2 * n + (n * n if frame else 0)
    ns = nsteps + 1 if store else 0
    samples = np.full((B, ns, L), np.nan)
    derivs = np.full((B, ns, L), np.nan)
    end = np.empty((B, L))
    status = np.zeros(B, np.int64)
    t_exit = np.full(B, np.nan)
    G = np.empty((n, n, n))
    y = np.empty(L)
    yt = np.empty(L)
    k1 = np.empty(L)
    k2 = np.empty(L)
    k3 = np.empty(L)
    k4 = np.empty(L)
    for b in range(B):
        for i in range(n):
            y[i] = x0[b, i]
            y[n + i] = v0[b, i]
        if frame:
            for i in range(n):
                for m in range(n):
                    y[2 * n + i * n + m] = 1.0 if i == m else 0.0
        if not _state_ok(kind, params, y, n):
            status[b] = 1
            t_exit[b] = 0.0
            end[b] = y
            continue
        for s in range(nsteps):
            _geo_rhs(kind, params, y, n, frame, G, k1)
            if store:
                samples[b, s] = y
                derivs[b, s] = k1
            for q in range(L):
                yt[q] = y[q] + 0.5 * h * k1[q]
            _geo_rhs(kind, params, yt, n, frame, G, k2)
            for q in range(L):
                yt[q] = y[q] + 0.5 * h * k2[q]
            _geo_rhs(kind, params, yt, n, frame, G, k3)
            for q in range(L):
                yt[q] = y[q] + h * k3[q]
            _geo_rhs(kind, params, yt, n, frame, G, k4)
            for q in range(L):
                yt[q] = y[q] + h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            if not _state_ok(kind, params, yt, n):
                status[b] = 1
                t_exit[b] = (s + 1) * h
                break
            for q in range(L):
                y[q] = yt[q]
        end[b] = y
        if store and status[b] == 0:
            _geo_rhs(kind, params, y, n, frame, G, k1)
            samples[b, nsteps] = y
            derivs[b, nsteps] = k1
    return samples, derivs, end, status, t_exit


@njit(cache=True, error_model='numpy')
def jacobi_flow(kind, params, x0, v0, X0, W0, h, nsteps, fdh):
    """RK4 for the geodesic together with a Jacobi field in (X, W) form."""
    B, n = x0.shape
    L = 4 * n
    samples = np.full((B, nsteps + 1, L), np.nan)
    derivs = np.full((B, nsteps + 1, L), np.nan)
    status = np.zeros(B, np.int64)
    t_exit = np.full(B, np.nan)
    G = np.empty((n, n, n))
    dG = np.empty((n, n, n, n))
    R = np.empty((n, n, n, n))
    y = np.empty(L)
    yt = np.empty(L)
    k1 = np.empty(L)
    k2 = np.empty(L)
    k3 = np.empty(L)
    k4 = np.empty(L)
    for b in range(B):
        for i in range(n):
            y[i] = x0[b, i]
            y[n + i] = v0[b, i]
            y[2 * n + i] = X0[b, i]
            y[3 * n + i] = W0[b, i]
        if not _state_ok(kind, params, y, n):
            status[b] = 1
            t_exit[b] = 0.0
            continue
        for s in range(nsteps):
            _jac_rhs(kind, params, y, n, fdh, G, dG, R, k1)
            samples[b, s] = y
            derivs[b, s] = k1
            for q in range(L):
                yt[q] = y[q] + 0.5 * h * k1[q]
            _jac_rhs(kind, params, yt, n, fdh, G, dG, R, k2)
            for q in range(L):
                yt[q] = y[q] + 0.5 * h * k2[q]
            _jac_rhs(kind, params, yt, n, fdh, G, dG, R, k3)
            for q in range(L):
                yt[q] = y[q] + h * k3[q]
            _jac_rhs(kind, params, yt, n, fdh, G, dG, R, k4)
            for q in range(L):
                yt[q] = y[q] + h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            if not _state_ok(kind, params, yt, n):
                status[b] = 1
                t_exit[b] = (s + 1) * h
                break
            for q in range(L):
                y[q] = yt[q]
        if status[b] == 0:
            _jac_rhs(kind, params, y, n, fdh, G, dG, R, k1)
            samples[b, nsteps] = y
            derivs[b, nsteps] = k1
    return samples, derivs, status, t_exit
