"""Connection presentations, the built-in catalog, and curvature."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .errors import CatalogLookupError, EvaluationDomainError, NumericsError

FLAT_TRUST = 1e9
GAMMA_FD_STEP = 1e-4

CATALOG_NAMES = ("flat2", "flat3", "sphere2-stereographic", "hyperbolic-halfplane", "poly-perturbed2")


def as_points(p, dim):
    """Coerce to a float array of shape (..., dim)."""
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (dim,):
        raise ValueError(f"expected trailing dimension {dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Connection:
    """Coefficient field of an affine connection on a single chart.

    ``kind``/``params`` select a compiled coefficient family (see
    ``geoloop._kernels``); use the constructors below rather than filling
    them by hand.  No (j, k) symmetry is assumed.
    """

    dim: int
    kind: int
    params: np.ndarray
    trust_radius: float
    name: str
    fd_step: float = GAMMA_FD_STEP

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.trust_radius > 0:
            raise ValueError("trust_radius must be positive")
        params = np.ascontiguousarray(self.params, dtype=float)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    def gamma(self, p):
        return eval_gamma(self, p)

    def inside(self, p) -> bool:
        return bool(K.inside(self.kind, self.params, as_points(p, self.dim).reshape(self.dim), self.dim))

    def __repr__(self):
        return f"Connection({self.name!r}, dim={self.dim})"


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        comps = np.array(self.components, dtype=float)
        if base.shape != comps.shape or base.ndim != 1:
            raise ValueError("base and components must be 1-d of equal length")
        if not (np.all(np.isfinite(base)) and np.all(np.isfinite(comps))):
            raise ValueError("tangent vector entries must be finite")
        base.setflags(write=False)
        comps.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.base.shape[0]


@dataclass(frozen=True)
class ClosedForms:
    """Exact oracles for catalog manifolds that have them.

    ``metric_factor(x)`` returns lam with metric lam**2 * delta; it exists so
    tests can measure orthonormality and norms.  Library code never uses it.
    """

    exp: Optional[Callable] = None
    distance: Optional[Callable] = None
    transport: Optional[Callable] = None
    jacobi: Optional[Callable] = None
    metric_factor: Optional[Callable] = None


@dataclass(frozen=True)
class CatalogEntry:
    connection: Connection
    closed_forms: Optional[ClosedForms] = None
    base_point: np.ndarray = field(default=None)


# -- constructors -----------------------------------------------------------

def flat_connection(dim, name=None):
    return Connection(dim, K.FLAT, np.zeros(1), FLAT_TRUST, name or f"flat{dim}")


def sphere_stereographic_connection(dim=2, name="sphere2-stereographic"):
    """Round unit sphere in stereographic coordinates, metric 4/(1+|x|^2)^2 delta."""
    return Connection(dim, K.CONFORMAL_SPHERE, np.zeros(1), 1.0, name)


def half_space_connection(dim=2, name="hyperbolic-halfplane"):
    """Hyperbolic upper half-space, metric delta / x_n^2; domain x_n > 0."""
    return Connection(dim, K.HALF_SPACE, np.zeros(1), 0.5, name)


def polynomial_connection(c0, c1=None, c2=None, *, name="polynomial", trust_radius=1.0):
    """Gamma^i_jk(x) = c0[i,j,k] + c1[i,j,k,l] x_l + c2[i,j,k,l,m] x_l x_m."""
    c0 = np.asarray(c0, dtype=float)
    n = c0.shape[0]
    if c0.shape != (n, n, n):
        raise ValueError("c0 must have shape (n, n, n)")
    c1 = np.zeros((n,) * 4) if c1 is None else np.asarray(c1, dtype=float)
    c2 = np.zeros((n,) * 5) if c2 is None else np.asarray(c2, dtype=float)
    if c1.shape != (n,) * 4 or c2.shape != (n,) * 5:
        raise ValueError("c1/c2 shapes must be (n,)*4 and (n,)*5")
    params = np.concatenate([c0.ravel(), c1.ravel(), c2.ravel()])
    return Connection(n, K.POLYNOMIAL, params, trust_radius, name)


def grid_connection(origin, spacing, values, *, name="tabulated", trust_radius=None):
    """Multilinear interpolation of tabulated coefficients.

    ``values`` has shape (m_1, ..., m_n, n, n, n) on the regular grid
    origin + index * spacing.  Outside the grid the chart domain ends.
    """
    origin = np.asarray(origin, dtype=float)
    n = origin.shape[0]
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (n,))
    values = np.asarray(values, dtype=float)
    counts = values.shape[:n]
    if values.shape[n:] != (n, n, n) or min(counts) < 2:
        raise ValueError("values must have shape (m_1..m_n, n, n, n) with every m >= 2")
    params = np.concatenate([np.asarray(counts, float), origin, spacing, values.ravel()])
    if trust_radius is None:
        trust_radius = 0.5 * float(min((np.asarray(counts) - 1) * spacing))
    return Connection(n, K.GRID, params, trust_radius, name)


POLY_C0 = np.zeros((2, 2, 2))
POLY_C0[0, 0, 0] = 0.5
POLY_C0[0, 0, 1] = POLY_C0[0, 1, 0] = -0.3
POLY_C0[1, 0, 0] = 0.2
POLY_C0[1, 1, 1] = 0.4
POLY_C1 = np.zeros((2,) * 4)
POLY_C1[0, 1, 1, 0] = 1.0
POLY_C1[0, 0, 0, 1] = -0.5
POLY_C1[1, 0, 1, 1] = POLY_C1[1, 1, 0, 1] = 0.7
POLY_C2 = np.zeros((2,) * 5)
POLY_C2[1, 0, 0, 0, 1] = 0.8
POLY_C2[0, 0, 1, 0, 0] = POLY_C2[0, 1, 0, 0, 0] = 0.6


def poly_perturbed_connection(epsilon=0.1):
    return polynomial_connection(
        epsilon * POLY_C0, epsilon * POLY_C1, epsilon * POLY_C2,
        name="poly-perturbed2", trust_radius=1.0,
    )


# -- closed forms -----------------------------------------------------------

def _flat_forms():
    return ClosedForms(
        exp=lambda p, v, t=1.0: np.asarray(p, float) + t * np.asarray(v, float),
        distance=lambda x, y: float(np.linalg.norm(np.subtract(y, x))),
        transport=lambda p, v, w, t=1.0: np.array(w, float),
        jacobi=lambda X0, V0, t: np.asarray(X0, float) + t * np.asarray(V0, float),
        metric_factor=lambda x: 1.0,
    )


def _to_sphere(x):
    x = np.asarray(x, float)
    r2 = x @ x
    return np.append(2 * x, 1 - r2) / (1 + r2)


def _sphere_push(x, v):
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    r2 = x @ x
    d = 1 + r2
    top = 2 * v / d - 4 * x * (x @ v) / d**2
    bottom = -2 * (x @ v) / d - 2 * (1 - r2) * (x @ v) / d**2
    return np.append(top, bottom)


def _from_sphere(P):
    return P[:-1] / (1 + P[-1])


def _sphere_pull(P, W):
    return W[:-1] / (1 + P[-1]) - P[:-1] * W[-1] / (1 + P[-1]) ** 2


def _sphere_geodesic(x, v, t):
    P = _to_sphere(x)
    V = _sphere_push(x, v)
    s = np.linalg.norm(V)
    if s == 0:
        return P, V, np.zeros_like(V), 0.0
    e = V / s
    return P, V, e, s * t


def _sphere_exp(x, v, t=1.0):
    P, V, e, th = _sphere_geodesic(x, v, t)
    if th == 0:
        return np.array(x, float)
    return _from_sphere(np.cos(th) * P + np.sin(th) * e)


def _sphere_transport(x, v, w, t=1.0):
    P, V, e, th = _sphere_geodesic(x, v, t)
    W = _sphere_push(x, w)
    if th == 0 and not np.any(V):
        return np.array(w, float)
    a = W @ e
    perp = W - a * e
    Pt = np.cos(th) * P + np.sin(th) * e
    Wt = a * (-np.sin(th) * P + np.cos(th) * e) + perp
    return _sphere_pull(Pt, Wt)


def _sphere_forms():
    return ClosedForms(
        exp=_sphere_exp,
        distance=lambda x, y: float(np.arccos(np.clip(_to_sphere(x) @ _to_sphere(y), -1, 1))),
        transport=_sphere_transport,
        metric_factor=lambda x: 2.0 / (1.0 + float(np.dot(x, x))),
    )


def _halfplane_exp(p, v, t=1.0):
    x0, y0 = map(float, p)
    u, w = map(float, v)
    speed = np.hypot(u, w)
    if speed == 0:
        return np.array([x0, y0])
    # rotate the vertical geodesic i*e^{st} about i, then scale/translate
    theta = np.angle(complex(u, w) / speed / 1j) / 2
    c, sn = np.cos(theta), np.sin(theta)
    z = 1j * np.exp(speed / y0 * t)
    m = (c * z + sn) / (-sn * z + c)
    return np.array([x0 + y0 * m.real, y0 * m.imag])


def _halfplane_forms():
    def distance(p, q):
        (x1, y1), (x2, y2) = p, q
        return float(np.arccosh(1 + ((x2 - x1) ** 2 + (y2 - y1) ** 2) / (2 * y1 * y2)))

    return ClosedForms(exp=_halfplane_exp, distance=distance, metric_factor=lambda x: 1.0 / float(x[-1]))


def catalog(name, epsilon=0.1):
    if name == "flat2":
        return CatalogEntry(flat_connection(2), _flat_forms(), np.zeros(2))
    if name == "flat3":
        return CatalogEntry(flat_connection(3), _flat_forms(), np.zeros(3))
    if name == "sphere2-stereographic":
        return CatalogEntry(sphere_stereographic_connection(), _sphere_forms(), np.zeros(2))
    if name == "hyperbolic-halfplane":
        return CatalogEntry(half_space_connection(), _halfplane_forms(), np.array([0.0, 1.0]))
    if name == "poly-perturbed2":
        return CatalogEntry(poly_perturbed_connection(epsilon), None, np.zeros(2))
    raise CatalogLookupError(f"unknown manifold {name!r}; known: {', '.join(CATALOG_NAMES)}")


# -- evaluation -------------------------------------------------------------

def eval_gamma(conn: Connection, p):
    """Gamma^i_jk at p; accepts a single point or a batch of shape (..., n)."""
    pts = as_points(p, conn.dim)
    flat = np.ascontiguousarray(pts.reshape(-1, conn.dim))
    if not np.all(K.inside_batch(conn.kind, conn.params, flat)):
        raise EvaluationDomainError(f"point outside the chart domain of {conn.name}: {pts.tolist()}")
    out = K.gamma_batch(conn.kind, conn.params, flat)
    if not np.all(np.isfinite(out)):
        raise EvaluationDomainError(f"non-finite coefficients of {conn.name} at {pts.tolist()}")
    return out.reshape(pts.shape[:-1] + (conn.dim,) * 3)


def torsion(conn: Connection, p):
    G = eval_gamma(conn, p)
    return G - np.swapaxes(G, -1, -2)


def riemann(conn: Connection, p):
    """R^i_jkl at p with (R(X, Y) Z)^i = R^i_jkl Z^j X^k Y^l.

    Convention: R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y], so the unit round
    sphere gives R(X, Y) Y = X for orthonormal X, Y.
    """
    pts = as_points(p, conn.dim)
    flat = np.ascontiguousarray(pts.reshape(-1, conn.dim))
    h = conn.fd_step
    if np.any((flat + h == flat) | (flat - h == flat)):
        raise NumericsError(f"finite-difference step {h} underflows at {pts.tolist()}")
    out = K.riemann_batch(conn.kind, conn.params, flat, h)
    if not np.all(np.isfinite(out)):
        raise EvaluationDomainError(f"non-finite curvature of {conn.name} at {pts.tolist()}")
    return out.reshape(pts.shape[:-1] + (conn.dim,) * 4)


def curvature_operator(conn: Connection, p, X, Y, Z):
    """(R(X, Y) Z) at p."""
    R = riemann(conn, p)
    return np.einsum("...ijkl,...j,...k,...l->...i", R, Z, X, Y)
