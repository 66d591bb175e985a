"""Command-line front end: ``geoloop verify | geodesic | jacobi``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import geo, jacobi, loops
from .errors import DomainExitError, GeoloopError
from .manifold import CATALOG_NAMES, TangentVector, catalog
from .report import ResidualReport, fmt

log = logging.getLogger("geoloop")


@dataclass(frozen=True)
class RunConfig:
    manifold: str
    point: tuple
    radius: float
    h: float = geo.H_DEFAULT
    fd_step: float = geo.MIXED_STEP
    ds: float = 1e-3
    dt: float = 1e-2
    seed: int = 0
    epsilon: float = 0.1
    out: Optional[str] = None
    format: str = "json"

    def numerics(self):
        return geo.Numerics(h=self.h, mixed_step=self.fd_step)


class UsageError(Exception):
    pass


def _vector(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed vector literal {text!r}; expected e.g. 0.1,0.2")
    if not vals or not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"malformed vector literal {text!r}")
    return vals


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (v > 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _add_common(p):
    p.add_argument("--manifold", required=True, help=f"one of: {', '.join(CATALOG_NAMES)}")
    p.add_argument("--point", type=_vector, help="base point, comma separated (default: catalog base point)")
    p.add_argument("--radius", type=_positive, help="sampling radius (default: trust radius)")
    p.add_argument("--h", type=_positive, default=geo.H_DEFAULT, help="RK4 step")
    p.add_argument("--fd-step", type=_positive, default=geo.MIXED_STEP, help="mixed-derivative step")
    p.add_argument("--ds", type=_positive, default=1e-3, help="variation step in s")
    p.add_argument("--dt", type=_positive, default=1e-2, help="variation/output step in t")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.1, help="poly-perturbed2 strength")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser():
    parser = argparse.ArgumentParser(prog="geoloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run every residual suite and write a report")
    _add_common(v)
    g = sub.add_parser("geodesic", help="integrate a geodesic and write CSV samples")
    _add_common(g)
    g.add_argument("--velocity", type=_vector, required=True)
    g.add_argument("--t-end", type=_positive, default=1.0)
    j = sub.add_parser("jacobi", help="solve a Jacobi field and write CSV samples")
    _add_common(j)
    j.add_argument("--velocity", type=_vector, required=True)
    j.add_argument("--X0", type=_vector, required=True)
    j.add_argument("--V0", type=_vector, required=True)
    j.add_argument("--t-end", type=_positive, default=1.0)
    return parser


def make_config(args) -> RunConfig:
    if args.manifold not in CATALOG_NAMES:
        raise UsageError(f"unknown manifold {args.manifold!r}; known: {', '.join(CATALOG_NAMES)}")
    entry = catalog(args.manifold, args.epsilon)
    conn = entry.connection
    point = tuple(entry.base_point) if args.point is None else args.point
    if len(point) != conn.dim:
        raise UsageError(f"--point needs {conn.dim} coordinates")
    if not conn.inside(np.array(point)):
        raise UsageError(f"--point {point} is outside the chart domain of {args.manifold}")
    radius = conn.trust_radius if args.radius is None else args.radius
    if radius > conn.trust_radius:
        raise UsageError(f"--radius {radius} exceeds the trust radius {conn.trust_radius} of {args.manifold}")
    return RunConfig(args.manifold, tuple(float(p) for p in point), float(radius), args.h, args.fd_step,
                     args.ds, args.dt, args.seed, args.epsilon, args.out, args.format)


# -- verify ----------------------------------------------------------------

def sample_ball(rng, center, radius, count):
    """Uniform samples from the chart ball of given radius."""
    n = len(center)
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / n)
    return np.asarray(center) + r * d


def _directions(n, radius):
    e = np.eye(n)
    zeta = 0.5 * radius * e[1 % n]
    xi = 0.5 * radius * e[0]
    eta = 0.25 * radius * (e[0] + e[1 % n]) / np.linalg.norm(e[0] + e[1 % n])
    return zeta, xi, eta


def run_verify(cfg: RunConfig) -> ResidualReport:
    start = time.perf_counter()
    entry = catalog(cfg.manifold, cfg.epsilon)
    conn = entry.connection
    num = cfg.numerics()
    a = np.array(cfg.point)
    r = cfg.radius
    n = conn.dim
    rng = np.random.default_rng(cfg.seed)
    report = ResidualReport("verify", config={k: v for k, v in asdict(cfg).items() if k not in ("out", "format")})
    ctx = loops.LoopContext(conn, a, r, num)
    S = ctx.structure

    # neutral axioms: x, y within the radius (half the radius keeps L inside it)
    xs = sample_ball(rng, a, 0.5 * r, 20)
    ys = sample_ball(rng, a, 0.5 * r, 20)
    report.run("loop.left-neutral", "L(a,a,y) = y", 1e-9,
               lambda: float(np.max(np.linalg.norm(S.L(a, a, ys) - ys, axis=-1))), {"samples": 20})
    report.run("loop.right-neutral", "L(x,a,a) = x", 1e-9,
               lambda: float(np.max(np.linalg.norm(S.L(xs, a, a) - xs, axis=-1))), {"samples": 20})

    # monoassociativity
    mx = sample_ball(rng, a, 0.4 * r, 5)
    pairs = [(0.3, 0.4), (-0.5, 0.7), (0.25, 0.25)]

    def mono():
        tt = np.array([p[0] for p in pairs])[:, None]
        uu = np.array([p[1] for p in pairs])[:, None]
        return float(np.max(loops.monoassociativity_residual(ctx, tt, uu, mx[None])))

    report.run("loop.monoassociativity", "t x . u x = (t+u) x", 1e-7, mono, {"pairs": pairs, "samples": 5})

    # connection recovery and rebuilt structure
    pts = sample_ball(rng, a, 0.5 * r, 10)
    report.extend(loops.verify_connection_recovery(conn, pts, numerics=num))
    sx = sample_ball(rng, a, 0.5 * r, 10)
    sy = sample_ball(rng, a, 0.5 * r, 10)
    st = rng.uniform(-1.0, 1.0, 10)
    report.extend(loops.verify_structure_rebuild(conn, a, list(zip(sx, sy, st)), 0.5 * r, numerics=num))

    # loop exponential and its canonical operations
    X = sample_ball(rng, np.zeros(n), 0.5 * r, 10)

    def lexp():
        return float(np.max(np.linalg.norm(loops.loop_exponential_batch(ctx, X) - S.exp(a, X), axis=-1)))

    report.run("loop.exponential", "loop exponential = Exp_a", 1e-6, lexp, {"samples": 10})
    cx = sample_ball(rng, a, 0.3 * r, 2)
    cy = sample_ball(rng, a, 0.3 * r, 2)

    def scalar():
        ts = np.array([-0.5, 0.5, 2.0])[:, None]
        return float(np.max(np.linalg.norm(loops.canonical_scalar(ctx, ts, cx[None]) - S.omega(ts, a, cx[None]),
                                           axis=-1)))

    def csum():
        return float(np.max(np.linalg.norm(loops.canonical_sum(ctx, cx, cy) - S.Lambda(cx, a, cy), axis=-1)))

    report.run("loop.canonical-scalar", "canonical t x = omega_t(a,x)", 1e-6, scalar, {"samples": 2})
    report.run("loop.canonical-sum", "canonical x + y = Lambda(x,a,y)", 1e-6, csum, {"samples": 2})

    # Jacobi fields and variations
    zeta, xi, eta = _directions(n, r)
    report.extend(jacobi.verify_jacobi_variation(conn, a, zeta, xi, ds=cfg.ds, dt=cfg.dt, h=cfg.h))
    report.extend(jacobi.verify_transported_variation(conn, a, zeta, xi, ds=cfg.ds, dt=cfg.dt,
                                                      s_max=5 * cfg.ds, h=cfg.h))
    report.extend(jacobi.verify_jacobi_generates_structure(conn, a, zeta, xi, eta, h=cfg.h, ds=cfg.ds,
                                                           dt=cfg.dt, numerics=num))

    def natural():
        path = geo.integrate_geodesic(conn, TangentVector(a, xi), 1.0, cfg.h, frame=False)
        return float(max(np.max(jacobi.jacobi_residual(f)) for f in jacobi.natural_fields(path)))

    report.run("jacobi.natural-fields", "Y and tY solve D^2X/dt^2 + R(X,Y)Y = 0", 1e-6, natural)

    report.sorted()
    report.elapsed_s = time.perf_counter() - start
    return report


# -- geodesic / jacobi -----------------------------------------------------

def _csv_rows(header, rows, trailer=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    if trailer:
        buf.write(trailer + "\n")
    return buf.getvalue()


def _output_times(t_end, dt):
    m = max(1, int(np.ceil(t_end / dt - 1e-9)))
    return np.linspace(0.0, t_end, m + 1)


def run_geodesic(cfg: RunConfig, velocity, t_end):
    entry = catalog(cfg.manifold, cfg.epsilon)
    conn = entry.connection
    n = conn.dim
    if len(velocity) != n:
        raise UsageError(f"--velocity needs {n} components")
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
    init = TangentVector(np.array(cfg.point), np.array(velocity))
    try:
        path = geo.integrate_geodesic(conn, init, t_end, cfg.h, frame=False)
        trailer, ok = None, True
    except DomainExitError as exc:
        path, ok = exc.partial, False
        trailer = f"# domain-exit t={fmt(exc.t_exit)}"
        if path is None:
            return _csv_rows(header, [], trailer), False
    ts = _output_times(path.t_end, cfg.dt)
    rows = np.column_stack([ts, path.position(ts), path.velocity(ts)])
    return _csv_rows(header, rows, trailer), ok


def run_jacobi(cfg: RunConfig, velocity, X0, V0, t_end):
    entry = catalog(cfg.manifold, cfg.epsilon)
    conn = entry.connection
    n = conn.dim
    for name, vec in (("--velocity", velocity), ("--X0", X0), ("--V0", V0)):
        if len(vec) != n:
            raise UsageError(f"{name} needs {n} components")
    init = TangentVector(np.array(cfg.point), np.array(velocity))
    path = geo.integrate_geodesic(conn, init, t_end, cfg.h, frame=False)
    field = jacobi.jacobi_solve(conn, path, X0, V0)
    res = jacobi.jacobi_residual(field)
    header = (["t"] + [f"X{i + 1}" for i in range(n)] + [f"DX{i + 1}" for i in range(n)] + ["residual"])
    cols = [path.times, field.X, field.DX, res]
    # the metric is known for some catalog entries; expose its norm for plotting
    forms = entry.closed_forms
    if forms is not None and forms.metric_factor is not None:
        lam = np.array([forms.metric_factor(p) for p in path.positions])
        header.append("metric_norm")
        cols.append(lam * np.linalg.norm(field.X, axis=-1))
    rows = np.column_stack(cols)
    stride = max(1, int(round(cfg.dt / path.h)))
    keep = np.unique(np.append(np.arange(0, len(rows), stride), len(rows) - 1))
    return _csv_rows(header, rows[keep])


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _setup_logging():
    level = os.environ.get("GEOLOOP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = make_config(args)
        if args.command == "verify":
            report = run_verify(cfg)
            _write(report.to_json() if cfg.format == "json" else report.to_csv(), cfg.out)
            return 0 if report.passed else 1
        if args.command == "geodesic":
            text, ok = run_geodesic(cfg, args.velocity, args.t_end)
            _write(text, cfg.out)
            return 0 if ok else 1
        text = run_jacobi(cfg, args.velocity, args.X0, args.V0, args.t_end)
        _write(text, cfg.out)
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"geoloop: error: {exc}", file=sys.stderr)
        return 2
    except (GeoloopError, ValueError) as exc:
        print(f"geoloop: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
