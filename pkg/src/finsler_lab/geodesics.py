"""Geodesic spray, RK4 shooting, S-curvature and the asymmetric distance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InvalidMetric, NoConvergence, StepFailure, ZeroVector
from .measure import MeasureSpace, distortion_at
from .metric import MetricDescriptor
from .minkowski import TangentVector, form_hessian_half_sq, form_norm

DRIFT_TOL = 1e-6


def _first_derivs(metric: MetricDescriptor, x, y):
    """F, F_y, F_x and F_xy (index order [k, l] = d/dx^k d/dy^l) at y != 0."""
    A, b = metric.coefficients(x)
    dA = metric.a.deriv(x)
    db = metric.b.deriv(x)
    Ay = np.einsum("...ij,...j->...i", A, y)
    alpha = np.sqrt(np.einsum("...i,...i->...", y, Ay))
    ell = Ay / alpha[..., None]
    F = alpha + np.einsum("...i,...i->...", b, y)
    Fy = ell + b
    dAy = np.einsum("...ijk,...j->...ik", dA, y)  # (d_k A y)_i
    dalpha = np.einsum("...ik,...i->...k", dAy, y) / (2 * alpha[..., None])
    Fx = dalpha + np.einsum("...ik,...i->...k", db, y)
    Fxy = (
        dAy.swapaxes(-1, -2) / alpha[..., None, None]
        - dalpha[..., :, None] * ell[..., None, :] / alpha[..., None, None]
        + db.swapaxes(-1, -2)
    )
    return F, Fy, Fx, Fxy


def spray(metric: MetricDescriptor, x, y) -> np.ndarray:
    """Spray coefficients G^i; geodesics solve x'' + 2 G(x, x') = 0."""
    A, b = metric.coefficients(x)
    F, Fy, Fx, Fxy = _first_derivs(metric, x, y)
    F2_x = 2 * F[..., None] * Fx
    F2_xy = 2 * Fx[..., :, None] * Fy[..., None, :] + 2 * F[..., None, None] * Fxy
    rhs = np.einsum("...kl,...k->...l", F2_xy, y) - F2_x
    g = form_hessian_half_sq(A, b, y)
    return 0.25 * np.linalg.solve(g, rhs[..., None])[..., 0]


@dataclass(frozen=True)
class GeodesicPath:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    speed: float
    minimal: bool = True

    @property
    def endpoint(self) -> np.ndarray:
        return self.x[-1]

    def speeds(self, metric: MetricDescriptor) -> np.ndarray:
        return form_norm(*metric.coefficients(self.x), self.v)

    def to_csv(self, metric: MetricDescriptor) -> str:
        n = self.x.shape[-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["F"])
        for t, x, v, f in zip(self.t, self.x, self.v, self.speeds(metric)):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in v] + [repr(float(f))])
        return buf.getvalue()


def _rk4(metric, x, v, dt, n_steps):
    xs = np.empty((n_steps + 1,) + x.shape)
    vs = np.empty_like(xs)
    xs[0], vs[0] = x, v

    def acc(xx, vv):
        return -2.0 * spray(metric, xx, vv)

    with np.errstate(all="raise"):
        for i in range(n_steps):
            k1x, k1v = v, acc(x, v)
            k2x, k2v = v + 0.5 * dt * k1v, acc(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
            k3x, k3v = v + 0.5 * dt * k2v, acc(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
            k4x, k4v = v + dt * k3v, acc(x + dt * k3x, v + dt * k3v)
            x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            xs[i + 1], vs[i + 1] = x, v
    return xs, vs


def shoot_batch(
    space: MeasureSpace | MetricDescriptor,
    x0,
    y0,
    t_max: float,
    step: float = 0.01,
    max_halvings: int = 8,
    drift_tol: float = DRIFT_TOL,
):
    """Integrate a batch of geodesics; returns (t, xs, vs) with xs of shape (steps+1, ..., n).

    ``t_max`` may be negative (backward integration). The step is halved until
    the relative drift of F(x, x') stays below ``drift_tol``.
    """
    metric = space.metric if isinstance(space, MeasureSpace) else space
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    x0, y0 = np.broadcast_arrays(x0, y0)
    if np.any(np.all(y0 == 0, axis=-1)):
        raise ZeroVector("geodesic needs a nonzero initial velocity")
    if step <= 0:
        raise ValueError("step must be positive")
    speed0 = form_norm(*metric.coefficients(x0), y0)
    n_steps = max(1, int(np.ceil(abs(t_max) / step - 1e-9)))
    for _ in range(max_halvings + 1):
        dt = t_max / n_steps
        try:
            xs, vs = _rk4(metric, x0.copy(), y0.copy(), dt, n_steps)
            metric.check_valid(xs)
            speeds = form_norm(*metric.coefficients(xs), vs)
        except (FloatingPointError, InvalidMetric, np.linalg.LinAlgError):
            n_steps *= 2
            continue
        drift = np.max(np.abs(speeds - speed0) / speed0)
        if np.isfinite(drift) and drift < drift_tol:
            return np.linspace(0.0, t_max, n_steps + 1), xs, vs
        n_steps *= 2
    raise StepFailure(f"geodesic integration failed after {max_halvings} step halvings")


def geodesic_shoot(space: MeasureSpace, x0, y0: TangentVector | np.ndarray, t_max: float, step: float = 0.01) -> GeodesicPath:
    y = y0.y if isinstance(y0, TangentVector) else np.asarray(y0, float)
    x0 = np.asarray(x0, float)
    space.metric.check_valid(x0)
    t, xs, vs = shoot_batch(space, x0, y, t_max, step)
    speed = float(form_norm(*space.metric.coefficients(x0), y))
    return GeodesicPath(t, xs, vs, speed)


def s_curvature_at(space: MeasureSpace, x, y, scale: float = 1.0) -> np.ndarray:
    """S(x, y) = d/dt tau(gamma, gamma') at t = 0 by central differences along geodesics."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x, y = np.broadcast_arrays(x, y)
    speed = form_norm(*space.metric.coefficients(x), y)
    h = 1e-3 * scale / np.max(speed)
    _, xf, vf = shoot_batch(space, x, y, h, step=h / 4)
    _, xb, vb = shoot_batch(space, x, y, -h, step=h / 4)
    return (distortion_at(space, xf[-1], vf[-1]) - distortion_at(space, xb[-1], vb[-1])) / (2 * h)


def s_curvature(space: MeasureSpace, v: TangentVector) -> float:
    if not np.any(v.y):
        raise ZeroVector("S-curvature undefined at y = 0")
    return float(s_curvature_at(space, v.x, v.y))


# --------------------------------------------------------------------------
# distance
# --------------------------------------------------------------------------


def _path_energy(metric: MetricDescriptor, P0, P1, interior, n_seg):
    """Discrete energy N sum F(mid, dx)^2 and its gradient for a batch of paths."""
    B, n = P0.shape
    Q = interior.reshape(B, n_seg - 1, n)
    P = np.concatenate([P0[:, None], Q, P1[:, None]], axis=1)
    mid = 0.5 * (P[:, 1:] + P[:, :-1])
    d = P[:, 1:] - P[:, :-1]
    dn = np.where(np.linalg.norm(d, axis=-1, keepdims=True) < 1e-300, 1e-300, d)
    F, Fy, Fx, _ = _first_derivs(metric, mid, dn)
    E = n_seg * np.sum(F**2)
    gseg_x = 2 * n_seg * F[..., None] * 0.5 * Fx
    gseg_y = 2 * n_seg * F[..., None] * Fy
    grad = (gseg_x[:, 1:] - gseg_y[:, 1:]) + (gseg_x[:, :-1] + gseg_y[:, :-1])
    return E, grad.ravel(), F


def minimize_paths(metric: MetricDescriptor, P0, P1, init=None, n_seg: int = 32, gtol: float = 1e-13, maxiter: int = 5000):
    """Energy descent over discretized paths; returns (lengths, paths)."""
    P0 = np.atleast_2d(np.asarray(P0, float))
    P1 = np.atleast_2d(np.asarray(P1, float))
    P0, P1 = np.broadcast_arrays(P0, P1)
    B, n = P0.shape
    if init is None:
        s = np.linspace(0, 1, n_seg + 1)[1:-1]
        init = P0[:, None] + s[None, :, None] * (P1 - P0)[:, None]
    z0 = np.asarray(init, float).ravel()

    def fun(z):
        try:
            metric.check_valid(z.reshape(-1, n))
        except InvalidMetric:
            return np.inf, np.zeros_like(z)
        E, g, _ = _path_energy(metric, P0, P1, z, n_seg)
        return E, g

    if metric.is_constant:
        z = z0  # straight segments are exact geodesics of a constant Minkowski norm
    else:
        res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", options={"gtol": gtol, "ftol": 1e-16, "maxiter": maxiter})
        z = res.x
    _, _, F = _path_energy(metric, P0, P1, z, n_seg)
    Q = z.reshape(B, n_seg - 1, n)
    paths = np.concatenate([P0[:, None], Q, P1[:, None]], axis=1)
    return F.sum(axis=1), paths


def _dijkstra_path(space: MeasureSpace, x1, x2, cells: int = 24) -> np.ndarray:
    """Coarse grid path from x1 to x2 with F-edge weights (asymmetric)."""
    metric = space.metric
    lo = np.minimum(x1, x2)
    hi = np.maximum(x1, x2)
    pad = 0.5 * np.linalg.norm(x2 - x1) + 1e-9
    lo, hi = lo - pad, hi + pad
    r = space.domain_radius
    lo, hi = np.maximum(lo, -r), np.minimum(hi, r)
    axes = [np.linspace(lo[i], hi[i], cells + 1) for i in range(space.n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, space.n)
    inside = np.linalg.norm(grid, axis=1) < r
    try:
        inside &= metric.a.valid_at(grid)
    except Exception:
        pass
    pts = np.vstack([x1, x2, grid[inside]])
    idx = np.arange(len(pts))
    h = (hi - lo) / cells
    steps = []
    rng = range(-2, 3)
    import itertools

    for off in itertools.product(rng, repeat=space.n):
        if any(off) and np.gcd.reduce(np.abs(off)) == 1:
            steps.append(np.asarray(off, float) * h)
    rows, cols, wts = [], [], []
    tol = 1e-9 * max(1.0, float(np.max(h)))
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    reach = 2.3 * float(np.max(h)) * np.sqrt(space.n)
    pairs = tree.query_pairs(reach, output_type="ndarray")
    for i, j in ((pairs[:, 0], pairs[:, 1]), (pairs[:, 1], pairs[:, 0])):
        d = pts[j] - pts[i]
        rows.append(i)
        cols.append(j)
        wts.append(form_norm(*metric.coefficients(0.5 * (pts[i] + pts[j])), d) + tol)
    rows, cols, wts = map(np.concatenate, (rows, cols, wts))
    graph = coo_matrix((wts, (rows, cols)), shape=(len(pts), len(pts))).tocsr()
    _, pred = dijkstra(graph, directed=True, indices=0, return_predecessors=True)
    path = [1]
    while path[-1] != 0:
        p = pred[path[-1]]
        if p < 0:
            raise NoConvergence("coarse graph does not connect the endpoints")
        path.append(int(p))
    del idx, steps
    return pts[path[::-1]]


def _resample(poly: np.ndarray, n_seg: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0], np.cumsum(seg)])
    target = np.linspace(0, s[-1], n_seg + 1)
    return np.stack([np.interp(target, s, poly[:, i]) for i in range(poly.shape[1])], axis=1)


def _shoot_refine(space: MeasureSpace, x1, x2, y_init, iters: int = 20):
    """Newton on the initial velocity so that exp_x1(y) = x2; returns y or None."""
    y = np.asarray(y_init, float).copy()
    n = space.n
    scale = max(np.linalg.norm(x2 - x1), 1e-12)
    for _ in range(iters):
        ys = np.vstack([y] + [y + 1e-6 * scale * e for e in np.eye(n)])
        try:
            _, xs, _ = shoot_batch(space, np.broadcast_to(x1, ys.shape), ys, 1.0, step=1.0 / 64)
        except (StepFailure, InvalidMetric):
            return None
        end = xs[-1]
        r = end[0] - x2
        if np.linalg.norm(r) < 1e-12 * scale:
            return y
        J = (end[1:] - end[0]).T / (1e-6 * scale)
        try:
            y = y - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
    return None


def distance(space: MeasureSpace, x1, x2, n_seg: int = 32, refine: bool = True) -> float:
    """Forward distance d(x1, x2) via path-energy descent refined by shooting."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    space.metric.check_valid(np.stack([x1, x2]))
    if np.array_equal(x1, x2):
        return 0.0
    metric = space.metric
    if metric.is_constant:
        return float(form_norm(*metric.coefficients(x1), x2 - x1))
    L_line, paths = minimize_paths(metric, x1, x2, n_seg=n_seg)
    best, best_path = float(L_line[0]), paths[0]
    try:
        coarse = _resample(_dijkstra_path(space, x1, x2), n_seg)
        L_dij, p2 = minimize_paths(metric, x1, x2, init=coarse[None, 1:-1], n_seg=n_seg)
        if L_dij[0] < best:
            best, best_path = float(L_dij[0]), p2[0]
    except NoConvergence:
        pass
    if not refine:
        return best
    y = _shoot_refine(space, x1, x2, n_seg * (best_path[1] - best_path[0]))
    if y is None:
        return best
    shot = float(form_norm(*metric.coefficients(x1), y))
    # the discrete path length overestimates by O(h^2); a shot much longer than it is non-minimal
    return shot if shot <= best * (1 + 1e-3) else best


def distance_field(space: MeasureSpace, x0, points, n_seg: int = 24) -> np.ndarray:
    """Forward distances d(x0, p) for many p by batched path-energy descent."""
    pts = np.atleast_2d(np.asarray(points, float))
    x0 = np.asarray(x0, float)
    out = np.zeros(len(pts))
    nz = np.any(pts != x0, axis=1)
    if space.metric.is_constant:
        out[nz] = form_norm(*space.metric.coefficients(x0), pts[nz] - x0)
        return out
    L, _ = minimize_paths(space.metric, np.broadcast_to(x0, pts[nz].shape), pts[nz], n_seg=n_seg)
    out[nz] = L
    return out
