"""Pointwise Minkowski-norm algebra for the closed-form metric variants.

Everything here is exact and closed form except ``legendre_inverse`` (damped
Newton) and ``uniformity_constants`` (deterministic sampling plus local
refinement). Array-level functions take ``x`` of shape ``(..., n)`` and a
vector/covector of shape ``(..., n)`` and broadcast; the ``eval_*`` wrappers
take the single-point dataclasses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .errors import InvalidMetric, NoConvergence, ZeroCovector, ZeroVector
from .metric import MetricDescriptor

SEED = 0x5EED


@dataclass(frozen=True)
class TangentVector:
    base_point: tuple
    components: tuple

    def __post_init__(self):
        if len(self.base_point) != len(self.components) or len(self.components) < 2:
            raise ValueError("tangent vector dimension must match base point, n >= 2")

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.base_point, dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.components, dtype=float)


@dataclass(frozen=True)
class CotangentVector:
    base_point: tuple
    components: tuple

    def __post_init__(self):
        if len(self.base_point) != len(self.components) or len(self.components) < 2:
            raise ValueError("covector dimension must match base point, n >= 2")

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.base_point, dtype=float)

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.components, dtype=float)


@dataclass(frozen=True)
class UniformityConstants:
    kappa: float
    kappa_star: float
    lambda_rev: float

    def __post_init__(self):
        if not (0 < self.kappa_star <= 1 <= self.kappa):
            raise ValueError(f"need 0 < kappa* <= 1 <= kappa, got {self.kappa_star}, {self.kappa}")
        if self.lambda_rev < 1:
            raise ValueError("reversibility must be >= 1")

    @property
    def kappa_tilde(self) -> float:
        """Upper ellipticity constant of the dual tensor, 1/kappa*."""
        return 1.0 / self.kappa_star

    @property
    def kappa_tilde_star(self) -> float:
        """Lower ellipticity constant of the dual tensor, 1/kappa."""
        return 1.0 / self.kappa


# --------------------------------------------------------------------------
# Randers-form kernels; the same formulas serve F on vectors and F* on
# covectors (the dual of a Randers norm is again of Randers form).
# --------------------------------------------------------------------------


def _dot(u, v):
    return np.einsum("...i,...i->...", u, v)


def _matvec(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def form_norm(A, b, y):
    Ay = _matvec(A, y)
    return np.sqrt(np.maximum(_dot(y, Ay), 0.0)) + _dot(b, y)


def form_first(A, b, y):
    """Return (F, F_y) of the Randers-form norm sqrt(yAy) + b.y at y != 0."""
    Ay = _matvec(A, y)
    alpha = np.sqrt(_dot(y, Ay))
    ell = Ay / alpha[..., None]
    return alpha + _dot(b, y), ell + b


def form_hessian_half_sq(A, b, y):
    """g_ij = (1/2) d^2 F^2 / dy^i dy^j for the Randers-form norm."""
    Ay = _matvec(A, y)
    alpha = np.sqrt(_dot(y, Ay))
    ell = Ay / alpha[..., None]
    F = alpha + _dot(b, y)
    Fy = ell + b
    return (F / alpha)[..., None, None] * (A - _outer(ell, ell)) + _outer(Fy, Fy)


def form_cartan(A, b, y):
    Ay = _matvec(A, y)
    alpha = np.sqrt(_dot(y, Ay))
    ell = Ay / alpha[..., None]
    F = alpha + _dot(b, y)
    Fi = ell + b
    Fij = (A - _outer(ell, ell)) / alpha[..., None, None]
    # alpha_ijk = -(alpha_ik l_j + alpha_jk l_i + alpha_ij l_k) / alpha
    t1 = np.einsum("...ik,...j->...ijk", Fij, ell)
    t2 = np.einsum("...jk,...i->...ijk", Fij, ell)
    t3 = np.einsum("...ij,...k->...ijk", Fij, ell)
    Fijk = -(t1 + t2 + t3) / alpha[..., None, None, None]
    s = (
        np.einsum("...ik,...j->...ijk", Fij, Fi)
        + np.einsum("...jk,...i->...ijk", Fij, Fi)
        + np.einsum("...ij,...k->...ijk", Fij, Fi)
    )
    return 0.5 * (s + F[..., None, None, None] * Fijk)


def dual_coefficients(metric: MetricDescriptor, x):
    """Return (H, b*) with F*(x, xi) = sqrt(xi H xi) + b*.xi."""
    A, b = metric.coefficients(x)
    Ainv = np.linalg.inv(A)
    if metric.is_riemannian:
        return Ainv, np.zeros_like(b)
    bs = _matvec(Ainv, b)
    lam = 1.0 - _dot(b, bs)
    if np.any(lam <= 0):
        raise InvalidMetric("Randers drift has a-norm >= 1")
    H = (lam[..., None, None] * Ainv + _outer(bs, bs)) / (lam**2)[..., None, None]
    return H, -bs / lam[..., None]


# --------------------------------------------------------------------------
# array-level operations
# --------------------------------------------------------------------------


def norm(metric: MetricDescriptor, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    metric.check_valid(x)
    A, b = metric.coefficients(x)
    return form_norm(A, b, y)


def _require_nonzero(y, exc):
    if np.any(np.all(np.asarray(y) == 0, axis=-1)):
        raise exc("tensor undefined at the zero vector")


def fundamental(metric: MetricDescriptor, x, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    _require_nonzero(y, ZeroVector)
    A, b = metric.coefficients(np.asarray(x, float))
    if metric.is_riemannian:
        return np.broadcast_to(A, y.shape + (y.shape[-1],)).copy()
    return form_hessian_half_sq(A, b, y)


def cartan(metric: MetricDescriptor, x, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    _require_nonzero(y, ZeroVector)
    if metric.is_riemannian:
        n = y.shape[-1]
        return np.zeros(y.shape[:-1] + (n, n, n))
    A, b = metric.coefficients(np.asarray(x, float))
    return form_cartan(A, b, y)


def legendre_map(metric: MetricDescriptor, x, y) -> np.ndarray:
    """xi = g_y(y, .) = F F_y; zero at y = 0."""
    y = np.asarray(y, dtype=float)
    A, b = metric.coefficients(np.asarray(x, float))
    zero = np.all(y == 0, axis=-1)
    ys = np.where(zero[..., None], 1.0, y)
    F, Fy = form_first(A, b, ys)
    return np.where(zero[..., None], 0.0, F[..., None] * Fy)


def legendre_inverse_map(metric: MetricDescriptor, x, xi, tol: float = 1e-10, max_iter: int = 50):
    """Solve g_y(y, .) = xi for y by damped Newton on (1/2)F^2(y) - xi(y)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x, xi = np.broadcast_arrays(x, xi)
    A, b = metric.coefficients(x)
    zero = np.all(xi == 0, axis=-1)
    xin = np.where(zero[..., None], 1.0, xi)
    y = np.linalg.solve(A, xin[..., None])[..., 0]
    if metric.is_riemannian:
        return np.where(zero[..., None], 0.0, y)

    scale = np.linalg.norm(xin, axis=-1)

    def objective(yy):
        return 0.5 * form_norm(A, b, yy) ** 2 - _dot(xin, yy)

    def residual(yy):
        F, Fy = form_first(A, b, yy)
        return F[..., None] * Fy - xin

    for _ in range(2):
        for _ in range(max_iter):
            r = residual(y)
            rn = np.linalg.norm(r, axis=-1)
            if np.all(rn <= tol * 1e-2 * scale):
                break
            g = form_hessian_half_sq(A, b, y)
            p = np.linalg.solve(g, r[..., None])[..., 0]
            f0 = objective(y)
            decrease = _dot(r, p)
            step = np.ones(rn.shape)
            for _ in range(40):
                trial = y - step[..., None] * p
                ok = objective(trial) <= f0 - 1e-4 * step * decrease
                # near the solution the objective decrease drowns in roundoff
                ok |= np.linalg.norm(residual(trial), axis=-1) < 0.5 * rn
                if np.all(ok):
                    break
                step = np.where(ok, step, 0.5 * step)
            y = y - step[..., None] * p
        else:
            # ray fallback: optimal scale along the current iterate direction
            F = form_norm(A, b, y)
            s = _dot(xin, y) / F**2
            y = np.where((s > 0)[..., None], s[..., None] * y, np.linalg.solve(A, xin[..., None])[..., 0])
            continue
        break
    rn = np.linalg.norm(residual(y), axis=-1)
    if np.any(rn > tol * np.maximum(scale, 1e-300)):
        raise NoConvergence(f"Legendre inverse residual {float(np.max(rn / scale)):.3e} after fallback")
    return np.where(zero[..., None], 0.0, y)


def dual(metric: MetricDescriptor, x, xi) -> np.ndarray:
    """F*(x, xi) = sup xi(y)/F(x, y)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    metric.check_valid(x)
    if metric.is_riemannian:
        A, _ = metric.coefficients(x)
        Ainv_xi = np.linalg.solve(np.broadcast_to(A, xi.shape + (xi.shape[-1],)), xi[..., None])[..., 0]
        return np.sqrt(np.maximum(_dot(xi, Ainv_xi), 0.0))
    y = legendre_inverse_map(metric, x, xi)
    return norm(metric, x, y)


def dual_closed_form(metric: MetricDescriptor, x, xi) -> np.ndarray:
    """F* from the explicit dual Randers data; used by the PDE assembly."""
    H, bs = dual_coefficients(metric, np.asarray(x, float))
    return form_norm(H, bs, np.asarray(xi, float))


def dual_fundamental(metric: MetricDescriptor, x, xi) -> np.ndarray:
    """g*^{kl}(x, xi) = (1/2)[F*^2]_{xi_k xi_l}, the inverse of g at L^{-1}(xi)."""
    xi = np.asarray(xi, dtype=float)
    _require_nonzero(xi, ZeroCovector)
    H, bs = dual_coefficients(metric, np.asarray(x, float))
    if metric.is_riemannian:
        return np.broadcast_to(H, xi.shape + (xi.shape[-1],)).copy()
    return form_hessian_half_sq(H, bs, xi)


# --------------------------------------------------------------------------
# single-point wrappers
# --------------------------------------------------------------------------


def eval_F(metric: MetricDescriptor, v: TangentVector) -> float:
    return float(norm(metric, v.x, v.y))


def fundamental_tensor(metric: MetricDescriptor, v: TangentVector) -> np.ndarray:
    metric.check_valid(v.x)
    return fundamental(metric, v.x, v.y)


def cartan_tensor(metric: MetricDescriptor, v: TangentVector) -> np.ndarray:
    metric.check_valid(v.x)
    return cartan(metric, v.x, v.y)


def dual_norm(metric: MetricDescriptor, xi: CotangentVector) -> float:
    return float(dual(metric, xi.x, xi.xi))


def legendre(metric: MetricDescriptor, v: TangentVector) -> CotangentVector:
    metric.check_valid(v.x)
    return CotangentVector(v.base_point, tuple(map(float, legendre_map(metric, v.x, v.y))))


def legendre_inverse(metric: MetricDescriptor, xi: CotangentVector) -> TangentVector:
    metric.check_valid(xi.x)
    y = legendre_inverse_map(metric, xi.x, xi.xi)
    return TangentVector(xi.base_point, tuple(map(float, y)))


def dual_tensor(metric: MetricDescriptor, xi: CotangentVector) -> np.ndarray:
    metric.check_valid(xi.x)
    return dual_fundamental(metric, xi.x, xi.xi)


# --------------------------------------------------------------------------
# uniformity and reversibility constants
# --------------------------------------------------------------------------


def sphere_directions(n: int, count: int, seed: int = SEED) -> np.ndarray:
    """Deterministic directions on the Euclidean unit sphere."""
    if n == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    from scipy.special import ndtri

    u = qmc.Sobol(n, scramble=True, seed=seed).random(count)
    z = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _region_points(metric: MetricDescriptor, region, count: int) -> np.ndarray:
    if region is None:
        return np.zeros((1, metric.dimension))
    pts = np.asarray(region, dtype=float)
    if pts.ndim == 2 and pts.shape == (2, metric.dimension) and count > 0 and not metric.is_constant:
        lo, hi = pts
        samp = qmc.Halton(metric.dimension, scramble=True, seed=SEED).random(count)
        return np.vstack([(lo + hi) / 2, lo + samp * (hi - lo)])
    if pts.ndim == 2 and pts.shape == (2, metric.dimension):
        return ((pts[0] + pts[1]) / 2)[None]
    return np.atleast_2d(pts)


def uniformity_constants(
    metric: MetricDescriptor,
    sample_region=None,
    resolution: int = 128,
    n_points: int = 16,
    refine: bool = True,
) -> UniformityConstants:
    """Estimate (kappa, kappa*, Lambda) over a region.

    ``sample_region`` is either a box ``[lo, hi]`` (Halton points inside it
    plus its centre), an explicit ``(m, n)`` point array, or ``None`` for the
    origin. Sampled extremes are polished by Nelder-Mead, so kappa is a lower
    estimate and kappa* an upper estimate of the true constants.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = metric.dimension
    xs = _region_points(metric, sample_region, n_points)
    metric.check_valid(xs)
    dirs = sphere_directions(n, resolution)
    kappa, kappa_star, lam = 1.0, 1.0, 1.0
    for x in xs:
        A, b = metric.coefficients(x)
        FW2 = form_norm(A, b, dirs) ** 2
        G = form_hessian_half_sq(A, b, dirs) if not metric.is_riemannian else np.broadcast_to(A, (len(dirs), n, n))
        ratio = np.einsum("vij,wi,wj->vw", G, dirs, dirs) / FW2[None, :]
        iv_max, iw_max = np.unravel_index(np.argmax(ratio), ratio.shape)
        iv_min, iw_min = np.unravel_index(np.argmin(ratio), ratio.shape)
        kmax, kmin = ratio[iv_max, iw_max], ratio[iv_min, iw_min]

        cand = dirs
        if not metric.is_riemannian:
            bs = np.linalg.solve(A, b)
            if np.any(bs):
                cand = np.vstack([dirs, bs / np.linalg.norm(bs), -bs / np.linalg.norm(bs)])
        rev = form_norm(A, b, cand) / form_norm(A, b, -cand)
        ir = int(np.argmax(rev))
        lmax = rev[ir]

        if refine and not metric.is_riemannian:
            # both ratios are 0-homogeneous, so in the plane we polish over angles
            if n == 2:
                unit = lambda t: np.array([math.cos(t), math.sin(t)])
                to_z = lambda v, w: np.array([math.atan2(v[1], v[0]), math.atan2(w[1], w[0])])
                from_z = lambda z: (unit(z[0]), unit(z[1]))
            else:
                to_z = lambda v, w: np.concatenate([v, w])
                from_z = lambda z: (z[:n], z[n:])

            def kratio(z):
                v, w = from_z(z)
                if not np.any(v) or not np.any(w):
                    return 1.0
                g = form_hessian_half_sq(A, b, v)
                return float(w @ g @ w / form_norm(A, b, w) ** 2)

            # the value, not the argmax, is wanted; it is quadratic in the angle error
            opts = {"xatol": 1e-8, "fatol": 1e-12, "maxiter": 800} if n == 2 else {"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000}
            res = optimize.minimize(lambda z: -kratio(z), to_z(dirs[iv_max], dirs[iw_max]), method="Nelder-Mead", options=opts)
            kmax = max(kmax, -res.fun)
            res = optimize.minimize(kratio, to_z(dirs[iv_min], dirs[iw_min]), method="Nelder-Mead", options=opts)
            kmin = min(kmin, res.fun)
            if n == 2:
                t0 = math.atan2(cand[ir][1], cand[ir][0])
                h = 4 * math.pi / len(dirs)
                res = optimize.minimize_scalar(
                    lambda t: -float(form_norm(A, b, unit(t)) / form_norm(A, b, -unit(t))),
                    bounds=(t0 - h, t0 + h),
                    method="bounded",
                    options={"xatol": 1e-13},
                )
            else:
                res = optimize.minimize(
                    lambda y: -float(form_norm(A, b, y) / form_norm(A, b, -y)) if np.any(y) else -1.0,
                    cand[ir],
                    method="Nelder-Mead",
                    options=opts,
                )
            lmax = max(lmax, -res.fun)
        kappa = max(kappa, float(kmax))
        kappa_star = min(kappa_star, float(kmin))
        lam = max(lam, float(lmax))
    return UniformityConstants(kappa, kappa_star, lam)


def reversibility_oracle_randers(b_norm: float) -> float:
    """Closed form sup F(y)/F(-y) = (1 + |b|)/(1 - |b|) for a Randers norm."""
    return (1 + b_norm) / (1 - b_norm)


__all__: Sequence[str] = [
    "TangentVector",
    "CotangentVector",
    "UniformityConstants",
    "eval_F",
    "fundamental_tensor",
    "cartan_tensor",
    "dual_norm",
    "legendre",
    "legendre_inverse",
    "dual_tensor",
    "uniformity_constants",
    "norm",
    "fundamental",
    "cartan",
    "legendre_map",
    "legendre_inverse_map",
    "dual",
    "dual_closed_form",
    "dual_fundamental",
    "dual_coefficients",
]
