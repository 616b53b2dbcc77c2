"""Comparison functions, polar densities, ball volumes and volume-ratio checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NonMinimal, UnsupportedSpace
from .geodesics import _shoot_refine, distance_field, shoot_batch
from .measure import MeasureSpace
from .minkowski import form_norm
from .reports import InequalityReport

VOLUME_TOL = 5e-3
ANGLE_EPS = 1e-4


# --------------------------------------------------------------------------
# model functions
# --------------------------------------------------------------------------


def _check_t(c: float, t: float) -> None:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if c > 0 and t >= math.pi / math.sqrt(c):
        raise DomainError(f"t = {t} outside (0, pi/sqrt(c)) for c = {c}")


def s_c(c: float, t: float) -> float:
    """Solution of f'' + c f = 0 with f(0) = 0, f'(0) = 1."""
    _check_t(c, t)
    if c > 0:
        return math.sin(math.sqrt(c) * t) / math.sqrt(c)
    if c < 0:
        return math.sinh(math.sqrt(-c) * t) / math.sqrt(-c)
    return float(t)


def ct_c(c: float, t: float) -> float:
    """Log-derivative s_c'/s_c."""
    _check_t(c, t)
    if c > 0:
        return math.sqrt(c) / math.tan(math.sqrt(c) * t)
    if c < 0:
        return math.sqrt(-c) / math.tanh(math.sqrt(-c) * t)
    return 1.0 / t


BRANCHES = ("S_bound", "tau_bound", "mean_curv")


@dataclass(frozen=True)
class ComparisonProfile:
    """Laplacian-comparison model chi(t) for one hypothesis branch.

    ``K`` is the lower bound in Ric_inf >= K (signed). ``alpha`` is used by
    S_bound, ``k`` by tau_bound and ``(m0, r0)`` by the input-only mean_curv.
    """

    branch: str
    K: float
    n: int = 2
    alpha: float = 0.0
    k: float = 0.0
    m0: float = 0.0
    r0: float = 0.0

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}")
        if self.n < 2:
            raise ValueError("dimension must be >= 2")

    @property
    def r_o(self) -> float:
        if self.branch == "mean_curv" or self.K <= 0:
            return math.inf
        scale = math.sqrt((self.n - 1) / self.K)
        return (math.pi / 2 if self.branch == "S_bound" else math.pi / 4) * scale

    @property
    def c(self) -> float:
        return self.K / (self.n - 1)

    def _check(self, t: float) -> None:
        lo = self.r0 if self.branch == "mean_curv" else 0.0
        if not (lo < t < self.r_o):
            raise DomainError(f"t = {t} outside the comparison range ({lo}, {self.r_o}) of the {self.branch} branch")

    def chi(self, t: float) -> float:
        self._check(t)
        if self.branch == "S_bound":
            return s_c(self.c, t) ** (self.n - 1) * math.exp(self.alpha * t)
        if self.branch == "tau_bound":
            return s_c(self.c, t) ** (self.n + 4 * self.k - 1)
        d = t - self.r0
        return math.exp(self.m0 * d - 0.5 * self.K * d * d)

    def log_chi_prime(self, t: float) -> float:
        """d/dt ln chi(t), the upper bound for the Laplacian of distance."""
        self._check(t)
        if self.branch == "S_bound":
            return (self.n - 1) * ct_c(self.c, t) + self.alpha
        if self.branch == "tau_bound":
            return (self.n + 4 * self.k - 1) * ct_c(self.c, t)
        return self.m0 - self.K * (t - self.r0)


def chi_profile(profile: ComparisonProfile, t: float) -> float:
    return profile.chi(t)


def profile_for(space: MeasureSpace, branch: str, k: float | None = None, alpha: float | None = None) -> ComparisonProfile:
    cb = space.certified
    k = cb.k if k is None else k
    alpha = cb.alpha if alpha is None else alpha
    if branch == "tau_bound" and not k:
        raise DomainError("tau_bound branch needs a certified distortion bound k > 0")
    if branch == "S_bound" and alpha is None:
        raise DomainError("S_bound branch needs a certified S-curvature bound alpha")
    return ComparisonProfile(branch, cb.K, space.n, alpha=alpha or 0.0, k=k or 0.0)


# --------------------------------------------------------------------------
# polar densities
# --------------------------------------------------------------------------


def unit_directions(space: MeasureSpace, x0, thetas) -> np.ndarray:
    """xi(theta) = u(theta)/F(x0, u(theta)) with u the Euclidean unit vector."""
    u = np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)
    return u / form_norm(*space.metric.coefficients(np.asarray(x0, float)), u)[..., None]


def _sigma_rays(space: MeasureSpace, x0, thetas, r_max: float, n_radii: int, substeps: int = 4, eps: float = ANGLE_EPS):
    """Polar density along rays; returns (radii, points, sigma) with shapes (N,), (N, m, 2), (N, m).

    The angular derivative of exp comes from two auxiliary shots at theta +- eps.
    """
    if space.n != 2:
        raise UnsupportedSpace("polar densities are implemented for n = 2")
    x0 = np.asarray(x0, float)
    thetas = np.asarray(thetas, float)
    m = len(thetas)
    dirs = unit_directions(space, x0, np.concatenate([thetas, thetas + eps, thetas - eps]))
    step = r_max / (n_radii * substeps)
    t, xs, vs = shoot_batch(space, np.broadcast_to(x0, dirs.shape), dirs, r_max, step=step)
    stride = (len(t) - 1) // n_radii
    idx = np.arange(1, n_radii + 1) * stride
    radii = t[idx]
    z = xs[idx, :m]
    dz_dr = vs[idx, :m]
    dz_dth = (xs[idx, m : 2 * m] - xs[idx, 2 * m :]) / (2 * eps)
    jac = np.abs(dz_dr[..., 0] * dz_dth[..., 1] - dz_dr[..., 1] * dz_dth[..., 0])
    return radii, z, space.density(z) * jac


@dataclass
class PolarDensityTable:
    base_point: np.ndarray
    thetas: np.ndarray
    directions: np.ndarray
    radii: np.ndarray
    sigma: np.ndarray  # (len(radii), len(thetas))
    minimal: np.ndarray
    points: np.ndarray = field(repr=False, default=None)

    def masked(self) -> np.ndarray:
        return np.where(self.minimal, self.sigma, 0.0)

    def volume(self, R: float | None = None) -> float:
        """Composite trapezoid in r (with sigma(0) = 0) and periodic trapezoid in theta."""
        R = self.radii[-1] if R is None else R
        if R > self.radii[-1] * (1 + 1e-12):
            raise DomainError(f"R = {R} beyond the table radius {self.radii[-1]}")
        ang = self.masked().sum(axis=1) * (2 * np.pi / len(self.thetas))
        r = np.concatenate([[0.0], self.radii])
        a = np.concatenate([[0.0], ang])
        keep = r <= R * (1 + 1e-12)
        r, a = r[keep], a[keep]
        vol = float(np.sum(0.5 * (a[1:] + a[:-1]) * np.diff(r)))
        if r[-1] < R:
            i = len(r) - 1
            a_R = np.interp(R, np.concatenate([[0.0], self.radii]), np.concatenate([[0.0], ang]))
            vol += 0.5 * (a[i] + a_R) * (R - r[i])
        return vol

    def laplacian_r(self) -> np.ndarray:
        """d/dr log sigma at interior radii; shape (N-2, m).

        The (n-1)/r singularity is taken out before the central difference and
        added back exactly; differencing log sigma itself is far off near r = 0.
        """
        n = self.directions.shape[1]
        r = self.radii
        ls = np.log(self.sigma) - (n - 1) * np.log(r)[:, None]
        h = np.diff(r)
        return (ls[2:] - ls[:-2]) / (h[1:] + h[:-1])[:, None] + ((n - 1) / r[1:-1])[:, None]

    def small_r_limits(self) -> np.ndarray:
        """sigma / r^(n-1) at the two smallest radii, shape (2, m)."""
        return self.sigma[:2] / self.radii[:2, None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["r", "theta_index", "sigma", "minimal"])
        for i, r in enumerate(self.radii):
            for j in range(len(self.thetas)):
                w.writerow([repr(float(r)), j, repr(float(self.sigma[i, j])), int(self.minimal[i, j])])
        return buf.getvalue()


def _minimality_mask(space: MeasureSpace, x0, radii, points, rtol: float = 1e-3) -> np.ndarray:
    """A radial segment is minimal iff the distance to its endpoint equals its length.

    Only the outermost radius is checked per direction unless it fails,
    since sub-segments of minimal segments are minimal.
    """
    N, m, _ = points.shape
    mask = np.ones((N, m), dtype=bool)
    d_out = distance_field(space, x0, points[-1])
    bad = np.nonzero(d_out < radii[-1] * (1 - rtol))[0]
    for j in bad:
        d = distance_field(space, x0, points[:, j])
        mask[:, j] = d >= radii * (1 - rtol)
    return mask


def polar_density(
    space: MeasureSpace, base_point, directions: int | np.ndarray = 64, radii: int | np.ndarray = 64, r_max: float | None = None
) -> PolarDensityTable:
    """Tabulate sigma(x, r, theta) on an equally spaced (r, theta) grid.

    ``directions`` is a count of equally spaced angles or an explicit angle
    array; ``radii`` is a count (with ``r_max``) or an equally spaced grid.
    """
    x0 = np.asarray(base_point, float)
    space.metric.check_valid(x0)
    thetas = 2 * np.pi * np.arange(directions) / directions if np.isscalar(directions) else np.asarray(directions, float)
    if np.isscalar(radii):
        if r_max is None:
            raise ValueError("r_max is required when radii is a count")
        n_r = int(radii)
    else:
        grid = np.asarray(radii, float)
        n_r, r_max = len(grid), float(grid[-1])
        if not np.allclose(grid, r_max * np.arange(1, n_r + 1) / n_r):
            raise ValueError("radii must be the equally spaced grid r_max*(1..N)/N")
    r, z, sig = _sigma_rays(space, x0, thetas, r_max, n_r)
    mask = _minimality_mask(space, x0, r, z)
    return PolarDensityTable(x0, thetas, unit_directions(space, x0, thetas), r, sig, mask, z)


def ball_volume(space: MeasureSpace, base_point, R: float, n_dirs: int = 64, n_radii: int = 64) -> float:
    if R <= 0:
        raise DomainError("ball radius must be positive")
    return polar_density(space, base_point, n_dirs, n_radii, r_max=R).volume()


def _inverse_exp(space: MeasureSpace, x0, q):
    """Initial unit direction angle and radius of the radial geodesic from x0 to q."""
    x0 = np.asarray(x0, float)
    q = np.asarray(q, float)
    y = _shoot_refine(space, x0, q, q - x0) if not space.metric.is_constant else q - x0
    if y is None:
        raise NonMinimal(f"no radial geodesic found from {x0} to {q}")
    r = float(form_norm(*space.metric.coefficients(x0), y))
    return math.atan2(y[1], y[0]), r


def laplacian_of_distance(space: MeasureSpace, base_point, query_points, rel_h: float = 1e-3, rtol: float = 1e-3) -> np.ndarray:
    """Delta r = d/dr log sigma at query points via the radial geodesic through each.

    ``rtol`` bounds how far the shot length may exceed the batched path
    distance, whose polyline error is O(h^2) (a few 1e-4 near the disk edge).
    """
    x0 = np.asarray(base_point, float)
    qs = np.atleast_2d(np.asarray(query_points, float))
    out = np.empty(len(qs))
    dists = distance_field(space, x0, qs)
    for i, q in enumerate(qs):
        theta, r = _inverse_exp(space, x0, q)
        if r <= 0:
            raise NonMinimal("Laplacian of distance is undefined at the base point")
        if r > dists[i] * (1 + rtol) + 1e-12:
            raise NonMinimal(f"query point {q} lies beyond the minimal segment (shot {r:.6g} > distance {dists[i]:.6g})")
        n_r = int(round(1 / rel_h)) + 1
        h = r / (n_r - 1)
        # grid h, 2h, ..., (n_r)h puts r - h, r, r + h on the last three nodes
        radii, _, sig = _sigma_rays(space, x0, [theta], r + h, n_r, substeps=2)
        ls = np.log(sig[-3:, 0])
        out[i] = (ls[2] - ls[0]) / (radii[-1] - radii[-3])
    return out


def laplacian_table_check(table: PolarDensityTable, profile: ComparisonProfile, tol: float = 5e-3) -> tuple[float, int]:
    """Worst Delta r - d/dt ln chi over minimal interior table samples; returns (excess, count)."""
    lap = table.laplacian_r()
    r = table.radii[1:-1]
    mask = table.minimal[1:-1] & table.minimal[2:] & table.minimal[:-2]
    worst = -math.inf
    count = 0
    for i, t in enumerate(r):
        if not t < profile.r_o:
            continue
        bound = profile.log_chi_prime(float(t))
        sel = mask[i]
        if np.any(sel):
            worst = max(worst, float(np.max(lap[i, sel] - bound)))
            count += int(sel.sum())
    return worst, count


# --------------------------------------------------------------------------
# volume-ratio checks
# --------------------------------------------------------------------------


def volume_ratio_bounds(n: int, K_signed: float, branch: str, r1: float, r2: float, alpha: float, k: float):
    """Returns (ball rhs, per-direction density rhs, cap, parameterization label)."""
    if K_signed <= 0:
        K = -K_signed
        label = "ric_inf >= -K, K >= 0"
        if branch == "S_bound":
            e = math.exp(r2 * (alpha + math.sqrt((n - 1) * K)))
            return (r2 / r1) ** n * e, (r2 / r1) ** (n - 1) * e, math.inf, label
        ex = n + 4 * k
        return (
            (r2 / r1) ** ex * math.exp(r2 * ex * math.sqrt(K / (n - 1))),
            (r2 / r1) ** (ex - 1) * math.exp(r2 * (ex - 1) * math.sqrt(K / (n - 1))),
            math.inf,
            label,
        )
    label = "ric_inf >= K > 0"
    scale = math.sqrt((n - 1) / K_signed)
    if branch == "S_bound":
        return (r2 / r1) ** n * math.exp(r2 * alpha), (r2 / r1) ** (n - 1) * math.exp(r2 * alpha), math.pi / 2 * scale, label
    return (r2 / r1) ** (n + 4 * k), (r2 / r1) ** (n + 4 * k - 1), math.pi / 4 * scale, label


def check_volume_ratio(
    space: MeasureSpace,
    base_point,
    r1: float,
    r2: float,
    branch: str,
    k: float | None = None,
    alpha: float | None = None,
    R: float | None = None,
    tol: float = VOLUME_TOL,
    n_dirs: int = 64,
    n_radii: int = 64,
    table: PolarDensityTable | None = None,
) -> InequalityReport:
    """Ball-volume ratio m(B_r2)/m(B_r1) against the branch bound, plus per-direction density ratios."""
    if branch not in ("S_bound", "tau_bound"):
        raise DomainError(f"volume ratio needs branch S_bound or tau_bound, got {branch!r}")
    prof = profile_for(space, branch, k=k, alpha=alpha)
    n = space.n
    rhs, dens_rhs, cap, label = volume_ratio_bounds(n, space.certified.K, branch, r1, r2, prof.alpha, prof.k)
    limit = min(cap, R if R is not None else math.inf)
    if not (0 < r1 < r2 < limit):
        which = "(pi/2)sqrt((n-1)/K)" if branch == "S_bound" else "(pi/4)sqrt((n-1)/K)"
        raise DomainError(f"need 0 < r1 < r2 < {limit:.6g}; the {branch} comparison range for K > 0 is r < {which}")
    if table is None:
        table = polar_density(space, base_point, n_dirs, n_radii, r_max=r2)
    v1, v2 = table.volume(r1), table.volume(r2)
    lhs = v2 / v1
    # per-direction density ratios, interpolating sigma in r
    ok_dirs = table.minimal[-1]
    s1 = np.array([np.interp(r1, table.radii, table.sigma[:, j]) for j in range(len(table.thetas))])
    s2 = np.array([np.interp(r2, table.radii, table.sigma[:, j]) for j in range(len(table.thetas))])
    dens = (s2 / s1)[ok_dirs]
    dens_max = float(np.max(dens)) if dens.size else 0.0
    ball_ok = lhs <= rhs * (1 + tol)
    dens_ok = dens_max <= dens_rhs * (1 + tol)
    return InequalityReport(
        f"volume_ratio.{branch}",
        float(lhs),
        float(rhs),
        "pass" if (ball_ok and dens_ok) else "fail",
        params={
            "base_point": list(map(float, np.asarray(base_point, float))),
            "r1": r1,
            "r2": r2,
            "branch": branch,
            "K": space.certified.K,
            "k": prof.k,
            "alpha": prof.alpha,
            "parameterization": label,
            "tol": tol,
        },
        space=space.name,
        details={"m_r1": v1, "m_r2": v2, "density_ratio_max": dens_max, "density_ratio_rhs": dens_rhs, "cap": cap},
    )
