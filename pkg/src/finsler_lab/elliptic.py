"""Dirichlet problems for the Finsler Laplacian via convex energy minimization.

The discrete energy is E(u) = 1/2 sum_c m_c F*^2(x_c, du_c) over P1 cells,
with m_c the cell measure and F* frozen at the centroid. Its nodal gradient
is sum_c m_c dphi_i(nabla u_c), which is exactly the weak Laplacian tested
against hat functions, so a minimizer is a discrete weak harmonic function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .calculus import gradient_field
from .errors import NoConvergence
from .measure import MeasureSpace
from .mesh import _MID, DiscreteFunction, Mesh
from .minkowski import dual_coefficients, form_hessian_half_sq, form_norm
from .reports import InequalityReport


@dataclass(eq=False)
class DirichletProblem:
    space: MeasureSpace
    mesh: Mesh
    boundary: np.ndarray
    source: np.ndarray | None = None
    name: str = "problem"
    _coef: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if callable(self.boundary):
            self.boundary = np.asarray(self.boundary(self.mesh.nodes), float) * np.ones(self.mesh.n_nodes)
        self.boundary = np.asarray(self.boundary, float)
        if self.boundary.shape != (self.mesh.n_nodes,):
            raise ValueError("boundary data must be a nodal array (values off the boundary are ignored)")
        if not np.any(self.mesh.boundary):
            raise ValueError("Dirichlet problem needs at least one boundary node")
        if not np.all(np.isfinite(self.boundary[self.mesh.boundary])):
            raise ValueError("boundary data must be bounded")
        if self.source is not None:
            if callable(self.source):
                self.source = np.asarray(self.source(self.mesh.nodes), float) * np.ones(self.mesh.n_nodes)
            self.source = np.asarray(self.source, float)
        self.space.metric.check_valid(self.mesh.centroids)

    @property
    def coef(self):
        """Dual Randers data (H, b*) at cell centroids."""
        if self._coef is None:
            self._coef = dual_coefficients(self.space.metric, self.mesh.centroids)
        return self._coef

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.boundary[self.mesh.boundary]))))

    def lift(self, interior_values: np.ndarray) -> np.ndarray:
        u = self.boundary.copy()
        u[self.mesh.interior] = interior_values
        return u


# --------------------------------------------------------------------------
# energy
# --------------------------------------------------------------------------


def _cell_terms(problem: DirichletProblem, u: np.ndarray, hessian: bool = False):
    mesh = problem.mesh
    H, bs = problem.coef
    xi = mesh.cell_gradients(u)
    zero = np.all(xi == 0, axis=1)
    xs = np.where(zero[:, None], 1.0, xi)
    Hx = np.einsum("mij,mj->mi", H, xs)
    a = np.sqrt(np.einsum("mi,mi->m", xs, Hx))
    Fs = np.where(zero, 0.0, a + np.einsum("mi,mi->m", bs, xs))
    # d(F*^2/2)/dxi is the Legendre inverse, i.e. the gradient vector
    grad_vec = np.where(zero[:, None], 0.0, Fs[:, None] * (Hx / a[:, None] + bs))
    G = None
    if hessian:
        # at du = 0 the Riemannian part stands in for the undefined g*
        G = np.where(zero[:, None, None], H, form_hessian_half_sq(H, bs, xs))
    return Fs, grad_vec, G


def dirichlet_energy(problem: DirichletProblem, u: DiscreteFunction | np.ndarray) -> float:
    vals = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
    Fs, _, _ = _cell_terms(problem, vals)
    cm = problem.mesh.measure(problem.space).cell_mass
    return float(0.5 * np.sum(cm * Fs**2))


def energy_gradient(problem: DirichletProblem, u: np.ndarray) -> np.ndarray:
    """Nodal gradient of the energy (all nodes)."""
    mesh = problem.mesh
    _, gv, _ = _cell_terms(problem, u)
    cm = mesh.measure(problem.space).cell_mass
    contrib = cm[:, None] * np.einsum("mkd,md->mk", mesh.grad_basis, gv)
    return np.bincount(mesh.cells.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


def _assemble(problem: DirichletProblem, G: np.ndarray):
    mesh = problem.mesh
    cm = mesh.measure(problem.space).cell_mass
    B = mesh.grad_basis
    Kc = cm[:, None, None] * np.einsum("mkd,mde,mle->mkl", B, G, B)
    rows = np.repeat(mesh.cells, 3, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 3)).ravel()
    K = coo_matrix((Kc.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    return K


def stiffness_matrix(problem: DirichletProblem):
    """Stiffness of the Riemannian part H of F*; the exact operator when F is Riemannian."""
    return _assemble(problem, problem.coef[0])


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------


@dataclass
class SolveInfo:
    iterations: int
    energy: float
    residual: float
    method: str


def linear_solve(problem: DirichletProblem) -> DiscreteFunction:
    """Direct sparse solve of the weighted linear Laplacian with the Riemannian part of F*."""
    K = stiffness_matrix(problem)
    I = problem.mesh.interior
    Bn = problem.mesh.boundary
    rhs = -K[I][:, Bn] @ problem.boundary[Bn]
    uI = splu(K[I][:, I].tocsc()).solve(rhs)
    return DiscreteFunction(problem.lift(uI), problem.mesh)


def _newton(problem, u, gtol, max_iter):
    I = problem.mesh.interior
    E = dirichlet_energy(problem, u)
    for it in range(max_iter):
        g = energy_gradient(problem, u)[I]
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        if gn <= gtol:
            return u, SolveInfo(it, E, gn, "newton")
        _, _, G = _cell_terms(problem, u, hessian=True)
        K = _assemble(problem, G)[I][:, I].tocsc()
        p = splu(K).solve(g)
        slope = float(g @ p)
        t = 1.0
        for _ in range(60):
            trial = u.copy()
            trial[I] -= t * p
            Et = dirichlet_energy(problem, trial)
            if Et <= E - 1e-4 * t * slope:
                break
            # Armijo is blind below roundoff; accept a clear residual drop instead
            if np.max(np.abs(energy_gradient(problem, trial)[I])) < 0.5 * gn:
                break
            t *= 0.5
        else:
            raise NoConvergence("Newton line search stalled")
        u, E = trial, Et
    raise NoConvergence(f"Newton did not converge in {max_iter} iterations (residual {gn:.3e})")


def _ncg(problem, u, gtol, max_iter):
    """Polak-Ribiere+ conjugate gradient, preconditioned by the Riemannian-part stiffness."""
    I = problem.mesh.interior
    P = splu(stiffness_matrix(problem)[I][:, I].tocsc())
    E = dirichlet_energy(problem, u)
    g = energy_gradient(problem, u)[I]
    z = P.solve(g)
    d = -z
    for it in range(max_iter):
        gn = float(np.max(np.abs(g)))
        if gn <= gtol:
            return u, SolveInfo(it, E, gn, "ncg")
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -z, -float(g @ z)
        t = 1.0
        for _ in range(60):
            trial = u.copy()
            trial[I] += t * d
            Et = dirichlet_energy(problem, trial)
            if Et <= E + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise NoConvergence("NCG line search stalled")
        g_new = energy_gradient(problem, trial)[I]
        z_new = P.solve(g_new)
        beta = max(0.0, float(g_new @ (z_new - z)) / float(g @ z))
        d = -z_new + beta * d
        u, E, g, z = trial, Et, g_new, z_new
    raise NoConvergence(f"NCG did not converge in {max_iter} iterations")


def solve_harmonic(
    problem: DirichletProblem, method: str = "newton", gtol: float | None = None, max_iter: int | None = None, return_info: bool = False
):
    """Minimize the Dirichlet energy over interior nodal values.

    The start is the linear solve with the Riemannian part of F*, which is
    already exact for Riemannian metrics. ``method`` is "newton" (damped
    Newton with the g*-Hessian) or "ncg".
    """
    gtol = 1e-11 * problem.scale if gtol is None else gtol
    u = linear_solve(problem).values
    if method == "newton":
        u, info = _newton(problem, u, gtol, max_iter or 200)
    elif method == "ncg":
        u, info = _ncg(problem, u, gtol, max_iter or 100_000)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = DiscreteFunction(u, problem.mesh)
    return (out, info) if return_info else out


# --------------------------------------------------------------------------
# weak (sub/super)harmonicity
# --------------------------------------------------------------------------


def weak_laplacian_pairings(problem: DirichletProblem, u: DiscreteFunction | np.ndarray) -> np.ndarray:
    """int dphi_i(nabla u) dm for every nodal hat phi_i, with nabla u = L^{-1}(du)."""
    mesh = problem.mesh
    vals = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
    V = gradient_field(problem.space, vals, mesh)
    cm = mesh.measure(problem.space).cell_mass
    contrib = cm[:, None] * np.einsum("mkd,md->mk", mesh.grad_basis, V)
    return np.bincount(mesh.cells.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


def weak_residual(problem: DirichletProblem, u, test_set: np.ndarray | None = None) -> float:
    """max over interior hat functions of |int dphi(nabla u) dm|."""
    r = weak_laplacian_pairings(problem, u)
    sel = problem.mesh.interior if test_set is None else np.asarray(test_set)
    return float(np.max(np.abs(r[sel]))) if np.any(sel) else 0.0


def hat_products(problem: DirichletProblem, w: np.ndarray) -> np.ndarray:
    """int phi_i w dm for nodal hats, with w given at quadrature points (M, 3)."""
    mesh = problem.mesh
    qw = mesh.measure(problem.space).qw
    contrib = np.einsum("mq,qk->mk", qw * w, _MID)
    return np.bincount(mesh.cells.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


def check_subsolution(
    problem: DirichletProblem, u, f=None, orientation: str = "sub", tol: float | None = None
) -> InequalityReport:
    """Weak inequality against every interior nonnegative hat phi.

    ``orientation="sub"``:   int dphi(nabla u) dm <= int phi f u dm   (Delta u >= -f u)
    ``orientation="super"``: -int dphi(nabla u) dm <= int phi f u dm  (Delta u <= f u)
    """
    mesh = problem.mesh
    vals = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
    if f is None:
        f = problem.source if problem.source is not None else np.zeros(mesh.n_nodes)
    f = np.broadcast_to(np.asarray(f, float), (mesh.n_nodes,))
    lhs = weak_laplacian_pairings(problem, vals)
    if orientation == "super":
        lhs = -lhs
    elif orientation != "sub":
        raise ValueError("orientation must be 'sub' or 'super'")
    rhs = hat_products(problem, mesh.at_quadrature(f) * mesh.at_quadrature(vals))
    I = mesh.interior
    tol = 1e-8 * max(1.0, float(np.max(np.abs(vals)))) if tol is None else tol
    slack = rhs[I] - lhs[I]
    worst = int(np.argmin(slack))
    margin = float(slack[worst])
    return InequalityReport(
        f"weak_{orientation}solution",
        float(lhs[I][worst]),
        float(rhs[I][worst]),
        "pass" if margin >= -tol else "fail",
        params={"orientation": orientation, "tol": tol, "problem": problem.name},
        margin=margin,
        space=problem.space.name,
    )


def maximum_principle_check(problem: DirichletProblem, u, tol: float | None = None) -> InequalityReport:
    mesh = problem.mesh
    vals = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
    tol = 1e-8 * problem.scale if tol is None else tol
    bmax, bmin = float(vals[mesh.boundary].max()), float(vals[mesh.boundary].min())
    imax = float(vals[mesh.interior].max()) if np.any(mesh.interior) else bmin
    imin = float(vals[mesh.interior].min()) if np.any(mesh.interior) else bmax
    margin = min(bmax - imax, imin - bmin)
    return InequalityReport(
        "maximum_principle",
        imax,
        bmax,
        "pass" if margin >= -tol else "fail",
        params={"tol": tol, "problem": problem.name},
        margin=margin,
        space=problem.space.name,
        details={"interior_min": imin, "boundary_min": bmin},
    )


def energy_dual_norms(problem: DirichletProblem, u) -> np.ndarray:
    """F*(x_c, du_c) per cell."""
    vals = u.values if isinstance(u, DiscreteFunction) else np.asarray(u, float)
    H, bs = problem.coef
    return form_norm(H, bs, problem.mesh.cell_gradients(vals))
