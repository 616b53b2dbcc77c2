"""Discrete gradient and weak divergence on meshes."""

from __future__ import annotations

import numpy as np

from .measure import MeasureSpace
from .mesh import DiscreteFunction, Mesh
from .minkowski import legendre_inverse_map


def gradient_field(space: MeasureSpace, u: DiscreteFunction | np.ndarray, mesh: Mesh | None = None) -> np.ndarray:
    """Per-cell gradient vector nabla u = L^{-1}(du) at cell centroids; zero where du = 0."""
    if isinstance(u, DiscreteFunction):
        mesh, vals = u.mesh, u.values
    else:
        vals = np.asarray(u, float)
    du = mesh.cell_gradients(vals)
    return legendre_inverse_map(space.metric, mesh.centroids, du)


def weighted_divergence_constant(space: MeasureSpace, V: np.ndarray, points: np.ndarray) -> np.ndarray:
    """div_m V = V(Phi) for a field constant on each cell, evaluated at (M, q, 2) points."""
    return np.einsum("mqd,md->mq", space.log_density.grad(points), V)


def weak_divergence_residual(space: MeasureSpace, V: np.ndarray, phi: DiscreteFunction, div=None) -> float:
    """int dphi(V) dm + int phi div_m V dm.

    ``V`` is a per-cell vector field (M, 2). ``div`` gives div_m V at the
    quadrature points (M, 3); by default it is V(Phi), the weighted
    divergence of a cellwise-constant field away from cell interfaces.
    """
    mesh = phi.mesh
    V = np.asarray(V, float)
    if not np.any(V):
        return 0.0
    mm = mesh.measure(space)
    dphi = mesh.cell_gradients(phi.values)
    first = float(np.sum(mm.cell_mass * np.einsum("md,md->m", dphi, V)))
    if div is None:
        div = weighted_divergence_constant(space, V, mm.qp)
    second = mesh.integrate(space, mesh.at_quadrature(phi.values) * np.asarray(div, float))
    return first + second
