"""2-D triangle meshes, nodal functions and measure-weighted quadrature."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateMesh
from .measure import MeasureSpace

# edge-midpoint rule: exact for quadratics on a triangle
_MID = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


@dataclass
class MeshMeasure:
    """Quadrature data of a mesh under dm = exp(Phi) dx."""

    qp: np.ndarray  # (M, 3, 2) quadrature points
    qw: np.ndarray  # (M, 3) weights including exp(Phi)
    cell_mass: np.ndarray  # (M,)
    dual_volume: np.ndarray  # (N,) lumped node volumes

    @property
    def total(self) -> float:
        return float(self.cell_mass.sum())


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray
    node_dist: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ConfigError("mesh nodes must have shape (N, 2)")
        if self.cells.ndim != 2 or self.cells.shape[1] != 3:
            raise ConfigError("mesh cells must be triangles")
        if len(self.boundary) != len(self.nodes):
            raise ConfigError("boundary flags must match the node count")
        if self.cells.min() < 0 or self.cells.max() >= len(self.nodes):
            raise ConfigError("cell references a missing node")
        P = self.nodes[self.cells]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            bad = int(np.argmin(det))
            raise DegenerateMesh(f"cell {bad} has non-positive area {0.5 * det[bad]:.3g}")
        self.area = 0.5 * det
        # gradients of the barycentric basis, (M, 3, 2)
        inv = np.stack([np.stack([e2[:, 1], -e1[:, 1]], -1), np.stack([-e2[:, 0], e1[:, 0]], -1)], -2) / det[:, None, None]
        g12 = inv.swapaxes(-1, -2)  # rows: grad lambda_1, grad lambda_2
        self.grad_basis = np.concatenate([-(g12[:, 0] + g12[:, 1])[:, None], g12], axis=1)
        self.centroids = P.mean(axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def h(self) -> float:
        P = self.nodes[self.cells]
        return float(np.max(np.linalg.norm(P - np.roll(P, 1, axis=1), axis=-1)))

    def measure(self, space: MeasureSpace) -> MeshMeasure:
        key = space.log_density
        if key not in self._cache:
            qp = np.einsum("qk,mkd->mqd", _MID, self.nodes[self.cells])
            qw = space.density(qp) * (self.area[:, None] / 3.0)
            cm = qw.sum(axis=1)
            dual = np.bincount(self.cells.ravel(), weights=np.repeat(cm / 3.0, 3), minlength=self.n_nodes)
            self._cache[key] = MeshMeasure(qp, qw, cm, dual)
        return self._cache[key]

    def cell_gradients(self, u: np.ndarray) -> np.ndarray:
        """Piecewise-constant du per cell, (M, 2)."""
        return np.einsum("mk,mkd->md", np.asarray(u, float)[self.cells], self.grad_basis)

    def at_quadrature(self, u: np.ndarray) -> np.ndarray:
        """Linear interpolant of nodal values at the quadrature points, (M, 3)."""
        return np.asarray(u, float)[self.cells] @ _MID.T

    def integrate(self, space: MeasureSpace, values_qp: np.ndarray, cells: np.ndarray | None = None) -> float:
        """Integral of a field given at quadrature points (M, 3) against dm."""
        qw = self.measure(space).qw
        if cells is not None:
            return float(np.sum((qw * values_qp)[cells]))
        return float(np.sum(qw * values_qp))

    def integrate_cellwise(self, space: MeasureSpace, values_cell: np.ndarray, cells: np.ndarray | None = None) -> float:
        cm = self.measure(space).cell_mass
        if cells is not None:
            return float(np.sum((cm * values_cell)[cells]))
        return float(np.sum(cm * values_cell))

    # -- io --------------------------------------------------------------
    def nodes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["node_id", "x1", "x2", "boundary"])
        for i, (p, b) in enumerate(zip(self.nodes, self.boundary)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), int(b)])
        return buf.getvalue()

    def cells_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["cell_id", "n0", "n1", "n2"])
        for i, c in enumerate(self.cells):
            w.writerow([i, *map(int, c)])
        return buf.getvalue()

    def save(self, directory: Path, stem: str = "mesh") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}_nodes.csv").write_text(self.nodes_csv(), encoding="utf-8")
        (directory / f"{stem}_cells.csv").write_text(self.cells_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, nodes_path: Path, cells_path: Path) -> "Mesh":
        try:
            with open(nodes_path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
            nodes = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
            bnd = np.array([int(r.get("boundary", 0)) for r in rows], dtype=bool)
            with open(cells_path, encoding="utf-8", newline="") as fh:
                cells = np.array([[int(r["n0"]), int(r["n1"]), int(r["n2"])] for r in csv.DictReader(fh)])
        except (KeyError, ValueError, OSError) as exc:
            raise ConfigError(f"cannot read mesh CSV: {exc}") from exc
        return cls(nodes, cells, bnd)


@dataclass(eq=False)
class DiscreteFunction:
    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("nodal values must match the mesh node count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")

    @classmethod
    def interpolate(cls, mesh: Mesh, fn) -> "DiscreteFunction":
        return cls(np.asarray(fn(mesh.nodes), float) * np.ones(mesh.n_nodes), mesh)

    def du(self) -> np.ndarray:
        return self.mesh.cell_gradients(self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["node_id", "x1", "x2", "u"])
        for i, (p, v) in enumerate(zip(self.mesh.nodes, self.values)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, mesh: Mesh, path: Path) -> "DiscreteFunction":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["node_id"]))
        return cls(np.array([float(r["u"]) for r in rows]), mesh)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def rectangle_mesh(lo=(0.0, 0.0), hi=(1.0, 1.0), h: float = 1 / 64) -> Mesh:
    """Crossed-triangle grid: each square split into 4 triangles through its centre."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    nx = max(1, int(round((hi[0] - lo[0]) / h)))
    ny = max(1, int(round((hi[1] - lo[1]) / h)))
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    corners = np.stack([X.ravel(), Y.ravel()], -1)
    cx = 0.5 * (xs[1:] + xs[:-1])
    cy = 0.5 * (ys[1:] + ys[:-1])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    centres = np.stack([CX.ravel(), CY.ravel()], -1)
    nodes = np.vstack([corners, centres])
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    c00 = I * (ny + 1) + J
    c10 = (I + 1) * (ny + 1) + J
    c11 = (I + 1) * (ny + 1) + J + 1
    c01 = I * (ny + 1) + J + 1
    ctr = len(corners) + I * ny + J
    cells = np.concatenate(
        [np.stack(t, -1) for t in ((c00, c10, ctr), (c10, c11, ctr), (c11, c01, ctr), (c01, c00, ctr))]
    )
    bnd = np.zeros(len(nodes), dtype=bool)
    bnd[: len(corners)] = (
        np.isclose(corners[:, 0], lo[0]) | np.isclose(corners[:, 0], hi[0]) | np.isclose(corners[:, 1], lo[1]) | np.isclose(corners[:, 1], hi[1])
    )
    return Mesh(nodes, cells, bnd)


def _stitch(inner: np.ndarray, outer: np.ndarray) -> list:
    """Triangulate the strip between two closed rings whose first nodes sit at angle 0."""
    a, b = len(inner), len(outer)
    tris = []
    if a == 1:
        return [(inner[0], outer[k], outer[(k + 1) % b]) for k in range(b)]
    i = k = 0
    while i < a or k < b:
        ti = 2 * math.pi * (i + 1) / a
        tk = 2 * math.pi * (k + 1) / b
        if k < b and (tk <= ti + 1e-12 or i >= a):
            tris.append((inner[i % a], outer[k % b], outer[(k + 1) % b]))
            k += 1
        else:
            tris.append((inner[i % a], outer[k % b], inner[(i + 1) % a]))
            i += 1
    return tris


def _ring_mesh(radii: np.ndarray, counts: list[int], centre_node: bool):
    polar = []
    rings = []
    start = 0
    if centre_node:
        polar.append((0.0, 0.0))
        rings.append(np.array([0]))
        start = 1
    for r, c in zip(radii, counts):
        th = 2 * math.pi * np.arange(c) / c
        polar.extend(zip(np.full(c, r), th))
        rings.append(np.arange(start, start + c))
        start += c
    polar = np.array(polar)
    tris = []
    for r0, r1 in zip(rings[:-1], rings[1:]):
        tris.extend(_stitch(r0, r1))
    return polar, np.array(tris, dtype=np.int64), rings


def _polar_to_xy(polar):
    return np.stack([polar[:, 0] * np.cos(polar[:, 1]), polar[:, 0] * np.sin(polar[:, 1])], -1)


def disk_mesh(R: float = 1.0, rings: int = 32, centre=(0.0, 0.0)) -> Mesh:
    """Hexagonal ring triangulation of the disk; ring j has 6j nodes at radius jR/rings."""
    radii = R * np.arange(1, rings + 1) / rings
    polar, cells, ring_idx = _ring_mesh(radii, [6 * j for j in range(1, rings + 1)], True)
    bnd = np.zeros(len(polar), dtype=bool)
    bnd[ring_idx[-1]] = True
    mesh = Mesh(_polar_to_xy(polar) + np.asarray(centre, float), _orient(polar, cells), bnd, node_dist=polar[:, 0].copy())
    mesh.polar = polar
    return mesh


def annulus_mesh(r_in: float, r_out: float, h: float = 1 / 32) -> Mesh:
    m = max(1, int(round((r_out - r_in) / h)))
    radii = np.linspace(r_in, r_out, m + 1)
    counts = [max(6, int(round(2 * math.pi * r / h))) for r in radii]
    polar, cells, ring_idx = _ring_mesh(radii, counts, False)
    bnd = np.zeros(len(polar), dtype=bool)
    bnd[ring_idx[0]] = True
    bnd[ring_idx[-1]] = True
    return Mesh(_polar_to_xy(polar), _orient(polar, cells), bnd)


def _orient(polar, cells):
    xy = _polar_to_xy(polar)
    P = xy[cells]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    cells = cells.copy()
    flip = det < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return cells


# --------------------------------------------------------------------------
# forward balls
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Ball:
    """Forward geodesic ball B_R(x0) meshed through the exponential map.

    Nodes are exp_x0(rho * xi(theta)) for a hexagonal ring grid in (rho,
    theta), so ``mesh.node_dist`` is the exact distance from the centre and
    every ring is a sub-ball boundary.
    """

    space: MeasureSpace
    center: np.ndarray
    R: float
    mesh: Mesh
    rings: int

    def node_mask(self, delta: float = 1.0) -> np.ndarray:
        return self.mesh.node_dist <= delta * self.R * (1 + 1e-12)

    def cell_mask(self, delta: float = 1.0) -> np.ndarray:
        return np.all(self.node_mask(delta)[self.mesh.cells], axis=1)

    def volume(self, delta: float = 1.0) -> float:
        return float(self.mesh.measure(self.space).cell_mass[self.cell_mask(delta)].sum())

    def integrate(self, nodal: np.ndarray, delta: float = 1.0, power: float = 1.0) -> float:
        vals = self.mesh.at_quadrature(nodal)
        if power != 1.0:
            vals = vals**power
        return self.mesh.integrate(self.space, vals, self.cell_mask(delta))

    def average(self, nodal: np.ndarray, delta: float = 1.0, power: float = 1.0) -> float:
        return self.integrate(nodal, delta, power) / self.volume(delta)

    def sup(self, nodal: np.ndarray, delta: float = 1.0) -> float:
        return float(np.max(np.asarray(nodal)[self.node_mask(delta)]))

    def inf(self, nodal: np.ndarray, delta: float = 1.0) -> float:
        return float(np.min(np.asarray(nodal)[self.node_mask(delta)]))

    def ring_delta(self, delta: float) -> float:
        """Largest ring fraction <= delta, so sub-balls are exact unions of cells."""
        return math.floor(delta * self.rings + 1e-9) / self.rings

    @property
    def param(self) -> np.ndarray:
        """Unit-disk parameter coordinates rho/R (cos theta, sin theta) of the nodes."""
        rho, th = self.mesh.polar[:, 0] / self.R, self.mesh.polar[:, 1]
        return np.stack([rho * np.cos(th), rho * np.sin(th)], -1)

    def sub_ball(self, delta: float) -> "Ball":
        """The ball B_{delta R} as its own mesh (delta is rounded down to a ring)."""
        j = int(math.floor(delta * self.rings + 1e-9))
        if j < 1:
            raise ValueError("sub-ball must contain at least one ring")
        keep = self.mesh.node_dist <= self.R * j / self.rings * (1 + 1e-12)
        new_id = -np.ones(self.mesh.n_nodes, dtype=np.int64)
        new_id[keep] = np.arange(int(keep.sum()))
        cells = new_id[self.mesh.cells[np.all(keep[self.mesh.cells], axis=1)]]
        dist = self.mesh.node_dist[keep]
        R2 = self.R * j / self.rings
        mesh = Mesh(self.mesh.nodes[keep], cells, dist >= R2 * (1 - 1e-12), node_dist=dist.copy())
        mesh.polar = self.mesh.polar[keep]
        return Ball(self.space, self.center, R2, mesh, j)

    def cutoff(self, delta: float, delta2: float) -> np.ndarray:
        """Nodal cut-off: 1 on B_{delta R}, 0 outside B_{delta2 R}, linear in distance between."""
        d = self.mesh.node_dist / self.R
        return np.clip((delta2 - d) / (delta2 - delta), 0.0, 1.0)


def ball_mesh(space: MeasureSpace, x0=(0.0, 0.0), R: float = 1.0, rings: int = 24) -> Ball:
    from .comparison import unit_directions
    from .geodesics import shoot_batch

    x0 = np.asarray(x0, float)
    space.metric.check_valid(x0)
    radii = R * np.arange(1, rings + 1) / rings
    polar, cells, ring_idx = _ring_mesh(radii, [6 * j for j in range(1, rings + 1)], True)
    cells = _orient(polar, cells)
    rho, theta = polar[:, 0], polar[:, 1]
    xi = unit_directions(space, x0, theta)
    if space.metric.is_constant:
        nodes = x0 + rho[:, None] * xi
    else:
        nodes = np.empty_like(xi)
        nodes[0] = x0
        y = rho[1:, None] * xi[1:]
        _, xs, _ = shoot_batch(space, np.broadcast_to(x0, y.shape), y, 1.0, step=1.0 / 64)
        nodes[1:] = xs[-1]
    bnd = np.zeros(len(nodes), dtype=bool)
    bnd[ring_idx[-1]] = True
    # the exp map preserves orientation for small balls; Mesh validates areas
    mesh = Mesh(nodes, cells, bnd, node_dist=rho.copy())
    mesh.polar = polar
    return Ball(space, x0, float(R), mesh, rings)
