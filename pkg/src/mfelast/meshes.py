"""Nested structured quad/hex mesh hierarchy with DoF numbering.

The domain is the axis-aligned square/cube [0, extent]^d, meshed with a
uniform n0^d coarse grid and refined by repeated 2^d subdivision so the
levels nest exactly.  The bottom face (minimal y) is the fixed boundary,
the top face carries the surface load, and two ball-shaped inclusions of
radius extent/5 centered at (0.3, 0.3[, 0.5]) extent and
(0.7, 0.7[, 0.5]) extent are tagged with the stiff material, re-evaluated
from cell centroids on every level.

Degrees of freedom are vector-valued tensor-product Lagrange nodes with
components interleaved: ``dof = d * node + component``; nodes are numbered
x-fastest on the (p n_c + 1)^d grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "BoundaryTag",
    "MeshLevel",
    "MeshHierarchy",
    "DofMap",
    "ProblemSetup",
    "build_hierarchy",
    "inclusion_id",
    "distribute_dofs",
    "quadrature_dof_ratio",
    "export_summary_csv",
]

INCLUSION_RADIUS_FRACTION = 0.2
INCLUSION_CENTERS = ((0.3, 0.3, 0.5), (0.7, 0.7, 0.5))


class BoundaryTag(IntEnum):
    FREE = 0
    DIRICHLET_BOTTOM = 1
    NEUMANN_TOP = 2


@dataclass
class MeshLevel:
    """One uniformly refined level: n_c cells per direction."""

    dim: int
    extent: float
    n_c: int
    index: int
    vertices: np.ndarray      # (n_verts, d) coordinates [mm]
    cells: np.ndarray         # (n_cells, 2^d) vertex ids, x-fastest corners
    material_id: np.ndarray   # (n_cells,) 0 = matrix, 1 = stiff inclusion
    parent_id: np.ndarray     # (n_cells,) coarse-cell index, -1 on level 0
    boundary_faces: np.ndarray  # (n_bfaces, 3): cell, local face, tag

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def h(self) -> float:
        return self.extent / self.n_c

    def cell_centroids(self) -> np.ndarray:
        grid = _cell_grid(self.n_c, self.dim)
        return (grid + 0.5) * self.h


@dataclass
class MeshHierarchy:
    dim: int
    extent: float
    levels: list

    @property
    def finest(self) -> MeshLevel:
        return self.levels[-1]


def _cell_grid(n_c, dim):
    """Integer (cx, cy[, cz]) triples for all cells, x-fastest ordering."""
    axes = [np.arange(n_c)] * dim
    # index = cx + n_c * (cy + n_c * cz)
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel(order="F") for m in mesh], axis=1)
    return coords


def inclusion_id(points, extent, dim) -> np.ndarray:
    """Material id (0 or 1) of each point under the two-ball predicate."""
    pts = np.atleast_2d(points) / extent
    inside = np.zeros(len(pts), dtype=bool)
    for center in INCLUSION_CENTERS:
        c = np.array(center[:dim])
        inside |= np.sum((pts - c) ** 2, axis=1) <= INCLUSION_RADIUS_FRACTION**2
    return inside.astype(np.uint8)


def _build_level(dim, n_c, extent, index):
    h = extent / n_c
    nv1 = n_c + 1
    vert_grid = _cell_grid(nv1, dim)  # reuse: x-fastest integer grid
    vertices = vert_grid * h

    grid = _cell_grid(n_c, dim)
    n_cells = grid.shape[0]
    corners = _cell_grid(2, dim)  # the 2^d local corner offsets
    cells = np.zeros((n_cells, 2**dim), dtype=np.int64)
    for loc, off in enumerate(corners):
        idx = grid + off
        flat = idx[:, 0]
        for k in range(1, dim):
            flat = flat + idx[:, k] * nv1**k
        cells[:, loc] = flat

    centroids = (grid + 0.5) * h
    material = inclusion_id(centroids, extent, dim)

    if index == 0:
        parent = np.full(n_cells, -1, dtype=np.int64)
    else:
        coarse = grid // 2
        nc_parent = n_c // 2
        parent = coarse[:, 0]
        for k in range(1, dim):
            parent = parent + coarse[:, k] * nc_parent**k

    faces = []
    for axis in range(dim):
        for side in (0, 1):
            mask = grid[:, axis] == (0 if side == 0 else n_c - 1)
            tag = BoundaryTag.FREE
            if axis == 1 and side == 0:
                tag = BoundaryTag.DIRICHLET_BOTTOM
            elif axis == 1 and side == 1:
                tag = BoundaryTag.NEUMANN_TOP
            local_face = 2 * axis + side
            for cell in np.nonzero(mask)[0]:
                faces.append((cell, local_face, int(tag)))
    boundary_faces = np.array(faces, dtype=np.int64)

    return MeshLevel(dim, extent, n_c, index, vertices, cells, material,
                     parent, boundary_faces)


def build_hierarchy(dim, n0, n_refines, extent=1000.0) -> MeshHierarchy:
    """Nested hierarchy over [0, extent]^d; level L has n0 * 2^L cells/dir."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if n0 < 1 or n_refines < 0:
        raise ValueError("need n0 >= 1 and n_refines >= 0")
    levels = [_build_level(dim, n0 * 2**l, extent, l)
              for l in range(n_refines + 1)]
    return MeshHierarchy(dim, extent, levels)


@dataclass
class DofMap:
    """Continuous vector-valued Q_p numbering on one structured level."""

    dim: int
    p: int
    n_c: int
    extent: float
    n_nodes: int
    n_dofs: int
    conn: np.ndarray            # (n_cells, d (p+1)^d) global dof per local dof
    dirichlet_mask: np.ndarray  # (n_dofs,) bool
    support_points: np.ndarray  # (n_nodes, d) coordinates [mm]

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.dirichlet_mask


def distribute_dofs(level: MeshLevel, p: int) -> DofMap:
    """Number vector-valued Q_p DoFs; count is d (p n_c + 1)^d exactly."""
    if p < 1:
        raise ValueError("polynomial degree must be >= 1")
    dim, n_c = level.dim, level.n_c
    nodes1d = p * n_c + 1
    n_nodes = nodes1d**dim
    n_dofs = dim * n_nodes

    grid = _cell_grid(n_c, dim)          # (n_cells, d)
    local = _cell_grid(p + 1, dim)       # (n_loc_nodes, d), x-fastest
    n_cells = grid.shape[0]
    n_loc = local.shape[0]

    node = np.zeros((n_cells, n_loc), dtype=np.int64)
    for k in range(dim):
        gk = grid[:, k][:, None] * p + local[:, k][None, :]
        node += gk * nodes1d**k
    conn = (node[:, :, None] * dim
            + np.arange(dim)[None, None, :]).reshape(n_cells, n_loc * dim)

    node_grid = _cell_grid(nodes1d, dim)
    support_points = node_grid * (level.extent / (p * n_c))

    bottom = node_grid[:, 1] == 0
    dirichlet = np.repeat(bottom, dim)
    return DofMap(dim, p, n_c, level.extent, n_nodes, n_dofs, conn,
                  dirichlet, support_points)


def quadrature_dof_ratio(level: MeshLevel, p: int) -> float:
    """Total quadrature points over scalar DoFs, computed from exact counts."""
    n_qp = (level.n_c * (p + 1)) ** level.dim
    n_scalar = (p * level.n_c + 1) ** level.dim
    return n_qp / n_scalar


def export_summary_csv(hier: MeshHierarchy, p: int, path) -> None:
    """Write one row per level: level, cells, dofs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "cells", "dofs"])
        for lvl in hier.levels:
            dm = distribute_dofs(lvl, p)
            writer.writerow([lvl.index, lvl.n_cells, dm.n_dofs])


@dataclass
class ProblemSetup:
    """Benchmark problem: hierarchy, degree, incremental traction, materials."""

    hierarchy: MeshHierarchy
    p: int
    traction: np.ndarray        # [N/mm^2] on the top face
    load_steps: int
    base_params: "object"       # MaterialParams of the matrix material
    stiffness_contrast: float = 100.0

    def params_by_id(self):
        return {0: self.base_params,
                1: self.base_params.scaled(self.stiffness_contrast)}
