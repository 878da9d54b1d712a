"""Delaunay test meshes of the unit square.

The solver library does not triangulate domains itself; experiments on the
unit square use a staggered lattice of points fed to scipy's Delaunay
triangulation.  The staggering makes the triangles near-equilateral, which
keeps circumcenters distinct and well inside the domain, and breaks the
cocircular degeneracies a regular grid would create.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import Mesh, build_from_triangulation


def unit_square_points(n: int) -> np.ndarray:
    """Staggered lattice covering [0,1]^2 with ~n points per row.

    Even rows hold n+1 equispaced points including both vertical edges;
    odd rows are offset by half a spacing and padded with the two edge
    points so the boundary stays straight.
    """
    if n < 2:
        raise ValueError(f"lattice resolution must be >= 2, got {n}")
    n_rows = max(2, round(n * 2.0 / np.sqrt(3.0)))
    ys = np.linspace(0.0, 1.0, n_rows + 1)
    points = []
    for j, y in enumerate(ys):
        if j % 2 == 0:
            xs = np.linspace(0.0, 1.0, n + 1)
        else:
            xs = np.concatenate([[0.0], (np.arange(n) + 0.5) / n, [1.0]])
        points.append(np.column_stack([xs, np.full(xs.size, y)]))
    return np.vstack(points)


def unit_square_triangulation(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Delaunay triangulation of the staggered lattice; (nodes, triangles)."""
    nodes = unit_square_points(n)
    tri = Delaunay(nodes)
    return nodes, tri.simplices.astype(np.int64)


def unit_square_mesh(n: int) -> Mesh:
    """Admissible circumcenter mesh of the unit square (~2*n^2*2/sqrt(3) cells)."""
    nodes, tris = unit_square_triangulation(n)
    return build_from_triangulation(nodes, tris)
