"""Admissible meshes for two-point flux approximation in 1D and 2D.

A mesh is admissible when the segment joining the centers of two adjacent
cells is orthogonal to their shared face; this is what makes the two-point
transmissibility m_sigma / d_sigma a consistent approximation of the normal
flux.  Uniform 1D grids are generated directly; 2D meshes are built from a
Delaunay triangulation with cells centered at the triangle circumcenters,
so center-to-center segments lie on the perpendicular bisectors of the
shared edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class NonAdmissible(Exception):
    """Mesh geometry violates an admissibility requirement.

    Carries the indices of the offending cells in ``cells``.
    """

    def __init__(self, message: str, cells: tuple[int, ...] = ()):
        super().__init__(message)
        self.cells = tuple(int(c) for c in cells)


class OrthogonalityViolation(NonAdmissible):
    """A center-to-center segment is not orthogonal to its face (non-Delaunay input)."""


@dataclass(frozen=True)
class Tolerances:
    """Validation tolerances for admissibility checks."""

    orthogonality: float = 1e-8        # max angle defect, radians
    geometric_identity: float = 1e-10  # relative, per-cell volume identity
    domain_measure: float = 1e-10      # relative, sum of cell measures
    min_distance_factor: float = 1e-12  # reject d_sigma < factor * mesh size


@dataclass(frozen=True)
class MeshQuality:
    size: float                 # largest cell diameter
    regularity: float           # max over cells/faces of diam/d_sigma + d_sigma/diam
    min_face_distance: float
    orthogonality_defect: float  # largest angle deviation, radians


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple[int, ...]
    detail: str


@dataclass(frozen=True)
class AdmissibilityReport:
    quality: MeshQuality
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        lines = [
            f"size delta_T          = {self.quality.size:.6g}",
            f"regularity zeta_T     = {self.quality.regularity:.6g}",
            f"min face distance     = {self.quality.min_face_distance:.6g}",
            f"orthogonality defect  = {self.quality.orthogonality_defect:.3g} rad",
        ]
        if self.ok:
            lines.append("admissible: yes")
        else:
            lines.append(f"admissible: NO ({len(self.violations)} violations)")
            for v in self.violations:
                lines.append(f"  [{v.kind}] at {list(v.where)}: {v.detail}")
        return "\n".join(lines)


@dataclass(frozen=True)
class Mesh:
    """Cell/face geometry of an admissible mesh.

    Faces are stored once each.  ``face_cells[f] = (K, L)`` gives the owner
    cell K and, for interior faces, the neighbor L; boundary faces have
    L = -1.  ``face_normals[f]`` is the unit normal outward with respect to
    the owner.  ``signed_half_distances[f] = (d_K, d_L)`` are the oriented
    center-to-face distances (d_L is NaN on boundary faces); they may be
    negative for cells whose center lies beyond the face.
    """

    dimension: int
    cell_centers: np.ndarray        # (n_cells, dimension)
    cell_measures: np.ndarray       # (n_cells,)
    cell_diameters: np.ndarray      # (n_cells,)
    face_points: np.ndarray         # (n_faces, dimension)
    face_measures: np.ndarray       # (n_faces,)
    face_distances: np.ndarray      # (n_faces,) d_sigma > 0
    face_normals: np.ndarray        # (n_faces, dimension)
    face_cells: np.ndarray          # (n_faces, 2) int
    signed_half_distances: np.ndarray  # (n_faces, 2)
    face_markers: np.ndarray | None = None  # (n_faces,) int, boundary labels
    cell_vertices: np.ndarray | None = None  # (n_cells, 3, 2) for simplicial meshes

    @property
    def n_cells(self) -> int:
        return self.cell_centers.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_cells.shape[0]

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @cached_property
    def exterior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def transmissibilities(self) -> np.ndarray:
        return self.face_measures / self.face_distances

    @cached_property
    def exterior_index(self) -> np.ndarray:
        """Position of each face within ``exterior_faces`` (-1 for interior)."""
        idx = np.full(self.n_faces, -1, dtype=np.int64)
        idx[self.exterior_faces] = np.arange(self.exterior_faces.size)
        return idx

    @property
    def total_measure(self) -> float:
        return float(self.cell_measures.sum())


def build_uniform_1d(n_cells: int, interval: tuple[float, float] = (0.0, 1.0)) -> Mesh:
    """Uniform 1D mesh with cells of equal length and centers at midpoints.

    Faces sit at the grid nodes; all face measures equal one, interior
    face distances equal the cell length and boundary distances half of it.
    """
    a, b = float(interval[0]), float(interval[1])
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if not a < b:
        raise ValueError(f"interval must satisfy a < b, got ({a}, {b})")

    h = (b - a) / n_cells
    nodes = a + h * np.arange(n_cells + 1)
    nodes[-1] = b
    centers = (a + h * (np.arange(n_cells) + 0.5)).reshape(-1, 1)

    n_faces = n_cells + 1
    face_cells = np.empty((n_faces, 2), dtype=np.int64)
    face_cells[:, 0] = np.arange(-1, n_cells)   # left cell
    face_cells[:, 1] = np.arange(0, n_faces)    # right cell
    face_cells[-1, 1] = -1
    # leftmost face is owned by cell 0 with outward normal -1
    face_cells[0, 0] = 0
    face_cells[0, 1] = -1

    normals = np.ones((n_faces, 1))
    normals[0, 0] = -1.0

    distances = np.full(n_faces, h)
    distances[0] = distances[-1] = 0.5 * h

    half = np.full((n_faces, 2), 0.5 * h)
    half[0, 1] = np.nan
    half[-1, 1] = np.nan

    return Mesh(
        dimension=1,
        cell_centers=centers,
        cell_measures=np.full(n_cells, h),
        cell_diameters=np.full(n_cells, h),
        face_points=nodes.reshape(-1, 1),
        face_measures=np.ones(n_faces),
        face_distances=distances,
        face_normals=normals,
        face_cells=face_cells,
        signed_half_distances=half,
    )


def _circumcenters(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    # intersection of the perpendicular bisectors; degenerate (collinear)
    # triangles are rejected by the caller via the area check
    d = 2.0 * (
        p0[:, 0] * (p1[:, 1] - p2[:, 1])
        + p1[:, 0] * (p2[:, 1] - p0[:, 1])
        + p2[:, 0] * (p0[:, 1] - p1[:, 1])
    )
    s0 = np.einsum("ij,ij->i", p0, p0)
    s1 = np.einsum("ij,ij->i", p1, p1)
    s2 = np.einsum("ij,ij->i", p2, p2)
    ux = (s0 * (p1[:, 1] - p2[:, 1]) + s1 * (p2[:, 1] - p0[:, 1]) + s2 * (p0[:, 1] - p1[:, 1])) / d
    uy = (s0 * (p2[:, 0] - p1[:, 0]) + s1 * (p0[:, 0] - p2[:, 0]) + s2 * (p1[:, 0] - p0[:, 0])) / d
    return np.column_stack([ux, uy])


def build_from_triangulation(
    nodes: np.ndarray,
    triangles: np.ndarray,
    boundary_markers: np.ndarray | None = None,
) -> Mesh:
    """Build a cell-centered mesh from a conforming Delaunay triangulation.

    Cell centers are the triangle circumcenters (they need not lie inside
    their triangle).  Interior face distances are center-to-center;
    boundary faces use the distance from the center to the edge midpoint,
    which is the foot of the perpendicular for circumcenters.

    Raises :class:`NonAdmissible` when two adjacent circumcenters coincide
    or a boundary circumcenter falls on its edge, and
    :class:`OrthogonalityViolation` when a shared edge fails the
    orthogonality/ordering check (non-Delaunay input).  Offending meshes
    are rejected rather than repaired.

    ``boundary_markers`` is an optional integer array of rows
    ``(i, j, marker)`` labelling boundary edges by their node indices.
    """
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise ValueError("nodes must be an (N, 2) array")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise ValueError("triangles must be an (M, 3) array")
    if tris.size and (tris.min() < 0 or tris.max() >= nodes.shape[0]):
        raise ValueError("triangle vertex index out of range")

    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    areas = 0.5 * np.abs(cross)
    edge_len = np.column_stack([
        np.linalg.norm(p1 - p0, axis=1),
        np.linalg.norm(p2 - p1, axis=1),
        np.linalg.norm(p0 - p2, axis=1),
    ])
    diameters = edge_len.max(axis=1)
    degenerate = np.flatnonzero(areas <= 1e-14 * diameters**2)
    if degenerate.size:
        raise NonAdmissible(
            f"degenerate (collinear) triangles: {degenerate[:8].tolist()}",
            cells=tuple(degenerate[:8]),
        )

    centers = _circumcenters(p0, p1, p2)
    delta = float(diameters.max())
    min_dist = Tolerances().min_distance_factor * delta
    ortho_tol = Tolerances().orthogonality

    # enumerate unique edges with their incident triangles and opposite vertices
    edge_map: dict[tuple[int, int], list[tuple[int, int]]] = {}
    local_edges = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    for t in range(tris.shape[0]):
        v = tris[t]
        for i, j, k in local_edges:
            key = (int(min(v[i], v[j])), int(max(v[i], v[j])))
            edge_map.setdefault(key, []).append((t, int(v[k])))

    marker_map: dict[tuple[int, int], int] = {}
    if boundary_markers is not None:
        bm = np.asarray(boundary_markers, dtype=np.int64)
        if bm.ndim != 2 or bm.shape[1] != 3:
            raise ValueError("boundary_markers must be rows of (i, j, marker)")
        for i, j, m in bm:
            key = (int(min(i, j)), int(max(i, j)))
            if key not in edge_map:
                raise ValueError(f"boundary marker references unknown edge {key}")
            marker_map[key] = int(m)

    n_faces = len(edge_map)
    face_points = np.empty((n_faces, 2))
    face_measures = np.empty(n_faces)
    face_distances = np.empty(n_faces)
    face_normals = np.empty((n_faces, 2))
    face_cells = np.full((n_faces, 2), -1, dtype=np.int64)
    half = np.full((n_faces, 2), np.nan)
    markers = np.zeros(n_faces, dtype=np.int64)

    for f, (key, incident) in enumerate(edge_map.items()):
        if len(incident) > 2:
            raise ValueError(f"edge {key} is shared by more than two triangles")
        pa, pb = nodes[key[0]], nodes[key[1]]
        length = float(np.linalg.norm(pb - pa))
        tangent = (pb - pa) / length
        midpoint = 0.5 * (pa + pb)

        owner, opp = incident[0]
        normal = np.array([tangent[1], -tangent[0]])
        if normal @ (nodes[opp] - pa) > 0.0:
            normal = -normal

        face_points[f] = midpoint
        face_measures[f] = length
        face_normals[f] = normal
        face_cells[f, 0] = owner
        d_owner = float((midpoint - centers[owner]) @ normal)
        half[f, 0] = d_owner

        if len(incident) == 2:
            neigh = incident[1][0]
            dvec = centers[neigh] - centers[owner]
            d_sigma = float(np.linalg.norm(dvec))
            if d_sigma < min_dist:
                raise NonAdmissible(
                    f"coincident circumcenters for cells {owner} and {neigh} "
                    f"(d_sigma = {d_sigma:.3g})",
                    cells=(owner, neigh),
                )
            defect = abs(float(dvec @ tangent)) / d_sigma
            if defect > ortho_tol:
                raise OrthogonalityViolation(
                    f"edge {key} between cells {owner} and {neigh} fails the "
                    f"orthogonality check (defect {defect:.3g})",
                    cells=(owner, neigh),
                )
            if float(dvec @ normal) <= 0.0:
                raise OrthogonalityViolation(
                    f"circumcenters of cells {owner} and {neigh} are ordered "
                    "against the face normal (non-Delaunay pair)",
                    cells=(owner, neigh),
                )
            face_cells[f, 1] = neigh
            face_distances[f] = d_sigma
            half[f, 1] = float((midpoint - centers[neigh]) @ -normal)
        else:
            d_sigma = abs(d_owner)
            if d_sigma < min_dist:
                raise NonAdmissible(
                    f"circumcenter of boundary cell {owner} lies on its "
                    f"boundary edge {key}",
                    cells=(owner,),
                )
            face_distances[f] = d_sigma
            markers[f] = marker_map.get(key, 0)

    return Mesh(
        dimension=2,
        cell_centers=centers,
        cell_measures=areas,
        cell_diameters=diameters,
        face_points=face_points,
        face_measures=face_measures,
        face_distances=face_distances,
        face_normals=face_normals,
        face_cells=face_cells,
        signed_half_distances=half,
        face_markers=markers,
        cell_vertices=np.stack([p0, p1, p2], axis=1),
    )


def _orthogonality_defects(mesh: Mesh) -> np.ndarray:
    """Per-face angle (radians) between the center segment and the face normal."""
    defect = np.zeros(mesh.n_faces)
    if mesh.dimension != 2:
        return defect
    own = mesh.face_cells[:, 0]
    nbr = mesh.face_cells[:, 1]
    interior = mesh.interior_faces
    exterior = mesh.exterior_faces
    tangents = np.column_stack([-mesh.face_normals[:, 1], mesh.face_normals[:, 0]])
    if interior.size:
        dvec = mesh.cell_centers[nbr[interior]] - mesh.cell_centers[own[interior]]
        norms = np.linalg.norm(dvec, axis=1)
        sin_ang = np.abs(np.einsum("ij,ij->i", dvec, tangents[interior])) / norms
        defect[interior] = np.arcsin(np.clip(sin_ang, 0.0, 1.0))
    if exterior.size:
        dvec = mesh.face_points[exterior] - mesh.cell_centers[own[exterior]]
        norms = np.linalg.norm(dvec, axis=1)
        sin_ang = np.abs(np.einsum("ij,ij->i", dvec, tangents[exterior])) / norms
        defect[exterior] = np.arcsin(np.clip(sin_ang, 0.0, 1.0))
    return defect


def mesh_quality(mesh: Mesh) -> MeshQuality:
    """Size, regularity factor and worst-case geometry of a mesh."""
    own = mesh.face_cells[:, 0]
    interior = mesh.interior_faces
    diam_own = mesh.cell_diameters[own]
    ratio = diam_own / mesh.face_distances + mesh.face_distances / diam_own
    regularity = float(ratio.max())
    if interior.size:
        diam_nbr = mesh.cell_diameters[mesh.face_cells[interior, 1]]
        d_int = mesh.face_distances[interior]
        regularity = max(regularity, float((diam_nbr / d_int + d_int / diam_nbr).max()))
    return MeshQuality(
        size=float(mesh.cell_diameters.max()),
        regularity=regularity,
        min_face_distance=float(mesh.face_distances.min()),
        orthogonality_defect=float(_orthogonality_defects(mesh).max()) if mesh.n_faces else 0.0,
    )


def validate_admissibility(mesh: Mesh, tolerances: Tolerances | None = None) -> AdmissibilityReport:
    """Check every admissibility invariant and report all violations.

    Never raises on a bad mesh; the report lists each violated invariant
    with the offending cell or face indices.
    """
    tol = tolerances or Tolerances()
    violations: list[Violation] = []

    d = mesh.dimension
    own = mesh.face_cells[:, 0]
    nbr = mesh.face_cells[:, 1]
    interior = mesh.interior_faces
    exterior = mesh.exterior_faces

    # pairwise distinct centers (exact duplicates)
    _, first_idx, counts = np.unique(
        mesh.cell_centers, axis=0, return_index=True, return_counts=True
    )
    dup = first_idx[counts > 1]
    for i in dup:
        same = np.flatnonzero((mesh.cell_centers == mesh.cell_centers[i]).all(axis=1))
        violations.append(Violation(
            "duplicate-centers", tuple(same.tolist()),
            f"cells share the center {mesh.cell_centers[i]}",
        ))

    delta = float(mesh.cell_diameters.max())
    too_close = np.flatnonzero(mesh.face_distances < tol.min_distance_factor * delta)
    for f in too_close:
        violations.append(Violation(
            "face-distance", (int(f),),
            f"d_sigma = {mesh.face_distances[f]:.3g} below threshold",
        ))

    # oriented half distances must sum to the center distance on interior faces
    if interior.size:
        s = mesh.signed_half_distances[interior].sum(axis=1)
        rel = np.abs(s - mesh.face_distances[interior]) / mesh.face_distances[interior]
        bad = np.flatnonzero(rel > tol.geometric_identity)
        for b in bad:
            f = int(interior[b])
            violations.append(Violation(
                "half-distance-sum", (f,),
                f"d_K + d_L = {s[b]:.17g} but d_sigma = {mesh.face_distances[f]:.17g}",
            ))

    # per-cell volume identity m_K = (1/d) sum m_sigma d_K_sigma
    contrib = mesh.face_measures * mesh.signed_half_distances[:, 0]
    acc = np.bincount(own, weights=contrib, minlength=mesh.n_cells)
    if interior.size:
        contrib_n = (mesh.face_measures[interior] * mesh.signed_half_distances[interior, 1])
        acc += np.bincount(nbr[interior], weights=contrib_n, minlength=mesh.n_cells)
    residual = np.abs(acc / d - mesh.cell_measures) / mesh.cell_measures
    bad_cells = np.flatnonzero(residual > tol.geometric_identity)
    for c in bad_cells:
        violations.append(Violation(
            "geometric-identity", (int(c),),
            f"relative residual {residual[c]:.3g}",
        ))

    # orthogonality of center segments against the face plane
    defect = _orthogonality_defects(mesh)
    bad_faces = np.flatnonzero(defect > tol.orthogonality)
    for f in bad_faces:
        violations.append(Violation(
            "orthogonality", (int(f),),
            f"angle defect {defect[f]:.3g} rad between cells "
            f"{own[f]} and {nbr[f] if nbr[f] >= 0 else 'boundary'}",
        ))

    # total measure against the boundary-integral measure of the domain
    measure_bulk = mesh.total_measure
    flux = np.einsum("ij,ij->i", mesh.face_points[exterior], mesh.face_normals[exterior])
    measure_boundary = float((mesh.face_measures[exterior] * flux).sum()) / d
    if abs(measure_bulk - measure_boundary) > tol.domain_measure * abs(measure_boundary):
        violations.append(Violation(
            "domain-measure", (),
            f"sum of cell measures {measure_bulk:.17g} differs from the "
            f"domain measure {measure_boundary:.17g}",
        ))

    return AdmissibilityReport(quality=mesh_quality(mesh), violations=tuple(violations))


def write_mesh_file(
    path: str | Path,
    nodes: np.ndarray,
    triangles: np.ndarray,
    boundary: np.ndarray | None = None,
) -> None:
    """Write a triangulation as a plain-text node/element list."""
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    lines = [f"nodes {nodes.shape[0]}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in nodes]
    lines.append(f"triangles {tris.shape[0]}")
    lines += [f"{i} {j} {k}" for i, j, k in tris]
    if boundary is not None:
        bm = np.asarray(boundary, dtype=np.int64)
        lines.append(f"boundary {bm.shape[0]}")
        lines += [f"{i} {j} {m}" for i, j, m in bm]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_file(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read a plain-text triangulation file written by :func:`write_mesh_file`."""
    text = Path(path).read_text()
    tokens = text.split()
    pos = 0

    def expect(keyword: str) -> int:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != keyword:
            got = tokens[pos] if pos < len(tokens) else "<eof>"
            raise ValueError(f"mesh file {path}: expected '{keyword}', got '{got}'")
        pos += 1
        count = int(tokens[pos])
        pos += 1
        return count

    n = expect("nodes")
    nodes = np.array(tokens[pos:pos + 2 * n], dtype=float).reshape(n, 2)
    pos += 2 * n
    m = expect("triangles")
    tris = np.array(tokens[pos:pos + 3 * m], dtype=np.int64).reshape(m, 3)
    pos += 3 * m
    boundary = None
    if pos < len(tokens):
        b = expect("boundary")
        boundary = np.array(tokens[pos:pos + 3 * b], dtype=np.int64).reshape(b, 3)
        pos += 3 * b
    if pos != len(tokens):
        raise ValueError(f"mesh file {path}: trailing content after section data")
    return nodes, tris, boundary
