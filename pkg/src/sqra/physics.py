"""Continuous problem data and its sampling onto a mesh.

The model transports a density rho in [0,1] with mobility rho*(1-rho)
under a fixed potential, exchanging mass through the boundary at rate
alpha*rho - beta.  This module holds the continuous fields, the scalar
functions (mobility, mixing entropy, equilibria) and the discretization
of the data onto mesh cells and boundary faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh

# A field maps an (N, dim) array of points to an (N,) array of values.
Field = Callable[[np.ndarray], np.ndarray]


class BoundaryDataError(ValueError):
    """Sampled boundary exchange rates violate alpha > beta > 0."""


class DomainError(ValueError):
    """Argument outside the function's domain (densities at 0 or 1)."""


def mobility(rho):
    """Volume-filling mobility rho*(1-rho); vanishes at both bounds."""
    rho = np.asarray(rho, dtype=float)
    return rho * (1.0 - rho)


def entropy(rho):
    """Mixing entropy density, shifted to be nonnegative with minimum 0 at 1/2.

    Defined on [0,1] with the convention 0*log(0) = 0, so the endpoint
    value is log(2).
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise DomainError("entropy is defined on [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rho > 0.0, rho * np.log(np.where(rho > 0.0, rho, 1.0)), 0.0)
        terms = terms + np.where(
            rho < 1.0, (1.0 - rho) * np.log(np.where(rho < 1.0, 1.0 - rho, 1.0)), 0.0
        )
    return terms + np.log(2.0)


def entropy_prime(rho):
    """Chemical potential log(rho/(1-rho)); strictly increasing on (0,1)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0) or np.any(rho >= 1.0):
        raise DomainError("entropy_prime requires rho strictly inside (0, 1)")
    return np.log(rho / (1.0 - rho))


def logistic(u):
    """Inverse of entropy_prime, evaluated overflow-safely."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class PiecewiseConstant1D:
    """1D initial profile with one jump, averaged exactly over cells."""

    def __init__(self, threshold: float, left: float = 1.0, right: float = 0.0):
        if not (0.0 <= left <= 1.0 and 0.0 <= right <= 1.0):
            raise ValueError("profile values must lie in [0, 1]")
        self.threshold = float(threshold)
        self.left = float(left)
        self.right = float(right)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points)[..., 0]
        return np.where(x < self.threshold, self.left, self.right)

    def cell_averages(self, mesh: Mesh) -> np.ndarray:
        centers = mesh.cell_centers[:, 0]
        h = mesh.cell_measures
        left_edge = centers - 0.5 * h
        frac_left = np.clip((self.threshold - left_edge) / h, 0.0, 1.0)
        return self.left * frac_left + self.right * (1.0 - frac_left)


class EquilibriumInitialData:
    """Start from the discrete thermal equilibrium with potential level z.

    Resolved at discretization time against the sampled cell potential, so
    the initial state is the exact fixed point of the scheme.
    """

    def __init__(self, z: float):
        self.z = float(z)

    def cell_values(self, phi_cell: np.ndarray, epsilon: float) -> np.ndarray:
        return logistic((self.z - phi_cell) / epsilon)


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous data of one problem instance.

    ``phi`` is the driving potential on the closed domain, ``alpha`` and
    ``beta`` the boundary exchange rates (alpha > beta > 0 pointwise on the
    boundary), ``rho0`` the initial density with values in [0,1] and
    ``epsilon`` the inverse Peclet number weighting the diffusion.
    """

    phi: Field
    alpha: Field
    beta: Field
    rho0: Field | PiecewiseConstant1D | EquilibriumInitialData
    epsilon: float = 1.0
    final_time: float = 1.0
    time_step: float = 0.01

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.time_step > 0.0:
            raise ValueError(f"time_step must be positive, got {self.time_step}")
        # final_time 0 is allowed: a zero-step run returns the initial state
        if self.final_time < 0.0:
            raise ValueError(f"final_time must be nonnegative, got {self.final_time}")


@dataclass(frozen=True)
class DiscreteData:
    """Problem data sampled on a mesh.

    Boundary arrays are aligned with ``mesh.exterior_faces``.  The boundary
    electrochemical potential ``xi_gamma_face`` uses the epsilon-scaled
    form phi_sigma - epsilon*log(alpha/beta - 1), matching the cell
    potential epsilon*h'(rho) + phi so that boundary fluxes keep the sign
    of the potential gap at any epsilon.
    """

    epsilon: float
    phi_cell: np.ndarray       # (n_cells,)
    phi_face: np.ndarray       # (n_exterior,)
    alpha_face: np.ndarray     # (n_exterior,)
    beta_face: np.ndarray      # (n_exterior,)
    xi_gamma_face: np.ndarray  # (n_exterior,)
    rho0_cell: np.ndarray      # (n_cells,)


def _cell_average(field, mesh: Mesh) -> np.ndarray:
    if isinstance(field, PiecewiseConstant1D) and mesh.dimension == 1:
        return field.cell_averages(mesh)
    if mesh.dimension == 1:
        # composite midpoint rule on 4 subintervals per cell
        centers = mesh.cell_centers[:, 0]
        h = mesh.cell_measures
        offsets = (np.arange(4) + 0.5) / 4.0 - 0.5
        pts = centers[:, None] + offsets[None, :] * h[:, None]
        vals = field(pts.reshape(-1, 1)).reshape(mesh.n_cells, 4)
        return vals.mean(axis=1)
    if mesh.cell_vertices is None:
        raise ValueError("cell averages on 2D meshes require simplicial cell vertices")
    # split each triangle into 4 congruent sub-triangles (edge midpoints)
    # and sample their centroids; equal weights since areas match
    a = mesh.cell_vertices[:, 0]
    b = mesh.cell_vertices[:, 1]
    c = mesh.cell_vertices[:, 2]
    mab, mbc, mca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    centroids = np.stack([
        (a + mab + mca) / 3.0,
        (b + mbc + mab) / 3.0,
        (c + mca + mbc) / 3.0,
        (mab + mbc + mca) / 3.0,
    ], axis=1)  # (n_cells, 4, 2)
    vals = field(centroids.reshape(-1, 2)).reshape(mesh.n_cells, 4)
    return vals.mean(axis=1)


def discretize(spec: ProblemSpec, mesh: Mesh) -> DiscreteData:
    """Sample problem data on a mesh: potential at cell centers and
    boundary face points, exchange rates at boundary face points, and
    exact-or-quadrature cell averages of the initial density."""
    ext = mesh.exterior_faces
    phi_cell = np.asarray(spec.phi(mesh.cell_centers), dtype=float)
    phi_face = np.asarray(spec.phi(mesh.face_points[ext]), dtype=float)
    alpha_face = np.asarray(spec.alpha(mesh.face_points[ext]), dtype=float)
    beta_face = np.asarray(spec.beta(mesh.face_points[ext]), dtype=float)

    bad = np.flatnonzero(~((alpha_face > beta_face) & (beta_face > 0.0)))
    if bad.size:
        f = int(ext[bad[0]])
        raise BoundaryDataError(
            f"boundary data must satisfy alpha > beta > 0; violated at face {f} "
            f"(alpha={alpha_face[bad[0]]:.6g}, beta={beta_face[bad[0]]:.6g}) "
            f"and {bad.size - 1} more"
        )

    xi_gamma = phi_face - spec.epsilon * np.log(alpha_face / beta_face - 1.0)
    if not np.all(np.isfinite(xi_gamma)):
        raise BoundaryDataError("boundary electrochemical potential is not finite")

    if isinstance(spec.rho0, EquilibriumInitialData):
        rho0_cell = spec.rho0.cell_values(phi_cell, spec.epsilon)
    else:
        rho0_cell = _cell_average(spec.rho0, mesh)
    rho0_cell = np.asarray(rho0_cell, dtype=float)
    if np.any(rho0_cell < 0.0) or np.any(rho0_cell > 1.0):
        raise ValueError("initial cell averages fall outside [0, 1]")

    return DiscreteData(
        epsilon=spec.epsilon,
        phi_cell=phi_cell,
        phi_face=phi_face,
        alpha_face=alpha_face,
        beta_face=beta_face,
        xi_gamma_face=xi_gamma,
        rho0_cell=rho0_cell,
    )


def equilibrium_density(mesh: Mesh, data: DiscreteData, z: float) -> np.ndarray:
    """Discrete thermal equilibrium: the logistic profile at which all
    fluxes vanish when the boundary data is compatible with level z."""
    return logistic((z - data.phi_cell) / data.epsilon)
