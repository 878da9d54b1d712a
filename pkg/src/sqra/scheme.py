"""Fluxes, implicit-step residual/Jacobian and energy diagnostics.

The flux across a face is a Butler-Volmer style exchange between the two
adjacent unknowns: occupied volume on one side times free volume on the
other, weighted by half the potential drop in an exponential.  Written in
terms of the electrochemical potential xi = epsilon*h'(rho) + phi it takes
the form (2*epsilon/d_sigma) * eta_sigma * sinh(delta_xi / (2*epsilon))
with the geometric-mean edge mobility eta_sigma, which is what makes the
scheme dissipate the discrete free energy.

All flux evaluations factor the drift exponentials symmetrically so that
large potential drops over small epsilon cannot overflow prematurely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .physics import DiscreteData, DomainError, entropy, entropy_prime, mobility


class DimensionMismatch(ValueError):
    """Array sizes do not match the mesh."""


class SingularityWarning(UserWarning):
    """Jacobian requested within 1e-14 of the density bounds 0 or 1."""


def _pos(x):
    return np.maximum(x, 0.0)


def _pos_active(x):
    # derivative of the positive part; 0 only where the clamp is active
    return np.where(np.asarray(x) >= 0.0, 1.0, 0.0)


def interior_flux(rho_K, rho_L, phi_K, phi_L, d_sigma, epsilon=1.0):
    """Flux across an interior face, oriented from K to L.

    Increasing in rho_K and non-increasing in rho_L; antisymmetric under
    swapping the two sides.  Positive parts make it a total function of
    arbitrary real densities.
    """
    rho_K = np.asarray(rho_K, dtype=float)
    rho_L = np.asarray(rho_L, dtype=float)
    s = (np.asarray(phi_K, dtype=float) - np.asarray(phi_L, dtype=float)) / (2.0 * epsilon)
    m = np.abs(s)
    occupied = _pos(rho_K) * _pos(1.0 - rho_L)
    vacated = _pos(rho_L) * _pos(1.0 - rho_K)
    # factor exp(|s|) out of both exponentials so the drift factors stay <= 1;
    # the guards keep 0 * exp(huge) from turning into NaN
    with np.errstate(over="ignore", invalid="ignore"):
        gap = occupied * np.exp(s - m) - vacated * np.exp(-s - m)
        flux = np.where(gap == 0.0, 0.0, np.exp(m) * gap)
    return (epsilon / np.asarray(d_sigma, dtype=float)) * flux


def interior_flux_derivatives(rho_K, rho_L, phi_K, phi_L, d_sigma, epsilon=1.0):
    """(dF/drho_K, dF/drho_L) of :func:`interior_flux`.

    Uses the smooth formulas with subderivative 0 where a positive-part
    clamp is active; exact for densities inside [0, 1].
    """
    rho_K = np.asarray(rho_K, dtype=float)
    rho_L = np.asarray(rho_L, dtype=float)
    s = (np.asarray(phi_K, dtype=float) - np.asarray(phi_L, dtype=float)) / (2.0 * epsilon)
    m = np.abs(s)
    e_plus = np.exp(s - m)
    e_minus = np.exp(-s - m)
    g_K = (
        _pos_active(rho_K) * _pos(1.0 - rho_L) * e_plus
        + _pos(rho_L) * _pos_active(1.0 - rho_K) * e_minus
    )
    g_L = (
        _pos(rho_K) * _pos_active(1.0 - rho_L) * e_plus
        + _pos_active(rho_L) * _pos(1.0 - rho_K) * e_minus
    )
    with np.errstate(over="ignore", invalid="ignore"):
        grow = np.exp(m)
        d_K = np.where(g_K == 0.0, 0.0, grow * g_K)
        d_L = np.where(g_L == 0.0, 0.0, grow * g_L)
    scale = epsilon / np.asarray(d_sigma, dtype=float)
    return scale * d_K, -scale * d_L


def _boundary_terms(rho_K, phi_K, phi_sigma, alpha_sigma, beta_sigma, d_sigma, epsilon):
    # numerator/denominator of the boundary density, scaled by exp(-|s|)
    # so that no exponential exceeds one
    s = (np.asarray(phi_K, dtype=float) - np.asarray(phi_sigma, dtype=float)) / (2.0 * epsilon)
    m = np.abs(s)
    w = np.exp(-m)
    p = epsilon * np.exp(s - m)
    q = epsilon * np.exp(-s - m)
    d_sigma = np.asarray(d_sigma, dtype=float)
    rho_K = np.asarray(rho_K, dtype=float)
    num = d_sigma * np.asarray(beta_sigma, dtype=float) * w + _pos(rho_K) * p
    den = (
        d_sigma * np.asarray(alpha_sigma, dtype=float) * w
        + _pos(rho_K) * p
        + _pos(1.0 - rho_K) * q
    )
    return num, den, p, q


def boundary_density(rho_K, phi_K, phi_sigma, alpha_sigma, beta_sigma, d_sigma, epsilon=1.0):
    """Boundary-face density eliminating the face unknown.

    It is the unique value at which the two-point flux from the adjacent
    cell equals the exchange flux alpha*rho_sigma - beta, and it lies
    strictly inside (0, 1) whenever alpha > beta > 0.  Extreme drifts can
    round the ratio onto a bound, so the result is nudged back into the
    open interval by at most one ulp.
    """
    num, den, _, _ = _boundary_terms(
        rho_K, phi_K, phi_sigma, alpha_sigma, beta_sigma, d_sigma, epsilon
    )
    return np.clip(num / den, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def boundary_density_derivative(
    rho_K, phi_K, phi_sigma, alpha_sigma, beta_sigma, d_sigma, epsilon=1.0
):
    """d(rho_sigma)/d(rho_K); nonnegative for admissible boundary data."""
    num, den, p, q = _boundary_terms(
        rho_K, phi_K, phi_sigma, alpha_sigma, beta_sigma, d_sigma, epsilon
    )
    rho_K = np.asarray(rho_K, dtype=float)
    d_num = p * _pos_active(rho_K)
    d_den = p * _pos_active(rho_K) - q * _pos_active(1.0 - rho_K)
    return (d_num * den - num * d_den) / den**2


def boundary_flux(rho_sigma, alpha_sigma, beta_sigma):
    """Outward boundary exchange flux; positive sign means outflow."""
    return np.asarray(alpha_sigma) * np.asarray(rho_sigma) - np.asarray(beta_sigma)


@dataclass(frozen=True)
class FluxField:
    """One flux value per face, oriented from the owner cell outward."""

    values: np.ndarray     # (n_faces,)
    rho_face: np.ndarray   # (n_exterior,) boundary densities used for exterior fluxes


@dataclass(frozen=True)
class State:
    """Cell densities enriched with the derived boundary-face densities."""

    rho_cell: np.ndarray
    rho_face: np.ndarray   # aligned with mesh.exterior_faces
    time: float = 0.0


def face_fluxes(rho_cell, mesh: Mesh, data: DiscreteData, epsilon: float) -> FluxField:
    """Evaluate all face fluxes of a cell density vector."""
    rho_cell = np.asarray(rho_cell, dtype=float)
    if rho_cell.shape != (mesh.n_cells,):
        raise DimensionMismatch(
            f"expected {mesh.n_cells} cell values, got shape {rho_cell.shape}"
        )
    own = mesh.face_cells[:, 0]
    nbr = mesh.face_cells[:, 1]
    interior = mesh.interior_faces
    exterior = mesh.exterior_faces

    values = np.empty(mesh.n_faces)
    values[interior] = interior_flux(
        rho_cell[own[interior]],
        rho_cell[nbr[interior]],
        data.phi_cell[own[interior]],
        data.phi_cell[nbr[interior]],
        mesh.face_distances[interior],
        epsilon,
    )
    rho_face = boundary_density(
        rho_cell[own[exterior]],
        data.phi_cell[own[exterior]],
        data.phi_face,
        data.alpha_face,
        data.beta_face,
        mesh.face_distances[exterior],
        epsilon,
    )
    values[exterior] = boundary_flux(rho_face, data.alpha_face, data.beta_face)
    return FluxField(values=values, rho_face=rho_face)


def make_state(rho_cell, mesh: Mesh, data: DiscreteData, epsilon: float, time: float = 0.0) -> State:
    """Assemble a :class:`State` with boundary densities derived from the cells."""
    flux = face_fluxes(rho_cell, mesh, data, epsilon)
    return State(rho_cell=np.asarray(rho_cell, dtype=float), rho_face=flux.rho_face, time=time)


def residual(rho_new, rho_old, mesh: Mesh, data: DiscreteData, tau: float, epsilon: float):
    """Nonlinear residual of one implicit Euler step.

    Component K is m_K*(rho_K - rho_K_old)/tau plus the outward face
    fluxes of the new iterate; each component is strictly increasing in
    its own unknown and non-increasing in the neighbors.
    """
    rho_new = np.asarray(rho_new, dtype=float)
    rho_old = np.asarray(rho_old, dtype=float)
    if rho_new.shape != (mesh.n_cells,) or rho_old.shape != (mesh.n_cells,):
        raise DimensionMismatch(
            f"expected {mesh.n_cells} cell values, got {rho_new.shape} and {rho_old.shape}"
        )
    flux = face_fluxes(rho_new, mesh, data, epsilon)
    weighted = mesh.face_measures * flux.values
    out = mesh.cell_measures * (rho_new - rho_old) / tau
    out += np.bincount(mesh.face_cells[:, 0], weights=weighted, minlength=mesh.n_cells)
    interior = mesh.interior_faces
    out -= np.bincount(
        mesh.face_cells[interior, 1], weights=weighted[interior], minlength=mesh.n_cells
    )
    return out


def jacobian(rho_new, rho_old, mesh: Mesh, data: DiscreteData, tau: float, epsilon: float):
    """Sparse Jacobian of :func:`residual` in the new iterate.

    Positive diagonal, nonpositive off-diagonal entries on the mesh
    adjacency pattern.  Valid for iterates inside (0, 1); a
    :class:`SingularityWarning` is emitted when values sit within 1e-14 of
    the bounds where the positive-part kinks would bite.
    """
    rho_new = np.asarray(rho_new, dtype=float)
    if rho_new.shape != (mesh.n_cells,):
        raise DimensionMismatch(
            f"expected {mesh.n_cells} cell values, got shape {rho_new.shape}"
        )
    if rho_new.size and (rho_new.min() < 1e-14 or rho_new.max() > 1.0 - 1e-14):
        warnings.warn(
            "Jacobian evaluated within 1e-14 of the density bounds",
            SingularityWarning,
            stacklevel=2,
        )

    own = mesh.face_cells[:, 0]
    nbr = mesh.face_cells[:, 1]
    interior = mesh.interior_faces
    exterior = mesh.exterior_faces
    n = mesh.n_cells

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [mesh.cell_measures / tau]

    if interior.size:
        K, L = own[interior], nbr[interior]
        d_K, d_L = interior_flux_derivatives(
            rho_new[K], rho_new[L],
            data.phi_cell[K], data.phi_cell[L],
            mesh.face_distances[interior], epsilon,
        )
        m_sig = mesh.face_measures[interior]
        rows += [K, K, L, L]
        cols += [K, L, K, L]
        vals += [m_sig * d_K, m_sig * d_L, -m_sig * d_K, -m_sig * d_L]

    if exterior.size:
        K = own[exterior]
        d_sig = boundary_density_derivative(
            rho_new[K], data.phi_cell[K], data.phi_face,
            data.alpha_face, data.beta_face,
            mesh.face_distances[exterior], epsilon,
        )
        rows.append(K)
        cols.append(K)
        vals.append(mesh.face_measures[exterior] * data.alpha_face * d_sig)

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsc()


def electro_potential(rho_cell, rho_face, data: DiscreteData, epsilon: float):
    """Cell and boundary-face electrochemical potentials
    epsilon*h'(rho) + phi; requires densities strictly inside (0, 1)."""
    xi_cell = epsilon * entropy_prime(rho_cell) + data.phi_cell
    xi_face = epsilon * entropy_prime(rho_face) + data.phi_face
    return xi_cell, xi_face


def primal_potential(x, epsilon=1.0):
    """Primal dissipation potential; the Legendre transform of
    :func:`dual_potential` at the same epsilon.

    Evaluated as 2x*asinh(x/2) - 2x^2/(sqrt(x^2+4)+2), which is the
    cancellation-free form of 2x*asinh(x/2) - 2*sqrt(x^2+4) + 4, then
    scaled by epsilon.
    """
    x = np.asarray(x, dtype=float)
    return epsilon * (
        2.0 * x * np.arcsinh(0.5 * x) - 2.0 * x**2 / (np.sqrt(x**2 + 4.0) + 2.0)
    )


def dual_potential(s, epsilon=1.0):
    """Dual dissipation potential 4*epsilon*(cosh(s/(2*epsilon)) - 1),
    evaluated as 8*epsilon*sinh^2(s/(4*epsilon)) to avoid cancellation."""
    s = np.asarray(s, dtype=float)
    return 8.0 * epsilon * np.sinh(s / (4.0 * epsilon)) ** 2


def _edge_mobility(state: State, mesh: Mesh):
    eta_cell = mobility(state.rho_cell)
    eta_own = eta_cell[mesh.face_cells[:, 0]]
    eta_mirror = np.empty(mesh.n_faces)
    interior = mesh.interior_faces
    eta_mirror[interior] = eta_cell[mesh.face_cells[interior, 1]]
    eta_mirror[mesh.exterior_faces] = mobility(state.rho_face)
    return np.sqrt(eta_own * eta_mirror)


def _potential_gaps(state: State, mesh: Mesh, data: DiscreteData, epsilon: float):
    xi_cell, xi_face = electro_potential(state.rho_cell, state.rho_face, data, epsilon)
    gaps = np.empty(mesh.n_faces)
    interior = mesh.interior_faces
    own = mesh.face_cells[:, 0]
    gaps[interior] = xi_cell[own[interior]] - xi_cell[mesh.face_cells[interior, 1]]
    gaps[mesh.exterior_faces] = xi_cell[own[mesh.exterior_faces]] - xi_face
    return gaps


def dissipation_potentials(
    state: State, flux: FluxField, mesh: Mesh, data: DiscreteData, epsilon: float
):
    """Primal and dual dissipation of a state/flux pair, summed over all
    faces (boundary included).  Both are nonnegative, vanish exactly at
    equilibrium, and together equal the flux work by Young-Fenchel
    equality."""
    eta_sigma = _edge_mobility(state, mesh)
    if np.any(eta_sigma == 0.0):
        raise DomainError("edge mobility vanishes; state touches the bounds 0 or 1")
    a_sigma = mesh.transmissibilities
    x = mesh.face_distances * flux.values / (epsilon * eta_sigma)
    gaps = _potential_gaps(state, mesh, data, epsilon)
    d_primal = float((a_sigma * eta_sigma * primal_potential(x, epsilon)).sum())
    d_dual = float((a_sigma * eta_sigma * dual_potential(gaps, epsilon)).sum())
    return d_primal, d_dual


def bulk_free_energy(rho_cell, mesh: Mesh, data: DiscreteData, epsilon: float) -> float:
    """Free energy of the bulk: sum of m_K*(epsilon*h(rho_K) + phi_K*rho_K)."""
    rho_cell = np.asarray(rho_cell, dtype=float)
    return float(
        (mesh.cell_measures * (epsilon * entropy(rho_cell) + data.phi_cell * rho_cell)).sum()
    )


def _jump_seminorm(state: State, mesh: Mesh) -> float:
    # sum_sigma a_sigma (rho_K - rho_mirror)^2, boundary faces included
    rho = state.rho_cell
    own = mesh.face_cells[:, 0]
    interior = mesh.interior_faces
    jumps = np.empty(mesh.n_faces)
    jumps[interior] = rho[own[interior]] - rho[mesh.face_cells[interior, 1]]
    jumps[mesh.exterior_faces] = rho[own[mesh.exterior_faces]] - state.rho_face
    return float((mesh.transmissibilities * jumps**2).sum())


@dataclass
class EnergyLedger:
    """Per-step record of the free-energy budget.

    ``f_tot`` adds the cumulative boundary exchange (weighted by the
    boundary electrochemical potential) to the bulk energy, so that the
    two coincide at step zero and ``f_tot`` must decay along time.
    ``inequality_residual[n]`` is
    (f_tot[n]-f_tot[n-1])/tau + d_primal[n] + d_dual[n]; the scheme keeps
    it nonpositive up to round-off at unit epsilon.
    """

    times: list[float] = field(default_factory=list)
    f_bulk: list[float] = field(default_factory=list)
    boundary_exchange: list[float] = field(default_factory=list)
    f_tot: list[float] = field(default_factory=list)
    d_primal: list[float] = field(default_factory=list)
    d_dual: list[float] = field(default_factory=list)
    inequality_residual: list[float] = field(default_factory=list)
    jump_accum: list[float] = field(default_factory=list)  # cumulative tau-weighted jump seminorm

    @classmethod
    def start(cls, state0: State, mesh: Mesh, data: DiscreteData, epsilon: float) -> "EnergyLedger":
        ledger = cls()
        f0 = bulk_free_energy(state0.rho_cell, mesh, data, epsilon)
        ledger.times.append(state0.time)
        ledger.f_bulk.append(f0)
        ledger.boundary_exchange.append(0.0)
        ledger.f_tot.append(f0)
        ledger.d_primal.append(0.0)
        ledger.d_dual.append(0.0)
        ledger.inequality_residual.append(0.0)
        ledger.jump_accum.append(0.0)
        return ledger


def energy_step(
    ledger: EnergyLedger,
    state_new: State,
    flux_new: FluxField,
    mesh: Mesh,
    data: DiscreteData,
    tau: float,
    epsilon: float,
) -> EnergyLedger:
    """Append one accepted step to the energy ledger."""
    f_bulk = bulk_free_energy(state_new.rho_cell, mesh, data, epsilon)
    exterior = mesh.exterior_faces
    exchange_rate = float(
        (mesh.face_measures[exterior] * data.xi_gamma_face * flux_new.values[exterior]).sum()
    )
    exchange = ledger.boundary_exchange[-1] + tau * exchange_rate
    f_tot = f_bulk + exchange
    d_primal, d_dual = dissipation_potentials(state_new, flux_new, mesh, data, epsilon)
    r = (f_tot - ledger.f_tot[-1]) / tau + d_primal + d_dual

    ledger.times.append(state_new.time)
    ledger.f_bulk.append(f_bulk)
    ledger.boundary_exchange.append(exchange)
    ledger.f_tot.append(f_tot)
    ledger.d_primal.append(d_primal)
    ledger.d_dual.append(d_dual)
    ledger.inequality_residual.append(r)
    ledger.jump_accum.append(ledger.jump_accum[-1] + tau * _jump_seminorm(state_new, mesh))
    return ledger
