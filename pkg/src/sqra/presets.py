"""Built-in experiment presets.

Each preset bundles the fields, inverse Peclet number and time grid of one
of the validation experiments:

* ``conv-1d``    drift towards the left boundary on (0,1) from a step
                 profile, with constant exchange rates; the workhorse for
                 the space/time convergence studies.
* ``eq-1d``      1D boundary data compatible with a thermal equilibrium
                 (constant boundary electrochemical potential 1/2).
* ``eq-2d``      the same equilibrium-compatible data on the unit square.
* ``noneq-2d``   generic exchange rates on the unit square for which no
                 thermal equilibrium exists; run far in time to reach the
                 nonequilibrium steady state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .physics import EquilibriumInitialData, PiecewiseConstant1D, ProblemSpec, logistic


def equilibrium_exchange(phi, z: float, epsilon: float):
    """Exchange rates alpha = 1 + e^{(z-phi)/eps}, beta = e^{(z-phi)/eps}.

    With these the boundary electrochemical potential is the constant z,
    so the logistic profile at level z is a steady state with zero flux.
    """

    def alpha(points):
        return 1.0 + np.exp((z - phi(points)) / epsilon)

    def beta(points):
        return np.exp((z - phi(points)) / epsilon)

    return alpha, beta


def _phi_1d(points):
    return 1.0 - points[:, 0]


def _phi_2d(points):
    return 1.0 - points[:, 1]


def _ones(points):
    return np.ones(points.shape[0])


def _half(points):
    return np.full(points.shape[0], 0.5)


def _beta_noneq(points):
    x1 = points[:, 0]
    x2 = points[:, 1]
    return 0.1 + 0.8 * (np.cos(1.5 * np.pi * x2) ** 2 + (2.0 * x2 - 1.0) * np.sin(np.pi * x1))


def _box_quarter(points):
    x1 = points[:, 0]
    x2 = points[:, 1]
    return ((x1 < 0.5) & (x2 < 0.5)).astype(float)


@dataclass(frozen=True)
class Preset:
    name: str
    dimension: int
    epsilon: float
    tau: float
    final_time: float
    fields: Callable[[float], tuple]  # epsilon -> (phi, alpha, beta)
    default_rho0: str
    equilibrium_z: float | None = None
    long_time_phases: tuple[tuple[float, float], ...] | None = None
    default_cells: int = 100          # 1D runs
    default_resolution: int = 22      # 2D lattice runs
    convergence_cells: tuple[int, ...] = (100, 200, 400, 800)
    reference_cells: int = 6400
    epsilons: tuple[float, ...] = (1.0, 0.2, 0.1, 0.02, 0.01)


def _fields_conv_1d(epsilon: float):
    return _phi_1d, _ones, _half


def _fields_eq_1d(epsilon: float):
    alpha, beta = equilibrium_exchange(_phi_1d, 0.5, epsilon)
    return _phi_1d, alpha, beta


def _fields_eq_2d(epsilon: float):
    alpha, beta = equilibrium_exchange(_phi_2d, 0.5, epsilon)
    return _phi_2d, alpha, beta


def _fields_noneq_2d(epsilon: float):
    return _phi_2d, _ones, _beta_noneq


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            name="conv-1d", dimension=1, epsilon=1.0, tau=1e-2, final_time=2.0,
            fields=_fields_conv_1d, default_rho0="step",
        ),
        Preset(
            name="eq-1d", dimension=1, epsilon=0.1, tau=1e-2, final_time=1.0,
            fields=_fields_eq_1d, default_rho0="equilibrium", equilibrium_z=0.5,
        ),
        # tau = 1: the study spans ~14 decades of decay; unit steps keep the
        # whole [1, 50] window above the double-precision floor while the
        # relaxation stays resolved (rate*tau < 1)
        Preset(
            name="eq-2d", dimension=2, epsilon=0.1, tau=1.0, final_time=50.0,
            fields=_fields_eq_2d, default_rho0="box", equilibrium_z=0.5,
        ),
        Preset(
            name="noneq-2d", dimension=2, epsilon=0.01, tau=0.1, final_time=200.0,
            fields=_fields_noneq_2d, default_rho0="box",
            long_time_phases=((0.1, 200.0), (100.0, 1e4)),
        ),
    )
}


def _ramp(points):
    # smooth stand-in for the step profile; used when the measurement
    # needs temporal smoothness (e.g. the time-step order study)
    return logistic((0.5 - points[:, 0]) / 0.1)


def initial_profile(name: str, preset: Preset):
    """Resolve a named initial profile for a preset."""
    if name == "step":
        if preset.dimension != 1:
            raise ValueError("'step' initial data is one-dimensional")
        return PiecewiseConstant1D(0.5, left=1.0, right=0.0)
    if name == "ramp":
        if preset.dimension != 1:
            raise ValueError("'ramp' initial data is one-dimensional")
        return _ramp
    if name == "box":
        if preset.dimension != 2:
            raise ValueError("'box' initial data is two-dimensional")
        return _box_quarter
    if name == "equilibrium":
        if preset.equilibrium_z is None:
            raise ValueError(
                f"preset '{preset.name}' has no thermal equilibrium to start from"
            )
        return EquilibriumInitialData(preset.equilibrium_z)
    raise ValueError(f"unknown initial profile '{name}'")


def build_spec(
    preset: Preset,
    epsilon: float | None = None,
    rho0: str | None = None,
    tau: float | None = None,
    final_time: float | None = None,
) -> ProblemSpec:
    """Materialize a preset into a problem spec, applying overrides."""
    eps = preset.epsilon if epsilon is None else float(epsilon)
    phi, alpha, beta = preset.fields(eps)
    profile = initial_profile(rho0 or preset.default_rho0, preset)
    return ProblemSpec(
        phi=phi,
        alpha=alpha,
        beta=beta,
        rho0=profile,
        epsilon=eps,
        final_time=preset.final_time if final_time is None else float(final_time),
        time_step=preset.tau if tau is None else float(tau),
    )
