"""Finite-volume solver for nonlinear convection-diffusion with
volume-filling mobility and Butler-Volmer boundary exchange, built on the
square-root-approximation (SQRA) flux."""

from .diagnostics import (
    RunReport,
    Trajectory,
    TrajectoryRecorder,
    decay_rate_fit,
    error_linf_l1,
    observed_order,
    steady_state_distance,
)
from .mesh import (
    AdmissibilityReport,
    Mesh,
    MeshQuality,
    NonAdmissible,
    OrthogonalityViolation,
    Tolerances,
    build_from_triangulation,
    build_uniform_1d,
    mesh_quality,
    read_mesh_file,
    validate_admissibility,
    write_mesh_file,
)
from .physics import (
    BoundaryDataError,
    DiscreteData,
    DomainError,
    EquilibriumInitialData,
    PiecewiseConstant1D,
    ProblemSpec,
    discretize,
    entropy,
    entropy_prime,
    equilibrium_density,
    logistic,
    mobility,
)
from .scheme import (
    DimensionMismatch,
    EnergyLedger,
    FluxField,
    SingularityWarning,
    State,
    boundary_density,
    boundary_flux,
    bulk_free_energy,
    dissipation_potentials,
    dual_potential,
    electro_potential,
    energy_step,
    face_fluxes,
    interior_flux,
    jacobian,
    make_state,
    primal_potential,
    residual,
)
from .solver import (
    LinearSolveFailure,
    NewtonConfig,
    NonConvergence,
    Phase,
    StepStats,
    linear_solve,
    newton_solve,
    time_march,
    uniform_schedule,
)

__version__ = "0.1.0"
