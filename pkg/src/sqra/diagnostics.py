"""Error norms, convergence-order fits, long-time diagnostics and the
CSV-facing run record."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .scheme import DimensionMismatch, State

TIME_MATCH_TOL = 1e-9


class NonNestedMeshes(ValueError):
    """Reference mesh is not a uniform nested refinement of the run mesh."""


class TimeGridMismatch(ValueError):
    """Recorded times of the run are not contained in the reference times."""


class DegenerateSeries(ValueError):
    """Order fit impossible (zero error or too few points)."""


class EmptyWindow(ValueError):
    """No samples inside the requested fit window."""


class NonPositiveDistance(ValueError):
    """Log fit requested on nonpositive distances."""


@dataclass(frozen=True)
class Trajectory:
    """Recorded cell states of a run, one row per recorded time."""

    times: np.ndarray   # (n_records,)
    states: np.ndarray  # (n_records, n_cells)

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise DimensionMismatch("one state row per recorded time required")


class TrajectoryRecorder:
    """Time-march observer storing every accepted state."""

    def __init__(self):
        self._times: list[float] = []
        self._states: list[np.ndarray] = []

    def __call__(self, step: int, state: State, flux, stats) -> None:
        self._times.append(state.time)
        self._states.append(state.rho_cell.copy())

    def trajectory(self) -> Trajectory:
        return Trajectory(times=np.array(self._times), states=np.array(self._states))


class BoundsTracker:
    """Time-march observer tracking density extrema over the computed steps
    (the initial state, which may sit exactly on the bounds, is skipped)."""

    def __init__(self):
        self.min_value = np.inf
        self.max_value = -np.inf

    def __call__(self, step: int, state: State, flux, stats) -> None:
        if step == 0:
            return
        self.min_value = min(self.min_value, float(state.rho_cell.min()))
        self.max_value = max(self.max_value, float(state.rho_cell.max()))


@dataclass
class RunReport:
    """Per-run time series and metadata, as written to the output CSVs.

    ``error_series`` is an optional (times, values) pair attached by
    experiments that measure a distance along the run (e.g. to a steady
    state); its time grid may be the subset of the recorded times the
    measurement covers.
    """

    times: np.ndarray
    f_bulk: np.ndarray
    f_tot: np.ndarray
    d_primal: np.ndarray
    d_dual: np.ndarray
    inequality_residual: np.ndarray
    newton_iters: np.ndarray
    jump_accum: np.ndarray
    error_series: tuple[np.ndarray, np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.times.shape[0]
        for name in ("f_bulk", "f_tot", "d_primal", "d_dual",
                     "inequality_residual", "newton_iters", "jump_accum"):
            if getattr(self, name).shape[0] != n:
                raise DimensionMismatch(f"series '{name}' length differs from times")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("recorded times must be strictly increasing")
        if self.error_series is not None:
            t, v = self.error_series
            if t.shape != v.shape:
                raise DimensionMismatch("error series times and values differ in length")

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1


def _require_uniform_1d(mesh: Mesh, label: str) -> None:
    if mesh.dimension != 1:
        raise NonNestedMeshes(f"{label} mesh must be one-dimensional")
    h = mesh.cell_measures
    if not np.allclose(h, h[0], rtol=1e-12, atol=0.0):
        raise NonNestedMeshes(f"{label} mesh is not uniform")


def project_nested_1d(fine_values: np.ndarray, fine_mesh: Mesh, coarse_mesh: Mesh) -> np.ndarray:
    """Exact cell averaging of fine-grid values onto a coarser nested grid.

    Conservative projection: each coarse value is the measure-weighted mean
    of the fine cells it contains.  Both meshes must be uniform 1D grids of
    the same interval with an integer refinement factor.
    """
    _require_uniform_1d(fine_mesh, "fine")
    _require_uniform_1d(coarse_mesh, "coarse")
    if fine_mesh.n_cells % coarse_mesh.n_cells != 0:
        raise NonNestedMeshes(
            f"{fine_mesh.n_cells} fine cells are not a multiple of "
            f"{coarse_mesh.n_cells} coarse cells"
        )
    for picker in (np.min, np.max):
        lo_f = picker(fine_mesh.face_points[:, 0])
        lo_c = picker(coarse_mesh.face_points[:, 0])
        if abs(lo_f - lo_c) > 1e-12 * max(1.0, abs(lo_c)):
            raise NonNestedMeshes("meshes cover different intervals")
    factor = fine_mesh.n_cells // coarse_mesh.n_cells
    fine_values = np.asarray(fine_values, dtype=float)
    return fine_values.reshape(*fine_values.shape[:-1], coarse_mesh.n_cells, factor).mean(axis=-1)


def _match_times(run_times: np.ndarray, ref_times: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(ref_times, run_times)
    idx = np.clip(idx, 0, ref_times.size - 1)
    left = np.clip(idx - 1, 0, ref_times.size - 1)
    use_left = np.abs(ref_times[left] - run_times) < np.abs(ref_times[idx] - run_times)
    idx = np.where(use_left, left, idx)
    tol = TIME_MATCH_TOL * np.maximum(1.0, np.abs(run_times))
    bad = np.flatnonzero(np.abs(ref_times[idx] - run_times) > tol)
    if bad.size:
        raise TimeGridMismatch(
            f"time {run_times[bad[0]]:.12g} of the run is absent from the reference grid"
        )
    return idx


def error_linf_l1(
    run: Trajectory, reference: Trajectory, coarse_mesh: Mesh, fine_mesh: Mesh
) -> float:
    """Relative max-in-time L1 error of a run against a finer reference.

    The reference is averaged exactly onto the run's cells before
    comparing; the maximum runs over the recorded times of the run (which
    must all exist in the reference's time grid) and is normalized by the
    largest projected reference L1 norm over the same times.
    """
    if run.states.shape[1] != coarse_mesh.n_cells:
        raise DimensionMismatch("run trajectory does not match the coarse mesh")
    if reference.states.shape[1] != fine_mesh.n_cells:
        raise DimensionMismatch("reference trajectory does not match the fine mesh")
    idx = _match_times(run.times, reference.times)
    projected = project_nested_1d(reference.states[idx], fine_mesh, coarse_mesh)
    weights = coarse_mesh.cell_measures
    distances = (np.abs(projected - run.states) * weights).sum(axis=1)
    norms = (np.abs(projected) * weights).sum(axis=1)
    return float(distances.max() / norms.max())


def observed_order(errors, mesh_sizes) -> float:
    """Least-squares slope of log(error) against log(size)."""
    errors = np.asarray(errors, dtype=float)
    sizes = np.asarray(mesh_sizes, dtype=float)
    if errors.size < 2 or errors.size != sizes.size:
        raise DegenerateSeries("order fit needs at least two matching error/size pairs")
    if np.any(errors <= 0.0) or np.any(sizes <= 0.0):
        raise DegenerateSeries("order fit needs strictly positive errors and sizes")
    slope, _ = np.polyfit(np.log(sizes), np.log(errors), 1)
    return float(slope)


def steady_state_distance(state, steady, mesh: Mesh) -> float:
    """Measure-weighted L2 distance between a state and a steady profile."""
    rho = state.rho_cell if isinstance(state, State) else np.asarray(state, dtype=float)
    steady = np.asarray(steady, dtype=float)
    if rho.shape != (mesh.n_cells,) or steady.shape != (mesh.n_cells,):
        raise DimensionMismatch("state and steady profile must match the mesh")
    return float(np.sqrt((mesh.cell_measures * (rho - steady) ** 2).sum()))


def decay_rate_fit(times, distances, window: tuple[float, float]):
    """Least-squares exponential rate of a distance series.

    Fits log(distance) linearly in time over the window and returns the
    slope together with the coefficient of determination.  A constant
    series fits perfectly with rate zero.
    """
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if mask.sum() < 2:
        raise EmptyWindow(f"fewer than two samples in window [{lo}, {hi}]")
    if np.any(distances[mask] <= 0.0):
        raise NonPositiveDistance("distances must be positive inside the fit window")
    t = times[mask]
    y = np.log(distances[mask])
    coeffs, residuals, *_ = np.polyfit(t, y, 1, full=True)
    rate = float(coeffs[0])
    ss_res = float(residuals[0]) if residuals.size else 0.0
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_res <= 1e-30 else 1.0 - ss_res / ss_tot
    return rate, r_squared


# ---------------------------------------------------------------------------
# CSV output

def _format(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header: str, rows, comments=()) -> None:
    """Write a CSV atomically: comment lines, one header line, data rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {c}" for c in comments]
    lines.append(header)
    for row in rows:
        lines.append(",".join(_format(v) for v in row))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def write_energy_csv(path, report: RunReport, comments=()) -> None:
    rows = zip(report.times, report.f_tot, report.f_bulk,
               report.d_primal, report.d_dual, report.inequality_residual)
    write_csv(path, "time,NRG_tot,NRG_int,D_primal,D_dual,ineq_residual", rows, comments)


def write_newton_csv(path, report: RunReport, comments=()) -> None:
    rows = zip(report.times[1:], report.newton_iters[1:])
    write_csv(path, "time,iterations", rows, comments)


def write_error_csv(path, cells, errors, comments=()) -> None:
    write_csv(path, "NbCells,errLinfL1", zip(cells, errors), comments)


def write_longtime_csv(path, times, distances, comments=()) -> None:
    write_csv(path, "time,errL2", zip(times, distances), comments)
