"""Implicit Euler stepping: Newton's method with direct sparse solves.

Each step solves the monotone nonlinear system of the scheme, starting
from the previous state and iterating until the relative sup-norm of the
Newton increment falls below the tolerance.  Iterates are projected into
[clip, 1-clip] after every update; the exact step solution is strictly
interior, so the projection leaves it untouched while keeping the smooth
Jacobian valid along the way.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import RunReport
from .mesh import Mesh, mesh_quality
from .physics import DiscreteData
from .scheme import (
    EnergyLedger,
    State,
    energy_step,
    face_fluxes,
    jacobian,
    residual,
)

LINEAR_RESIDUAL_TOL = 1e-12
MAX_HALVINGS = 10


class NonConvergence(RuntimeError):
    """Newton iteration exhausted max_iters without meeting the tolerance."""


class LinearSolveFailure(RuntimeError):
    """Sparse factorization failed or produced a non-finite solution."""


@dataclass(frozen=True)
class NewtonConfig:
    rel_tol: float = 1e-12
    max_iters: int = 50
    interior_clip: float = 1e-14
    step_halving_enabled: bool = False

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 < self.interior_clip < 1e-6:
            raise ValueError(f"interior_clip must lie in (0, 1e-6), got {self.interior_clip}")


@dataclass
class StepStats:
    newton_iters: int
    final_increment_norm: float  # relative: |delta|_inf / |rho|_inf at acceptance
    linear_solves: int
    wall_time: float


def linear_solve(J: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Direct sparse solve with a residual check and one refinement pass.

    The residual must fall below 1e-12 relative to the right-hand side or
    below the backward-stable floor eps*(|J|*|x| + |rhs|), whichever is
    larger; the relative target alone is unreachable in double precision
    once the right-hand side is small against the matrix scale.
    """
    rhs = np.asarray(rhs, dtype=float)
    J = sp.csc_matrix(J)
    if not np.all(np.isfinite(J.data)) or not np.all(np.isfinite(rhs)):
        raise LinearSolveFailure("non-finite entries in the linear system")
    try:
        lu = spla.splu(J)
    except RuntimeError as exc:  # singular factorization
        raise LinearSolveFailure(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("direct solve produced non-finite values")

    scale = float(np.abs(rhs).max(initial=0.0))
    row_norm = float(np.abs(J).sum(axis=1).max()) if J.shape[0] else 0.0

    def bound(y):
        floor = 64.0 * np.finfo(float).eps * (row_norm * float(np.abs(y).max(initial=0.0)) + scale)
        return max(LINEAR_RESIDUAL_TOL * scale, floor)

    res = float(np.abs(J @ x - rhs).max(initial=0.0))
    if res > bound(x):
        x = x + lu.solve(rhs - J @ x)
        res = float(np.abs(J @ x - rhs).max(initial=0.0))
        if res > bound(x):
            raise LinearSolveFailure(
                f"linear residual {res:.3g} exceeds the solve tolerance "
                f"({bound(x):.3g})"
            )
    return x


def newton_solve(
    rho_old: np.ndarray,
    mesh: Mesh,
    data: DiscreteData,
    tau: float,
    epsilon: float,
    config: NewtonConfig = NewtonConfig(),
) -> tuple[np.ndarray, StepStats]:
    """Solve one implicit step; returns the new cell densities and stats.

    Starts from the previous state (projected just inside (0,1) if it
    touches the bounds) and stops once |delta|_inf / |rho|_inf <= rel_tol.
    With step halving enabled, a non-convergent step is retried as two
    half steps, recursively, down to tau / 2**10.
    """
    rho_old = np.asarray(rho_old, dtype=float)
    try:
        return _newton_single(rho_old, mesh, data, tau, epsilon, config)
    except NonConvergence:
        if not config.step_halving_enabled:
            raise
        return _newton_halved(rho_old, mesh, data, tau, epsilon, config, depth=1)


def _newton_halved(rho_old, mesh, data, tau, epsilon, config, depth):
    if depth > MAX_HALVINGS:
        raise NonConvergence(
            f"Newton failed even after halving the step {MAX_HALVINGS} times"
        )
    half = 0.5 * tau
    stats = []
    rho = rho_old
    for _ in range(2):
        try:
            rho, s = _newton_single(rho, mesh, data, half, epsilon, config)
        except NonConvergence:
            rho, s = _newton_halved(rho, mesh, data, half, epsilon, config, depth + 1)
        stats.append(s)
    merged = StepStats(
        newton_iters=sum(s.newton_iters for s in stats),
        final_increment_norm=stats[-1].final_increment_norm,
        linear_solves=sum(s.linear_solves for s in stats),
        wall_time=sum(s.wall_time for s in stats),
    )
    return rho, merged


def _newton_single(rho_old, mesh, data, tau, epsilon, config):
    t0 = _time.perf_counter()
    clip = config.interior_clip
    rho = np.clip(rho_old, clip, 1.0 - clip)
    solves = 0
    for _ in range(config.max_iters):
        rhs = -residual(rho, rho_old, mesh, data, tau, epsilon)
        mat = jacobian(rho, rho_old, mesh, data, tau, epsilon)
        delta = linear_solve(mat, rhs)
        solves += 1
        rho = np.clip(rho + delta, clip, 1.0 - clip)
        rel = float(np.abs(delta).max() / np.abs(rho).max())
        if rel <= config.rel_tol:
            return rho, StepStats(
                newton_iters=solves,
                final_increment_norm=rel,
                linear_solves=solves,
                wall_time=_time.perf_counter() - t0,
            )
    raise NonConvergence(
        f"no convergence in {config.max_iters} Newton iterations "
        f"(last relative increment {rel:.3g})"
    )


@dataclass(frozen=True)
class Phase:
    """One leg of a time schedule: step with tau until t_end."""

    tau: float
    t_end: float


def uniform_schedule(tau: float, final_time: float) -> tuple[Phase, ...]:
    return (Phase(tau=tau, t_end=final_time),)


def _phase_steps(t_start: float, phase: Phase) -> int:
    span = phase.t_end - t_start
    if span < 0:
        raise ValueError(f"schedule goes backwards at t = {t_start}")
    n = int(round(span / phase.tau))
    if abs(n * phase.tau - span) > 1e-8 * max(phase.tau, span, 1e-30):
        raise ValueError(
            f"phase from {t_start} to {phase.t_end} is not an integer number "
            f"of steps of tau = {phase.tau}"
        )
    return n


def time_march(
    rho0: np.ndarray,
    mesh: Mesh,
    data: DiscreteData,
    schedule: tuple[Phase, ...],
    config: NewtonConfig = NewtonConfig(),
    observers=(),
) -> tuple[State, RunReport]:
    """March the implicit scheme through a schedule of (tau, t_end) phases.

    Every accepted step is fed to the energy ledger and to the observers
    as (step_index, state, flux, stats); the initial state is emitted as
    step 0 with flux and stats set to None.  Failures are re-raised with
    the failing step index attached.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (mesh.n_cells,):
        raise ValueError(f"expected {mesh.n_cells} initial values, got {rho0.shape}")
    if np.any(rho0 < 0.0) or np.any(rho0 > 1.0):
        raise ValueError("initial densities must lie in [0, 1]")
    for phase in schedule:
        if phase.tau <= 0.0:
            raise ValueError(f"phase time step must be positive, got {phase.tau}")

    epsilon = data.epsilon
    state = State(rho_cell=rho0, rho_face=face_fluxes(rho0, mesh, data, epsilon).rho_face,
                  time=0.0)
    ledger = EnergyLedger.start(state, mesh, data, epsilon)
    newton_iters = [0]
    taus = []
    for obs in observers:
        obs(0, state, None, None)

    step = 0
    t_start = 0.0
    for phase in schedule:
        n_steps = _phase_steps(t_start, phase)
        for i in range(n_steps):
            step += 1
            t = t_start + (i + 1) * phase.tau
            try:
                rho_new, stats = newton_solve(
                    state.rho_cell, mesh, data, phase.tau, epsilon, config
                )
            except (NonConvergence, LinearSolveFailure) as exc:
                raise type(exc)(f"time step {step} at t = {t:.12g}: {exc}") from exc
            flux = face_fluxes(rho_new, mesh, data, epsilon)
            state = State(rho_cell=rho_new, rho_face=flux.rho_face, time=t)
            energy_step(ledger, state, flux, mesh, data, phase.tau, epsilon)
            newton_iters.append(stats.newton_iters)
            taus.append(phase.tau)
            for obs in observers:
                obs(step, state, flux, stats)
        t_start = phase.t_end

    quality = mesh_quality(mesh)
    report = RunReport(
        times=np.array(ledger.times),
        f_bulk=np.array(ledger.f_bulk),
        f_tot=np.array(ledger.f_tot),
        d_primal=np.array(ledger.d_primal),
        d_dual=np.array(ledger.d_dual),
        inequality_residual=np.array(ledger.inequality_residual),
        newton_iters=np.array(newton_iters, dtype=np.int64),
        jump_accum=np.array(ledger.jump_accum),
        metadata={
            "n_cells": mesh.n_cells,
            "mesh_size": quality.size,
            "mesh_regularity": quality.regularity,
            "epsilon": epsilon,
            "tau": [phase.tau for phase in schedule],
        },
    )
    return state, report
