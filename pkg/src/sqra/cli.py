"""Configuration-driven command line for the experiment suite.

Configs are TOML files (flat keys plus nested sections); every value can
be overridden by a command-line flag, and the resolved configuration is
hashed into each output CSV so a run can be reproduced from its files.
Exit codes: 0 success, 1 numerical or validation failure, 2 usage or I/O
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .diagnostics import (
    TrajectoryRecorder,
    decay_rate_fit,
    error_linf_l1,
    observed_order,
    steady_state_distance,
    write_csv,
    write_energy_csv,
    write_error_csv,
    write_longtime_csv,
    write_newton_csv,
)
from .expressions import ExpressionError, compile_field
from .mesh import (
    Mesh,
    NonAdmissible,
    build_from_triangulation,
    build_uniform_1d,
    read_mesh_file,
    validate_admissibility,
)
from .meshgen import unit_square_mesh
from .physics import BoundaryDataError, ProblemSpec, discretize, equilibrium_density
from .presets import PRESETS, Preset, build_spec
from .solver import (
    LinearSolveFailure,
    NewtonConfig,
    NonConvergence,
    Phase,
    time_march,
    uniform_schedule,
)

OUT_DIR_ENV = "SQRA_OUT_DIR"


class UsageError(Exception):
    """Bad configuration or command line; maps to exit code 2."""


@dataclass
class ExperimentConfig:
    """Fully resolved settings of one invocation."""

    experiment: str
    out_dir: Path
    preset: Preset | None
    spec: ProblemSpec
    dimension: int
    cells: int
    resolution: int
    mesh_file: str | None
    phases: tuple[tuple[float, float], ...]
    newton: NewtonConfig
    snapshot_times: tuple[float, ...]
    convergence_cells: tuple[int, ...]
    reference_cells: int
    epsilons: tuple[float, ...]
    fit_window: tuple[float, float] | None
    equilibrium_z: float | None
    config_hash: str = ""
    identity: dict = field(default_factory=dict)


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc


def _inline_spec(problem: dict, epsilon, tau, final_time) -> tuple[ProblemSpec, int]:
    try:
        dimension = int(problem["dimension"])
        phi = compile_field(str(problem["phi"]), dimension)
        alpha = compile_field(str(problem["alpha"]), dimension)
        beta = compile_field(str(problem["beta"]), dimension)
        rho0 = compile_field(str(problem["rho0"]), dimension)
    except KeyError as exc:
        raise UsageError(f"[problem] section is missing key {exc}") from exc
    except ExpressionError as exc:
        raise UsageError(str(exc)) from exc
    if dimension not in (1, 2):
        raise UsageError(f"[problem] dimension must be 1 or 2, got {dimension}")
    spec = ProblemSpec(
        phi=phi, alpha=alpha, beta=beta, rho0=rho0,
        epsilon=float(problem.get("epsilon", 1.0) if epsilon is None else epsilon),
        time_step=float(problem.get("tau", 0.01) if tau is None else tau),
        final_time=float(problem.get("final_time", 1.0) if final_time is None else final_time),
    )
    return spec, dimension


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, preset, config file and flags (flags win)."""
    raw = _load_config_file(args.config) if args.config else {}
    if "experiment" in raw and raw["experiment"] != args.command:
        raise UsageError(
            f"config requests experiment '{raw['experiment']}' "
            f"but the subcommand is '{args.command}'"
        )

    preset_name = args.preset or raw.get("preset")
    preset = None
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise UsageError(
                f"unknown preset '{preset_name}' (available: {', '.join(sorted(PRESETS))})"
            )
        preset = PRESETS[preset_name]

    epsilon = args.epsilon if args.epsilon is not None else raw.get("epsilon")
    tau = args.tau if args.tau is not None else raw.get("tau")
    final_time = args.final_time if args.final_time is not None else raw.get("final_time")
    rho0_name = args.rho0 if args.rho0 is not None else raw.get("rho0")

    problem = raw.get("problem")
    if preset is None and problem is None:
        raise UsageError("either a preset or an inline [problem] section is required")

    if preset is not None:
        try:
            spec = build_spec(preset, epsilon=epsilon, rho0=rho0_name,
                              tau=tau, final_time=final_time)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        dimension = preset.dimension
    else:
        spec, dimension = _inline_spec(problem, epsilon, tau, final_time)

    mesh_section = raw.get("mesh", {})
    mesh_file = args.mesh if args.mesh is not None else mesh_section.get("path")
    cells = int(args.cells if args.cells is not None else mesh_section.get(
        "cells", preset.default_cells if preset else 100))
    resolution = int(args.resolution if args.resolution is not None else mesh_section.get(
        "resolution", preset.default_resolution if preset else 22))

    time_section = raw.get("time", {})
    if "phases" in time_section:
        phases = tuple((float(t), float(end)) for t, end in time_section["phases"])
    elif preset is not None and preset.long_time_phases is not None \
            and tau is None and final_time is None:
        phases = preset.long_time_phases
    else:
        phases = ((spec.time_step, spec.final_time),)

    newton_section = raw.get("newton", {})
    try:
        newton = NewtonConfig(
            rel_tol=float(newton_section.get("rel_tol", 1e-12)),
            max_iters=int(newton_section.get("max_iters", 50)),
            interior_clip=float(newton_section.get("interior_clip", 1e-14)),
            step_halving_enabled=bool(newton_section.get("step_halving", False)),
        )
    except ValueError as exc:
        raise UsageError(f"invalid [newton] settings: {exc}") from exc

    conv_section = raw.get("convergence", {})
    convergence_cells = tuple(
        int(c) for c in conv_section.get(
            "cells", preset.convergence_cells if preset else (100, 200, 400, 800))
    )
    reference_cells = int(conv_section.get(
        "reference_cells", preset.reference_cells if preset else 6400))
    if args.epsilon is not None:
        epsilons = (float(args.epsilon),)
    else:
        epsilons = tuple(float(e) for e in conv_section.get(
            "epsilons", preset.epsilons if preset else (spec.epsilon,)))

    run_section = raw.get("run", {})
    snapshot_times = tuple(float(t) for t in run_section.get("snapshot_times", ()))

    steady_section = raw.get("steady-state", {})
    window = steady_section.get("fit_window")
    fit_window = (float(window[0]), float(window[1])) if window else None

    if args.out is not None:
        out_dir = Path(args.out)
    elif os.environ.get(OUT_DIR_ENV):
        out_dir = Path(os.environ[OUT_DIR_ENV])
    else:
        out_dir = Path(raw.get("out", "out"))

    identity = {
        "experiment": args.command,
        "preset": preset_name,
        "problem": {k: str(v) for k, v in problem.items()} if problem else None,
        "epsilon": spec.epsilon,
        "rho0": rho0_name,
        "phases": [list(p) for p in phases],
        "mesh": {"file": mesh_file, "cells": cells, "resolution": resolution},
        "newton": [newton.rel_tol, newton.max_iters,
                   newton.interior_clip, newton.step_halving_enabled],
        "convergence": {
            "cells": list(convergence_cells),
            "reference_cells": reference_cells,
            "epsilons": list(epsilons),
        },
        "snapshot_times": list(snapshot_times),
        "fit_window": list(fit_window) if fit_window else None,
    }
    digest = hashlib.sha256(
        json.dumps(identity, sort_keys=True).encode()
    ).hexdigest()[:12]

    return ExperimentConfig(
        experiment=args.command,
        out_dir=out_dir,
        preset=preset,
        spec=spec,
        dimension=dimension,
        cells=cells,
        resolution=resolution,
        mesh_file=mesh_file,
        phases=phases,
        newton=newton,
        snapshot_times=snapshot_times,
        convergence_cells=convergence_cells,
        reference_cells=reference_cells,
        epsilons=epsilons,
        fit_window=fit_window,
        equilibrium_z=preset.equilibrium_z if preset else None,
        config_hash=digest,
        identity=identity,
    )


def _build_mesh(cfg: ExperimentConfig) -> Mesh:
    if cfg.mesh_file is not None:
        try:
            nodes, tris, boundary = read_mesh_file(cfg.mesh_file)
        except FileNotFoundError as exc:
            raise UsageError(f"mesh file not found: {cfg.mesh_file}") from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return build_from_triangulation(nodes, tris, boundary)
    if cfg.dimension == 1:
        return build_uniform_1d(cfg.cells)
    return unit_square_mesh(cfg.resolution)


class _SnapshotCollector:
    def __init__(self, targets):
        self.targets = sorted(targets)
        self.rows: list[tuple] = []

    def __call__(self, step, state, flux, stats):
        for t in self.targets:
            if abs(state.time - t) <= 1e-9 * max(1.0, abs(t)):
                for idx, value in enumerate(state.rho_cell):
                    self.rows.append((state.time, idx, value))


def cmd_run(cfg: ExperimentConfig) -> int:
    mesh = _build_mesh(cfg)
    data = discretize(cfg.spec, mesh)
    schedule = tuple(Phase(tau=t, t_end=end) for t, end in cfg.phases)
    snapshots = _SnapshotCollector(cfg.snapshot_times)
    state, report = time_march(
        data.rho0_cell, mesh, data, schedule, cfg.newton, observers=(snapshots,)
    )
    report.metadata["config"] = cfg.config_hash
    comments = (f"config={cfg.config_hash}",)
    write_energy_csv(cfg.out_dir / "energy.csv", report, comments)
    write_newton_csv(cfg.out_dir / "newton.csv", report, comments)
    if cfg.snapshot_times:
        write_csv(cfg.out_dir / "snapshots.csv", "time,cell_index,rho",
                  snapshots.rows, comments)
    print(
        f"run: {report.n_steps} steps on {mesh.n_cells} cells, "
        f"final total energy {report.f_tot[-1]:.12g}"
    )
    print(f"wrote {cfg.out_dir / 'energy.csv'} and {cfg.out_dir / 'newton.csv'}")
    return 0


def _eps_tag(eps: float) -> str:
    return f"eps{eps:g}".replace(".", "p")


def cmd_convergence(cfg: ExperimentConfig) -> int:
    if cfg.dimension != 1:
        raise UsageError("the convergence study runs on 1D uniform grids")
    for n in cfg.convergence_cells:
        if cfg.reference_cells % n != 0:
            raise UsageError(
                f"cell count {n} does not nest into the reference "
                f"{cfg.reference_cells}"
            )
    comments = (f"config={cfg.config_hash}",)
    tau, t_end = cfg.phases[-1]
    for eps in cfg.epsilons:
        spec = build_spec(cfg.preset, epsilon=eps, tau=tau, final_time=t_end) \
            if cfg.preset else cfg.spec
        fine_mesh = build_uniform_1d(cfg.reference_cells)
        fine_data = discretize(spec, fine_mesh)
        fine_rec = TrajectoryRecorder()
        time_march(fine_data.rho0_cell, fine_mesh, fine_data,
                   uniform_schedule(tau, t_end), cfg.newton, observers=(fine_rec,))
        reference = fine_rec.trajectory()

        errors = []
        for n in cfg.convergence_cells:
            mesh = build_uniform_1d(n)
            data = discretize(spec, mesh)
            rec = TrajectoryRecorder()
            time_march(data.rho0_cell, mesh, data,
                       uniform_schedule(tau, t_end), cfg.newton, observers=(rec,))
            errors.append(error_linf_l1(rec.trajectory(), reference, mesh, fine_mesh))

        path = cfg.out_dir / f"errors_{_eps_tag(eps)}.csv"
        write_error_csv(path, cfg.convergence_cells, errors, comments)
        sizes = [1.0 / n for n in cfg.convergence_cells]
        order = observed_order(errors, sizes)
        print(f"epsilon={eps:g}: observed spatial order {order:.3f} -> {path}")
    return 0


def cmd_steady_state(cfg: ExperimentConfig) -> int:
    mesh = _build_mesh(cfg)
    data = discretize(cfg.spec, mesh)
    schedule = tuple(Phase(tau=t, t_end=end) for t, end in cfg.phases)
    recorder = TrajectoryRecorder()
    state, report = time_march(
        data.rho0_cell, mesh, data, schedule, cfg.newton, observers=(recorder,)
    )
    if cfg.equilibrium_z is not None:
        steady = equilibrium_density(mesh, data, cfg.equilibrium_z)
    else:
        steady = state.rho_cell

    trajectory = recorder.trajectory()
    phase1_end = cfg.phases[0][1]
    mask = trajectory.times <= phase1_end * (1 + 1e-12)
    times = trajectory.times[mask]
    distances = np.array([
        steady_state_distance(rho, steady, mesh) for rho in trajectory.states[mask]
    ])
    report.error_series = (times, distances)
    comments = (f"config={cfg.config_hash}",)
    write_longtime_csv(cfg.out_dir / "longtime.csv", times, distances, comments)

    window = cfg.fit_window or (min(1.0, 0.5 * phase1_end), phase1_end)
    if distances.max() < 1e-13:
        print("steady-state: trajectory is stationary (distance below 1e-13)")
        return 0
    rate, r_squared = decay_rate_fit(times, distances, window)
    print(
        f"steady-state: decay rate {rate:.6g} (R^2 = {r_squared:.6f}) "
        f"over t in [{window[0]:g}, {window[1]:g}] -> {cfg.out_dir / 'longtime.csv'}"
    )
    return 0


def cmd_validate_mesh(path: str) -> int:
    if not Path(path).exists():
        print(f"error: mesh file not found: {path}", file=sys.stderr)
        return 2
    nodes, tris, boundary = read_mesh_file(path)
    try:
        mesh = build_from_triangulation(nodes, tris, boundary)
    except NonAdmissible as exc:
        print(f"not admissible: {exc} (cells {list(exc.cells)})")
        return 1
    report = validate_admissibility(mesh)
    print(report.summary())
    return 0 if report.ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqra",
        description="Finite-volume experiments for nonlinear convection-diffusion "
                    "with volume filling and Butler-Volmer boundary exchange.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--preset", help=f"problem preset ({', '.join(sorted(PRESETS))})")
        p.add_argument("--out", help="output directory (or set $" + OUT_DIR_ENV + ")")
        p.add_argument("--epsilon", type=float, help="inverse Peclet number")
        p.add_argument("--tau", type=float, help="time step")
        p.add_argument("--final-time", type=float, dest="final_time", help="final time")
        p.add_argument("--cells", type=int, help="1D cell count")
        p.add_argument("--resolution", type=int, help="2D lattice resolution")
        p.add_argument("--mesh", help="triangulation file for 2D runs")
        p.add_argument("--rho0", help="initial profile: step, ramp, box, equilibrium")

    add_common(sub.add_parser("run", help="single run with energy/Newton records"))
    add_common(sub.add_parser("convergence", help="grid refinement error study"))
    add_common(sub.add_parser("steady-state", help="long-time distance to the steady state"))

    validate = sub.add_parser("validate-mesh", help="check a mesh file for admissibility")
    validate.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate-mesh":
            return cmd_validate_mesh(args.path)
        cfg = resolve_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "convergence":
            return cmd_convergence(cfg)
        return cmd_steady_state(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergence, LinearSolveFailure, BoundaryDataError, NonAdmissible) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
