import argparse
import logging
import math
import os
import sys
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import AdaptStep, adapt_loop, dissipation_map
from .config import ProblemConfig
from .errors import ConfigError, ExportError, LakitError
from .export import (
    CONVERGENCE_COLUMNS,
    SWEEP_COLUMNS,
    export_vtk,
    nodal_values,
    write_cbf,
    write_manifest,
    write_summary,
    write_table,
)
from .fem import DirichletBC
from .formulations import (
    LoadingSpec,
    Material,
    Solution,
    assign_inclusions,
    build_homogenization_kin,
    build_kinematic_ub,
    build_mixed,
    build_static_lb,
    build_thick_plate_kin,
    solve_program,
)
from .ipm import SolveStatus, to_standard_form
from .mesh import Mesh, generate_rectangle, load_mesh
from .parser import parse_config
from .program import ConicProgram

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_CODES: dict[SolveStatus, int] = {
    SolveStatus.OPTIMAL: 0,
    SolveStatus.PRIMAL_INFEASIBLE: 3,
    SolveStatus.DUAL_INFEASIBLE: 4,
    SolveStatus.MAX_ITER: 5,
    SolveStatus.NUMERICAL_FAILURE: 6,
}
THREADS_ENV = "LAKIT_THREADS"
_SWEEP_FAILURES = (EXIT_CODES[SolveStatus.MAX_ITER], EXIT_CODES[SolveStatus.NUMERICAL_FAILURE])

Builder = Callable[["Problem", Mesh], ConicProgram]


@dataclass
class Problem:
    """Parsed config plus its initial mesh and the inputs every builder shares."""

    config: ProblemConfig
    mesh: Mesh
    loading: LoadingSpec = field(init=False)
    bcs: tuple[DirichletBC, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.loading = self.config.loading.to_loading()
        self.bcs = tuple(bc.to_bc() for bc in self.config.bcs)

    @classmethod
    def load(cls, config_path: Path) -> "Problem":
        """Parse a config file and create its initial mesh."""
        return cls.from_config(parse_config(config_path))

    @classmethod
    def from_config(cls, config: ProblemConfig) -> "Problem":
        source = config.mesh
        if source.file is not None:
            mesh = load_mesh(source.file)
        else:
            rect = source.rectangle
            mesh = generate_rectangle(
                rect.width,
                rect.height,
                rect.nx,
                rect.ny,
                rect.tags,
                segments=rect.edge_segments(),
            )
        return cls(config=config, mesh=mesh)

    @property
    def output_dir(self) -> Path:
        return self.config.output.directory

    def material(self, mesh: Mesh) -> Material:
        base, inclusions = self.config.criteria_spec()
        return assign_inclusions(mesh, base, inclusions) if inclusions else base

    def build(self, mesh: Mesh, sigma0: Sequence[float] | None = None) -> ConicProgram:
        """Build the configured formulation on ``mesh``."""
        if self.config.formulation == "homog-kin":
            direction = sigma0 if sigma0 is not None else self.config.homogenization.sigma0
            return build_homogenization_kin(
                mesh, self.material(mesh), direction, degree=self.config.degree
            )
        return _BUILDERS[self.config.formulation](self, mesh)


def _build_ub(problem: Problem, mesh: Mesh) -> ConicProgram:
    return build_kinematic_ub(
        mesh, problem.config.degree, problem.material(mesh), problem.loading, problem.bcs
    )


def _build_ub_disc(problem: Problem, mesh: Mesh) -> ConicProgram:
    return build_kinematic_ub(
        mesh,
        problem.config.degree,
        problem.material(mesh),
        problem.loading,
        problem.bcs,
        discontinuous=True,
    )


def _build_lb(problem: Problem, mesh: Mesh) -> ConicProgram:
    return build_static_lb(mesh, problem.material(mesh), problem.loading, problem.bcs)


def _build_mixed(problem: Problem, mesh: Mesh) -> ConicProgram:
    config = problem.config
    return build_mixed(
        mesh,
        config.degree,
        config.sigma_degree,
        problem.material(mesh),
        problem.loading,
        problem.bcs,
    )


def _build_thick_plate(problem: Problem, mesh: Mesh) -> ConicProgram:
    return build_thick_plate_kin(mesh, problem.material(mesh), problem.loading, problem.bcs)


_BUILDERS: dict[str, Builder] = {
    "ub": _build_ub,
    "ub-disc": _build_ub_disc,
    "lb": _build_lb,
    "mixed": _build_mixed,
    "thick-plate": _build_thick_plate,
}


def exit_code(status: SolveStatus) -> int:
    return EXIT_CODES[status]


def _solve_once(problem: Problem) -> list[AdaptStep]:
    started = time.perf_counter()
    program = problem.build(problem.mesh)
    solution = solve_program(program, problem.config.solver)
    dmap = dissipation_map(solution, program) if solution.is_optimal else None
    return [
        AdaptStep(
            step=0,
            mesh=problem.mesh,
            program=program,
            solution=solution,
            dissipation=dmap,
            variables=program.num_variables,
            wall_time=time.perf_counter() - started,
            refined=None,
        )
    ]


def _field_arrays(program: ConicProgram, solution: Solution) -> dict[str, np.ndarray]:
    """Nodal arrays for every plottable field of a solution."""
    arrays = {}
    for name, embedding in program.metadata.get("fields", {}).items():
        arrays[name] = nodal_values(embedding.space, solution.fields[name])
    if "pseudo_velocity" in solution.fields:
        arrays["pseudo_velocity"] = solution.fields["pseudo_velocity"]
    return arrays


def _write_vtk(problem: Problem, step: AdaptStep, program: ConicProgram) -> Path:
    mesh = step.mesh
    cell_data = {}
    if step.dissipation is not None:
        cell_data["dissipation"] = step.dissipation.shares / mesh.cell_areas
    if "sigma" in step.solution.fields:
        space = program.block("sigma").space
        local = step.solution.fields["sigma"][space.dof_map].reshape(mesh.num_cells, -1, 3)
        cell_data["stress"] = local.mean(axis=1)
    point_data = _field_arrays(program, step.solution) if step.solution.is_optimal else {}
    return export_vtk(
        mesh,
        problem.output_dir / f"{problem.config.name}.vtk",
        point_data=point_data,
        cell_data=cell_data,
    )


def _convergence_rows(steps: Sequence[AdaptStep]) -> list[tuple[object, ...]]:
    return [
        (
            s.step,
            s.mesh.num_cells,
            s.variables,
            s.load_factor,
            s.dissipation.total if s.dissipation is not None else math.nan,
            s.wall_time,
        )
        for s in steps
    ]


class _RunLog:
    """Optional ``run.log`` file handler attached for the duration of a run."""

    def __init__(self, directory: Path, enabled: bool) -> None:
        self.handler: logging.Handler | None = None
        if enabled:
            self.handler = logging.FileHandler(directory / "run.log", mode="w")
            self.handler.setFormatter(
                logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
            )
            logging.getLogger("lakit").addHandler(self.handler)

    def close(self) -> Path | None:
        if self.handler is None:
            return None
        logging.getLogger("lakit").removeHandler(self.handler)
        self.handler.close()
        return Path(self.handler.baseFilename)


def _prepare_output(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(f"Cannot create output directory {directory}: {e}") from e


def run(problem: Problem, *, mode: str | None = None, steps: int | None = None) -> int:
    """Solve the configured problem, write the requested artifacts and return an exit code.

    Artifacts written before a failure are listed in a MANIFEST marked
    incomplete.
    """
    config = problem.config
    directory = problem.output_dir
    _prepare_output(directory)
    formats = set(config.output.formats)
    written: list[Path] = []
    complete = False
    run_log = _RunLog(directory, "log" in formats)
    try:
        mode = mode or config.refinement.mode
        if mode == "none":
            results = _solve_once(problem)
        else:
            results = adapt_loop(
                problem.build,
                problem.mesh,
                steps or config.refinement.steps,
                config.refinement.eta,
                mode=mode,
                settings=config.solver,
            )
        final = results[-1]
        program = final.program
        solution = final.solution

        if "vtk" in formats:
            written.append(_write_vtk(problem, final, program))
        if "csv" in formats:
            written.append(
                write_table(
                    directory / "convergence.csv", CONVERGENCE_COLUMNS, _convergence_rows(results)
                )
            )
        if "cbf" in formats:
            sf, _ = to_standard_form(program)
            written.append(write_cbf(sf, directory / f"{config.name}.cbf"))
        summary = {
            "name": config.name,
            "formulation": config.formulation,
            "status": solution.status.value,
            "lambda": solution.load_factor,
            "objective": solution.objective,
            "iterations": solution.iterations,
            "primal_res": solution.primal_res,
            "dual_res": solution.dual_res,
            "gap": solution.gap,
            "cells": final.mesh.num_cells,
            "steps": len(results),
        }
        if final.dissipation is not None:
            summary["total_dissipation"] = final.dissipation.total
        written.append(write_summary(directory / "summary.txt", summary))
        complete = True
        return exit_code(solution.status)
    finally:
        log_path = run_log.close()
        if log_path is not None:
            written.append(log_path)
        write_manifest(directory, written, complete=complete, seed=config.seed)


def sweep_directions(plane: str, count: int) -> list[tuple[float, np.ndarray]]:
    """Return (angle, sigma0) pairs evenly spaced around the sweep plane."""
    directions = []
    for i in range(count):
        angle = 2.0 * math.pi * i / count
        c, s = math.cos(angle), math.sin(angle)
        if plane == "principal":
            sigma0 = np.array([c, s, 0.0])
        else:
            sigma0 = np.array([c, -c, s])
        directions.append((angle, sigma0))
    return directions


def polygon_is_convex(points: np.ndarray, tol: float = 1e-9) -> bool:
    """True when the closed polygon through ``points`` (in order) turns one way only."""
    points = np.asarray(points, dtype=float)
    if len(points) < 3:
        return True
    edges = np.roll(points, -1, axis=0) - points
    following = np.roll(edges, -1, axis=0)
    turns = edges[:, 0] * following[:, 1] - edges[:, 1] * following[:, 0]
    scale = tol * max(float(np.abs(points).max()), 1.0) ** 2
    return bool(np.all(turns >= -scale) or np.all(turns <= scale))


def thread_count() -> int:
    """Worker cap from LAKIT_THREADS, defaulting to the CPU count."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def sweep(problem: Problem, directions: int | None = None) -> int:
    """Trace a section of the homogenized strength domain, one solve per direction."""
    config = problem.config
    if config.formulation != "homog-kin":
        raise ConfigError(f"sweep needs formulation 'homog-kin', got {config.formulation!r}")
    settings = config.homogenization
    count = directions or settings.directions
    directory = problem.output_dir
    _prepare_output(directory)
    written: list[Path] = []
    complete = False
    try:
        plan = sweep_directions(settings.plane, count)

        def solve_direction(sigma0: np.ndarray) -> Solution:
            return solve_program(problem.build(problem.mesh, sigma0), config.solver)

        with ThreadPoolExecutor(max_workers=min(thread_count(), count)) as pool:
            solutions = list(pool.map(solve_direction, [sigma0 for _, sigma0 in plan]))

        rows = []
        points = []
        for index, ((angle, sigma0), solution) in enumerate(zip(plan, solutions)):
            lam = solution.load_factor
            point = (lam * math.cos(angle), lam * math.sin(angle))
            if math.isfinite(lam):
                points.append(point)
            rows.append((index, angle, *sigma0, lam, solution.status.value, *point))
        bounded = len(points) == count
        convex = polygon_is_convex(np.array(points)) if bounded else False
        written.append(write_table(directory / "ghom_section.csv", SWEEP_COLUMNS, rows))
        written.append(
            write_summary(
                directory / "summary.txt",
                {
                    "name": config.name,
                    "formulation": config.formulation,
                    "directions": count,
                    "plane": settings.plane,
                    "bounded": bounded,
                    "convex": convex,
                },
            )
        )
        complete = True
        codes = [exit_code(s.status) for s in solutions]
        failures = [c for c in codes if c in _SWEEP_FAILURES]
        return failures[0] if failures else EXIT_OK
    finally:
        write_manifest(directory, written, complete=complete, seed=config.seed)


def export_program(problem: Problem) -> int:
    """Write the standard form of the configured program without solving it."""
    directory = problem.output_dir
    _prepare_output(directory)
    written: list[Path] = []
    complete = False
    try:
        sf, _ = to_standard_form(problem.build(problem.mesh))
        written.append(write_cbf(sf, directory / f"{problem.config.name}.cbf"))
        complete = True
        return EXIT_OK
    finally:
        write_manifest(directory, written, complete=complete, seed=problem.config.seed)


def _cmd_solve(args: argparse.Namespace) -> int:
    return run(Problem.load(args.config))


def _cmd_adapt(args: argparse.Namespace) -> int:
    return run(Problem.load(args.config), mode="adaptive")


def _cmd_convergence(args: argparse.Namespace) -> int:
    return run(Problem.load(args.config), mode="uniform", steps=args.levels)


def _cmd_sweep(args: argparse.Namespace) -> int:
    return sweep(Problem.load(args.config), args.directions)


def _cmd_export_cbf(args: argparse.Namespace) -> int:
    return export_program(Problem.load(args.config))


_COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "solve": _cmd_solve,
    "adapt": _cmd_adapt,
    "convergence": _cmd_convergence,
    "sweep": _cmd_sweep,
    "export-cbf": _cmd_export_cbf,
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lakit",
        description="lakit: finite-element limit analysis with a conic interior-point solver.",
    )
    parser.add_argument("--verbose", action="store_true", help="Log solver iterations")
    subparsers = parser.add_subparsers(dest="command", required=True)

    solve_parser = subparsers.add_parser("solve", help="Solve a problem once (or per its refinement section)")
    solve_parser.add_argument("config", type=Path, help="Path to problem YAML file")

    adapt_parser = subparsers.add_parser("adapt", help="Run the adaptive refinement loop")
    adapt_parser.add_argument("config", type=Path, help="Path to problem YAML file")

    convergence_parser = subparsers.add_parser(
        "convergence", help="Solve on uniformly refined meshes"
    )
    convergence_parser.add_argument("config", type=Path, help="Path to problem YAML file")
    convergence_parser.add_argument(
        "--levels", type=_positive_int, default=4, help="Number of mesh levels"
    )

    sweep_parser = subparsers.add_parser(
        "sweep", help="Trace a section of the homogenized strength domain"
    )
    sweep_parser.add_argument("config", type=Path, help="Path to problem YAML file")
    sweep_parser.add_argument(
        "--directions", type=_positive_int, default=None, help="Number of load directions"
    )

    cbf_parser = subparsers.add_parser(
        "export-cbf", help="Write the conic program in Conic Benchmark Format"
    )
    cbf_parser.add_argument("config", type=Path, help="Path to problem YAML file")
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        code = _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_CONFIG_ERROR
    except LakitError as e:
        print(f"Error: {e}", file=sys.stderr)
        code = EXIT_ERROR
    sys.exit(code)
