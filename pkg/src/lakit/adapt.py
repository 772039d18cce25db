"""Dissipation maps, cell marking and the refinement loop."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .criteria import pairing, support_value
from .errors import LakitError, MeshError, SolverError
from .fem import build_space, cell_operator, centroid_rule, vertex_rule
from .formulations import Solution, instance_values, solve_program
from .ipm import SolverSettings
from .mesh import Mesh, RefinementMark, refine_marked, refine_uniform
from .program import ConicProgram

logger = logging.getLogger(__name__)

RefinementMode = Literal["uniform", "adaptive"]

_STALL_CHANGE = 1e-4


@dataclass(frozen=True, eq=False)
class DissipationMap:
    """Local contributions to the maximum resisting power.

    ``shares`` folds every facet contribution into the cells: interior facets
    are split evenly between their two cells, boundary facets go to their
    only cell.
    """

    cells: np.ndarray
    facets: np.ndarray
    shares: np.ndarray
    total: float


def _fold(mesh: Mesh, cells: np.ndarray, facets: np.ndarray) -> np.ndarray:
    shares = cells.copy()
    owner, neighbour = mesh.facet_cells[:, 0], mesh.facet_cells[:, 1]
    interior = neighbour >= 0
    np.add.at(shares, owner[~interior], facets[~interior])
    np.add.at(shares, owner[interior], 0.5 * facets[interior])
    np.add.at(shares, neighbour[interior], 0.5 * facets[interior])
    return shares


def _kinematic_contributions(
    program: ConicProgram, solution: Solution, mesh: Mesh
) -> tuple[np.ndarray, np.ndarray]:
    cells = np.zeros(mesh.num_cells)
    facets = np.zeros(mesh.num_facets)
    for term in program.functions.values():
        meta = term.group.meta
        target = cells if meta.get("entity") == "cell" else facets
        np.add.at(target, meta["ids"], instance_values(program, term, solution.primal))
    return cells, facets


def _stress_work(program: ConicProgram, solution: Solution, mesh: Mesh) -> np.ndarray:
    """Cell integrals of sigma : grad_s u for the mixed velocity."""
    u_space = program.metadata["fields"]["u"].space
    sigma_space = program.block("sigma").space
    rule = centroid_rule() if sigma_space.degree == 0 else vertex_rule()
    strain = cell_operator(u_space, rule, "strain") @ solution.fields["u"]
    stress = cell_operator(sigma_space, rule, "value") @ solution.fields["sigma"]
    q = len(rule.weights)
    products = (strain * stress).reshape(mesh.num_cells, q, 3) @ pairing(
        program.metadata["criteria"][0]
    )
    return mesh.cell_areas * (products @ rule.weights)


def _pseudo_dissipation(program: ConicProgram, solution: Solution, mesh: Mesh) -> np.ndarray:
    """Dissipation of the reconstructed P1 velocity; the stress work where the support is infinite."""
    space = build_space(mesh, "LagrangeContinuous", 1, 2)
    strain = (
        cell_operator(space, centroid_rule(), "strain")
        @ solution.fields["pseudo_velocity"].reshape(-1)
    ).reshape(mesh.num_cells, 3)
    stress = solution.fields["sigma"].reshape(mesh.num_cells, 3, 3).mean(axis=1)
    criteria = program.metadata["criteria"]
    contributions = np.empty(mesh.num_cells)
    for cell, criterion in enumerate(criteria):
        value = support_value(criterion, strain[cell])
        if not np.isfinite(value):
            value = float(stress[cell] * pairing(criterion) @ strain[cell])
        contributions[cell] = mesh.cell_areas[cell] * value
    return contributions


def dissipation_map(solution: Solution, program: ConicProgram) -> DissipationMap:
    """Split the maximum resisting power of an optimal solution into cell and facet parts.

    Raises:
        SolverError: If the solution is not optimal.
    """
    if not solution.is_optimal:
        raise SolverError(
            f"dissipation map needs an optimal solution, got {solution.status.value}"
        )
    mesh: Mesh = program.metadata["mesh"]
    formulation = program.metadata.get("formulation")
    facets = np.zeros(mesh.num_facets)
    if formulation == "static":
        cells = _pseudo_dissipation(program, solution, mesh)
    elif formulation == "mixed":
        cells = _stress_work(program, solution, mesh)
    else:
        cells, facets = _kinematic_contributions(program, solution, mesh)
    # solver round-off can leave tiny negative contributions
    cells = np.maximum(cells, 0.0)
    facets = np.maximum(facets, 0.0)
    shares = _fold(mesh, cells, facets)
    return DissipationMap(
        cells=cells, facets=facets, shares=shares, total=float(cells.sum() + facets.sum())
    )


def mark_cells(dmap: DissipationMap, eta: float = 0.5) -> RefinementMark:
    """Mark the fewest cells whose shares reach ``eta`` of the total.

    Cells are taken in descending share order, ties by ascending index.

    Raises:
        MeshError: If ``eta`` is outside (0, 1].
    """
    if not 0 < eta <= 1:
        raise MeshError(f"marking ratio must satisfy 0 < eta <= 1, got {eta}")
    shares = np.asarray(dmap.shares, dtype=float)
    total = float(shares.sum())
    if total <= 0:
        logger.warning("total dissipation is zero; no cells marked")
        return RefinementMark()
    order = np.lexsort((np.arange(len(shares)), -shares))
    cumulative = np.cumsum(shares[order])
    count = int(np.argmax(cumulative >= eta * total * (1.0 - 1e-12))) + 1
    return RefinementMark.of(order[:count])


@dataclass(frozen=True, eq=False)
class AdaptStep:
    """One solve of the refinement loop and the mesh it produced."""

    step: int
    mesh: Mesh
    program: ConicProgram
    solution: Solution
    dissipation: DissipationMap | None
    variables: int
    wall_time: float
    refined: Mesh | None

    @property
    def load_factor(self) -> float:
        return self.solution.load_factor


def adapt_loop(
    build: Callable[[Mesh], ConicProgram],
    mesh0: Mesh,
    steps: int,
    eta: float = 0.5,
    *,
    mode: RefinementMode = "adaptive",
    settings: SolverSettings | None = None,
) -> list[AdaptStep]:
    """Iterate solve, map, mark and refine.

    The loop stops early with the results so far when a solve is not optimal,
    when no cell is marked or when the load factor changes by less than
    1e-4 relative to the previous step.

    Raises:
        MeshError: If ``steps`` < 1.
        LakitError: Any failure inside a step, with the step index prepended.
    """
    if steps < 1:
        raise MeshError(f"refinement loop needs steps >= 1, got {steps}")
    results: list[AdaptStep] = []
    mesh = mesh0
    previous: float | None = None
    for step in range(steps):
        started = time.perf_counter()
        try:
            program = build(mesh)
            solution = solve_program(program, settings)
            dmap = dissipation_map(solution, program) if solution.is_optimal else None
            last = step == steps - 1
            if dmap is None or last:
                refined = None
            elif mode == "uniform":
                refined = refine_uniform(mesh)
            else:
                marks = mark_cells(dmap, eta)
                refined = refine_marked(mesh, marks) if marks.marked else None
        except LakitError as e:
            raise type(e)(f"refinement step {step}: {e}") from e
        results.append(
            AdaptStep(
                step=step,
                mesh=mesh,
                program=program,
                solution=solution,
                dissipation=dmap,
                variables=program.num_variables,
                wall_time=time.perf_counter() - started,
                refined=refined,
            )
        )
        logger.info(
            "step %d: %d cells, load factor %.10g (%s)",
            step,
            mesh.num_cells,
            solution.load_factor,
            solution.status.value,
        )
        if last:
            break
        if refined is None:
            if dmap is None:
                logger.warning("step %d did not reach an optimal solution; stopping", step)
            else:
                logger.info("step %d marked no cells; stopping", step)
            break
        lam = solution.load_factor
        if (
            mode == "adaptive"
            and previous is not None
            and abs(lam - previous) < _STALL_CHANGE * max(abs(previous), 1e-300)
        ):
            logger.info("load factor settled at step %d; stopping", step)
            break
        previous = lam
        mesh = refined
    return results
