import logging

import numpy as np
import pytest

from lakit.adapt import DissipationMap, adapt_loop, dissipation_map, mark_cells
from lakit.criteria import von_mises
from lakit.errors import FormulationError, MeshError, SolverError
from lakit.fem import DirichletBC
from lakit.formulations import (
    build_homogenization_kin,
    build_kinematic_ub,
    build_mixed,
    build_static_lb,
    solve_program,
)


def _dmap(shares) -> DissipationMap:
    shares = np.asarray(shares, dtype=float)
    return DissipationMap(cells=shares, facets=np.zeros(0), shares=shares, total=float(shares.sum()))


@pytest.mark.parametrize(
    ("eta", "expected"),
    [(0.5, {1}), (0.6, {1, 2}), (1.0, {0, 1, 2})],
)
def test_mark_cells_takes_largest_shares_first(eta, expected):
    assert mark_cells(_dmap([1.0, 3.0, 2.0, 0.0]), eta).marked == frozenset(expected)


def test_mark_cells_breaks_ties_by_index():
    assert mark_cells(_dmap([1.0, 1.0, 1.0, 1.0]), 0.5).marked == frozenset({0, 1})


def test_mark_cells_rejects_ratio_outside_unit_interval():
    with pytest.raises(MeshError, match="0 < eta <= 1"):
        mark_cells(_dmap([1.0]), 0.0)
    with pytest.raises(MeshError, match="0 < eta <= 1"):
        mark_cells(_dmap([1.0]), 1.5)


def test_zero_dissipation_marks_nothing(caplog):
    with caplog.at_level(logging.WARNING, logger="lakit.adapt"):
        mark = mark_cells(_dmap([0.0, 0.0]))
    assert not mark.marked
    assert "total dissipation is zero" in caplog.text


class TestDissipationMap:
    """The map splits the optimal resisting power over the mesh."""

    def test_kinematic_total_equals_objective(self, unit_square, soft_clay, tension, rollers):
        program = build_kinematic_ub(unit_square, 2, soft_clay, tension, rollers)
        solution = solve_program(program)
        dmap = dissipation_map(solution, program)
        assert dmap.total == pytest.approx(solution.objective, rel=1e-5)
        assert dmap.shares.sum() == pytest.approx(dmap.total)
        assert np.all(dmap.cells >= 0.0)

    def test_discontinuous_facets_fold_into_cells(self, unit_square, soft_clay, tension, rollers):
        program = build_kinematic_ub(
            unit_square, 1, soft_clay, tension, rollers, discontinuous=True
        )
        dmap = dissipation_map(solve_program(program), program)
        assert dmap.facets.shape == (unit_square.num_facets,)
        assert dmap.shares.sum() == pytest.approx(dmap.cells.sum() + dmap.facets.sum())
        assert dmap.total == pytest.approx(2.0, rel=1e-5)

    def test_mixed_uses_stress_work(self, unit_square, soft_clay, tension, rollers):
        program = build_mixed(unit_square, 1, 0, soft_clay, tension, rollers)
        solution = solve_program(program)
        dmap = dissipation_map(solution, program)
        assert dmap.cells.shape == (unit_square.num_cells,)
        assert dmap.total == pytest.approx(solution.load_factor, rel=1e-4)

    def test_static_map_is_nonnegative(self, unit_square, soft_clay, tension, rollers):
        program = build_static_lb(unit_square, soft_clay, tension, rollers)
        dmap = dissipation_map(solve_program(program), program)
        assert dmap.shares.shape == (unit_square.num_cells,)
        assert np.all(dmap.shares >= 0.0)

    def test_homogenization_map(self, unit_square):
        program = build_homogenization_kin(unit_square, von_mises(1.0), (0.0, 0.0, 1.0))
        solution = solve_program(program)
        assert dissipation_map(solution, program).total == pytest.approx(1.0, rel=1e-5)

    def test_requires_optimal_solution(self, unit_square, soft_clay, tension):
        clamped = [DirichletBC(tag, (0, 1), (0.0, 0.0)) for tag in ("left", "right", "bottom", "top")]
        program = build_kinematic_ub(unit_square, 1, soft_clay, tension, clamped)
        with pytest.raises(SolverError, match="needs an optimal solution, got PrimalInfeasible"):
            dissipation_map(solve_program(program), program)


class TestAdaptLoop:
    """Solve, map, mark and refine until the budget or a stop condition."""

    def test_uniform_refinement_runs_every_step(self, unit_square, soft_clay, tension, rollers):
        steps = adapt_loop(
            lambda mesh: build_kinematic_ub(mesh, 1, soft_clay, tension, rollers),
            unit_square,
            2,
            mode="uniform",
        )
        assert [s.step for s in steps] == [0, 1]
        assert steps[1].mesh.num_cells == 4 * unit_square.num_cells
        assert steps[0].refined is steps[1].mesh
        assert steps[-1].refined is None
        assert all(s.load_factor == pytest.approx(2.0, rel=1e-6) for s in steps)
        assert steps[1].variables == steps[1].program.num_variables

    def test_adaptive_stops_when_load_factor_settles(self, unit_square, soft_clay, tension, rollers):
        steps = adapt_loop(
            lambda mesh: build_kinematic_ub(mesh, 1, soft_clay, tension, rollers),
            unit_square,
            4,
            eta=0.5,
        )
        # the patch is exact on every mesh, so the second step already settles
        assert len(steps) == 2
        assert steps[1].mesh.num_cells > unit_square.num_cells

    def test_step_budget_must_be_positive(self, unit_square):
        with pytest.raises(MeshError, match="steps >= 1"):
            adapt_loop(lambda mesh: None, unit_square, 0)

    def test_failures_carry_step_index(self, unit_square, soft_clay, tension):
        with pytest.raises(FormulationError, match="^refinement step 0: kinematic velocity degree"):
            adapt_loop(
                lambda mesh: build_kinematic_ub(mesh, 3, soft_clay, tension),
                unit_square,
                2,
            )
