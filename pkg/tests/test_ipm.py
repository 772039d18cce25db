import logging
import math

import numpy as np
import pytest
import scipy.sparse as sps
from pydantic import ValidationError

from lakit.cones import ConeProduct, Free, NonNeg, Quad, RQuad
from lakit.errors import SolverError
from lakit.ipm import (
    SolverSettings,
    SolveStatus,
    StandardForm,
    residuals,
    solve,
    to_standard_form,
    verify_certificate,
)
from lakit.program import ProgramBuilder


def _lp(rhs: float = 1.0, cost=(1.0, 2.0)):
    """min cost.x  s.t.  x1 + x2 = rhs,  x >= 0."""
    builder = ProgramBuilder()
    x = builder.add_block("x", ConeProduct.of(NonNeg(2)))
    builder.add_objective(x, cost)
    builder.add_rows("sum", {x: np.array([[1.0, 1.0]])}, [rhs])
    return builder.build()


def _solve(program, settings=None):
    sf, recovery = to_standard_form(program)
    return sf, recovery, solve(sf, settings)


def test_linear_program_optimum_and_duals():
    sf, recovery, result = _solve(_lp())
    assert result.status is SolveStatus.OPTIMAL
    assert sf.c @ result.x == pytest.approx(1.0, abs=1e-7)
    assert recovery.primal(result.x) == pytest.approx([1.0, 0.0], abs=1e-6)
    assert recovery.duals(result.y) == pytest.approx([1.0], abs=1e-6)
    r_p, r_d, gap = residuals(sf, result.x, result.y, result.s)
    assert max(r_p, r_d, gap) < 1e-7
    assert result.iterations == len(result.log) > 0


def test_second_order_cone_program():
    # min t  s.t.  (t, x1, x2) in Q3,  x1 = 3,  x2 = 4
    builder = ProgramBuilder()
    z = builder.add_block("z", ConeProduct.of(Quad(3)))
    builder.add_objective(z, [1.0, 0.0, 0.0])
    builder.add_rows("fix", {z: np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])}, [3.0, 4.0])
    sf, recovery, result = _solve(builder.build())
    assert result.status is SolveStatus.OPTIMAL
    assert recovery.primal(result.x)[0] == pytest.approx(5.0, rel=1e-6)


def test_rotated_cone_program():
    # min x0 + x1  s.t.  2 x0 x1 >= x2^2,  x2 = 1
    builder = ProgramBuilder()
    z = builder.add_block("z", ConeProduct.of(RQuad(3)))
    builder.add_objective(z, [1.0, 1.0, 0.0])
    builder.add_rows("fix", {z: np.array([[0.0, 0.0, 1.0]])}, [1.0])
    _, recovery, result = _solve(builder.build())
    assert result.status is SolveStatus.OPTIMAL
    x = recovery.primal(result.x)
    assert x[0] + x[1] == pytest.approx(math.sqrt(2.0), rel=1e-6)


def test_free_variable_reaches_its_bound():
    # min u  s.t.  u - z = -2,  z >= 0
    builder = ProgramBuilder()
    u = builder.add_block("u", ConeProduct.of(Free(1)))
    z = builder.add_block("z", ConeProduct.of(NonNeg(1)))
    builder.add_objective(u, [1.0])
    builder.add_rows("link", {u: np.eye(1), z: -np.eye(1)}, [-2.0])
    sf, recovery, result = _solve(builder.build())
    assert sf.free_count == 1
    assert result.status is SolveStatus.OPTIMAL
    assert recovery.primal(result.x)[0] == pytest.approx(-2.0, abs=1e-6)


def test_primal_infeasible_with_certificate():
    sf, _, result = _solve(_lp(rhs=-1.0))
    assert result.status is SolveStatus.PRIMAL_INFEASIBLE
    assert verify_certificate(sf, result)


def test_dual_infeasible_with_certificate():
    # min -x1  s.t.  x1 - x2 = 0,  x >= 0 is unbounded below
    builder = ProgramBuilder()
    x = builder.add_block("x", ConeProduct.of(NonNeg(2)))
    builder.add_objective(x, [-1.0, 0.0])
    builder.add_rows("tie", {x: np.array([[1.0, -1.0]])}, [0.0])
    sf, _, result = _solve(builder.build())
    assert result.status is SolveStatus.DUAL_INFEASIBLE
    assert verify_certificate(sf, result)


class TestPresolve:
    def test_empty_row_with_nonzero_rhs_is_infeasible(self):
        """A row without coefficients cannot meet a nonzero right-hand side."""
        builder = ProgramBuilder()
        x = builder.add_block("x", ConeProduct.of(NonNeg(2)))
        builder.add_objective(x, [1.0, 1.0])
        builder.add_rows("empty", {x: np.zeros((1, 2))}, [1.0])
        sf, _, result = _solve(builder.build())
        assert result.status is SolveStatus.PRIMAL_INFEASIBLE
        assert result.iterations == 0
        assert verify_certificate(sf, result)

    def test_unconstrained_free_column_with_cost_is_unbounded(self):
        """A free variable in no row with a nonzero cost is an improving ray."""
        builder = ProgramBuilder()
        u = builder.add_block("u", ConeProduct.of(Free(1)))
        z = builder.add_block("z", ConeProduct.of(NonNeg(1)))
        builder.add_objective(u, [1.0])
        builder.add_rows("fix", {z: np.eye(1)}, [1.0])
        sf, _, result = _solve(builder.build())
        assert result.status is SolveStatus.DUAL_INFEASIBLE
        assert verify_certificate(sf, result)


def test_iteration_budget_reports_max_iter():
    _, _, result = _solve(_lp(), SolverSettings(max_iter=1))
    assert result.status is SolveStatus.MAX_ITER


def test_certificate_rejected_for_optimal_result():
    sf, _, result = _solve(_lp())
    assert not verify_certificate(sf, result)


def test_settings_validation():
    with pytest.raises(ValidationError, match="step_fraction must be < 1"):
        SolverSettings(step_fraction=1.0)
    with pytest.raises(ValidationError):
        SolverSettings(max_iter=0)
    with pytest.raises(ValidationError):
        SolverSettings(tolerance=1e-6)


def test_standard_form_converts_ranged_and_one_sided_rows(caplog):
    builder = ProgramBuilder()
    x = builder.add_block("x", ConeProduct.of(NonNeg(2)))
    builder.add_objective(x, [-1.0, -1.0])
    builder.add_rows(
        "bounds",
        {x: np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])},
        [0.0, -np.inf, -np.inf],
        [2.0, 3.0, np.inf],
    )
    with caplog.at_level(logging.WARNING, logger="lakit.ipm"):
        sf, recovery = to_standard_form(builder.build())
    assert "dropping vacuous row 2" in caplog.text
    assert recovery.rows.tolist() == [0, 1, -1]
    # two kept rows plus the range closure; one upper slack and two range slacks
    assert (sf.m, sf.n) == (3, 5)
    assert sf.validate() == []

    result = solve(sf)
    assert result.status is SolveStatus.OPTIMAL
    assert recovery.primal(result.x) == pytest.approx([2.0, 3.0], abs=1e-6)


def test_free_columns_are_moved_first():
    builder = ProgramBuilder()
    z = builder.add_block("z", ConeProduct.of(NonNeg(1)))
    u = builder.add_block("u", ConeProduct.of(Free(2)))
    builder.add_rows("link", {z: np.ones((1, 1)), u: np.ones((1, 2))}, [1.0])
    sf, recovery = to_standard_form(builder.build())
    assert sf.free_count == 2
    assert recovery.columns.tolist() == [2, 0, 1]


def test_inconsistent_bounds_rejected():
    builder = ProgramBuilder()
    x = builder.add_block("x", ConeProduct.of(NonNeg(1)))
    builder.add_rows("bad", {x: np.eye(1)}, [2.0], [1.0])
    with pytest.raises(SolverError, match="inconsistent"):
        to_standard_form(builder.build())


def test_malformed_standard_form_rejected():
    sf = StandardForm(
        c=np.zeros(2),
        A=sps.csr_matrix((1, 3)),
        b=np.zeros(1),
        cones=ConeProduct.of(NonNeg(2)),
        free_count=0,
    )
    with pytest.raises(SolverError, match="invalid standard form: A has shape"):
        solve(sf)


def _interior(specs, rng):
    """A random point strictly inside a product of NonNeg and Quad cones."""
    parts = []
    for spec in specs:
        z = rng.uniform(0.5, 2.0, size=spec.dim)
        if spec.kind == "Quad":
            z[1:] = rng.normal(size=spec.dim - 1)
            z[0] = np.linalg.norm(z[1:]) + rng.uniform(0.5, 2.0)
        parts.append(z)
    return np.concatenate(parts)


def _random_conic_instance(rng):
    """A strictly feasible primal-dual pair, so an optimum exists."""
    free = int(rng.integers(0, 3))
    specs = [NonNeg(int(rng.integers(1, 5)))]
    specs += [Quad(int(rng.integers(2, 5))) for _ in range(rng.integers(0, 3))]
    cones = ConeProduct.of(*([Free(free)] if free else []), *specs)
    n = cones.total_dim
    low = max(free, 1)
    m = int(rng.integers(low, n)) if n > low else n
    A = rng.normal(size=(m, n))
    x0 = np.concatenate([rng.normal(size=free), _interior(specs, rng)])
    s0 = np.concatenate([np.zeros(free), _interior(specs, rng)])
    c = A.T @ rng.normal(size=m) + s0
    return StandardForm(c=c, A=sps.csr_matrix(A), b=A @ x0, cones=cones, free_count=free)


def test_random_feasible_instances_solve_to_tolerance():
    rng = np.random.default_rng(7)
    settings = SolverSettings(tol_gap=1e-9, tol_feas=1e-9)
    for _ in range(50):
        sf = _random_conic_instance(rng)
        result = solve(sf, settings)
        assert result.status is SolveStatus.OPTIMAL
        assert max(residuals(sf, result.x, result.y, result.s)) <= 1e-8


def test_iteration_log_is_reproducible(caplog):
    sf = _random_conic_instance(np.random.default_rng(11))
    runs = []
    for _ in range(2):
        caplog.clear()
        with caplog.at_level(logging.DEBUG, logger="lakit.ipm"):
            result = solve(sf)
        runs.append(([record.getMessage() for record in caplog.records], result))
    (first_log, first), (second_log, second) = runs
    assert first_log == second_log
    assert first.log == second.log
    assert np.array_equal(first.x, second.x)
