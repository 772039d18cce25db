import math

import numpy as np
import pytest

from lakit.cones import ConeProduct, Free, evaluate_via_solver, validate
from lakit.criteria import (
    deviatoric_parameters,
    drucker_prager,
    indicator,
    jump_to_strain,
    jump_value,
    make_criterion,
    mohr_coulomb,
    pairing,
    rankine,
    required_params,
    support_jump,
    support_strain,
    support_value,
    thick_plate,
    tresca,
    von_mises,
)
from lakit.errors import CriterionError
from lakit.ipm import SolveStatus, solve, to_standard_form
from lakit.program import ProgramBuilder

PHI30 = math.radians(30.0)
SQRT3 = math.sqrt(3.0)


def test_support_value_closed_forms():
    mc = mohr_coulomb(1.0, PHI30)
    assert support_value(mc, [1.0, 0.0, 0.0]) == pytest.approx(SQRT3)
    assert support_value(mc, [1.0, 1.0, 0.0]) == pytest.approx(2.0 * SQRT3)
    assert support_value(tresca(1.0), [1.0, -1.0, 0.0]) == pytest.approx(2.0)
    assert support_value(thick_plate(1.0, 2.0), [0.0, 0.0, 0.0, 3.0, 4.0]) == pytest.approx(10.0)


def test_isochoric_rate_outside_friction_cone_is_infinite():
    # a pure shear rate has zero trace, which no frictional material can dissipate finitely
    assert math.isinf(support_value(mohr_coulomb(1.0, PHI30), [1.0, -1.0, 0.0]))


def test_volumetric_rate_is_infinite_for_tresca():
    assert math.isinf(support_value(tresca(1.0), [1.0, 0.0, 0.0]))


def test_jump_value_closed_forms():
    assert jump_value(mohr_coulomb(1.0, 0.0), [0.0, 1.0]) == pytest.approx(1.0)
    assert jump_value(mohr_coulomb(1.0, PHI30), [1.0, 0.0]) == pytest.approx(SQRT3)
    assert jump_value(thick_plate(1.0, 2.0), [0.0, 0.0, -3.0]) == pytest.approx(6.0)


def test_jump_matches_strain_support_of_symmetric_product():
    mc = mohr_coulomb(1.0, PHI30)
    v = np.array([2.0, 0.5])
    d = jump_to_strain(v, np.array([1.0, 0.0]))
    assert jump_value(mc, v) == pytest.approx(support_value(mc, d))


@pytest.mark.parametrize(
    ("criterion", "d"),
    [
        (tresca(1.0), [1.0, -1.0, 0.0]),
        (von_mises(2.0), [0.3, -0.3, 0.4]),
        (mohr_coulomb(1.0, PHI30), [1.0, 0.0, 0.0]),
        (mohr_coulomb(1.0, PHI30), [2.0, 0.5, 0.3]),
        (drucker_prager(1.0, PHI30), [1.5, 0.5, 0.2]),
        (rankine(1.0, 2.0), [1.0, -1.0, 0.0]),
        (rankine(1.0, 2.0), [0.2, 0.7, -0.3]),
        (thick_plate(1.0, 1.0), [1.0, 0.0, 0.0, 0.0, 0.0]),
        (thick_plate(1.0, 3.0), [0.3, -0.2, 0.1, 1.0, 2.0]),
    ],
)
def test_conic_support_matches_closed_form(criterion, d):
    """The conic descriptor of the support function evaluates to the closed form."""
    expected = support_value(criterion, d)
    assert evaluate_via_solver(support_strain(criterion), d) == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize(
    ("criterion", "v"),
    [
        (mohr_coulomb(1.0, 0.0), [0.0, 1.0]),
        (mohr_coulomb(1.0, PHI30), [1.0, 0.5]),
        (rankine(1.0, 2.0), [0.5, -1.0]),
        (thick_plate(2.0, 1.0), [0.4, -0.3, 1.5]),
    ],
)
def test_conic_jump_matches_closed_form(criterion, v):
    expected = jump_value(criterion, v)
    assert evaluate_via_solver(support_jump(criterion), v) == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize(
    ("criterion", "inside", "outside"),
    [
        (tresca(1.0), [0.5, 0.0, 0.0], [3.0, 0.0, 0.0]),
        (mohr_coulomb(1.0, PHI30), [-1.0, -1.0, 0.2], [1.0, 1.0, 1.0]),
        (rankine(1.0, 2.0), [0.5, -1.0, 0.0], [1.5, 0.0, 0.0]),
        (thick_plate(1.0, 1.0), [0.1, 0.0, 0.0, 0.3, 0.4], [0.0, 0.0, 0.0, 1.2, 0.0]),
    ],
)
def test_indicator_separates_inside_from_outside(criterion, inside, outside):
    f = indicator(criterion)
    assert evaluate_via_solver(f, inside) == pytest.approx(0.0, abs=1e-7)
    assert math.isinf(evaluate_via_solver(f, outside))


@pytest.mark.parametrize(
    "criterion",
    [tresca(1.0), mohr_coulomb(1.0, PHI30), drucker_prager(1.0, PHI30), rankine(1.0, 2.0), thick_plate(1.0, 1.0)],
    ids=lambda c: c.name,
)
def test_descriptors_are_valid(criterion):
    for make in (indicator, support_strain, support_jump):
        f = make(criterion)
        assert validate(f) == []
        assert f.n in (criterion.stress_dim, criterion.jump_dim)


def test_dimensions_and_pairing():
    plate = thick_plate(1.0, 1.0)
    assert plate.is_plate and plate.stress_dim == 5 and plate.jump_dim == 3
    assert pairing(plate).tolist() == [1.0, 1.0, 2.0, 1.0, 1.0]
    assert pairing(tresca(1.0)).tolist() == [1.0, 1.0, 2.0]


def test_scaled_multiplies_strengths_only():
    scaled = mohr_coulomb(1.0, 0.5).scaled(2.0)
    assert scaled.params == {"c": 2.0, "phi": 0.5}


def test_make_criterion_checks_parameters():
    assert make_criterion("Rankine2D", ft=1.0, fc=3.0) == rankine(1.0, 3.0)
    with pytest.raises(CriterionError, match="missing k"):
        make_criterion("Tresca2D")
    with pytest.raises(CriterionError, match="unexpected phi"):
        make_criterion("Tresca2D", k=1.0, phi=0.1)
    with pytest.raises(CriterionError, match="k must be > 0"):
        tresca(-1.0)
    with pytest.raises(CriterionError, match="phi must satisfy"):
        mohr_coulomb(1.0, 2.0)


def test_unknown_criterion_lists_supported_names():
    with pytest.raises(CriterionError, match="unsupported criterion 'TsaiWu'"):
        required_params("TsaiWu")


def test_wrong_strain_size_rejected():
    with pytest.raises(CriterionError, match="strain rate has size 2"):
        support_value(tresca(1.0), [1.0, 0.0])


def _support_over_indicator(mat, d):
    """max <sigma, d> over the strength domain, solved as a conic program."""
    f = indicator(mat)
    builder = ProgramBuilder()
    sigma = builder.add_block("sigma", ConeProduct.of(Free(mat.stress_dim)))
    y = builder.add_block("y", f.K)
    builder.add_objective(sigma, -pairing(mat) * d)
    builder.add_rows("domain", {sigma: f.A, y: f.B}, f.b_l, f.b_u)
    sf, _ = to_standard_form(builder.build())
    result = solve(sf)
    assert result.status is SolveStatus.OPTIMAL
    return -(sf.c @ result.x + sf.offset)


def _admissible_rate(mat, rng):
    """A random strain rate inside the domain of the support function."""
    if mat.is_plate:
        return rng.normal(size=5)
    d = rng.normal(size=3)
    if mat.name == "Rankine2D":
        return d
    _, beta = deviatoric_parameters(mat)
    radius = math.hypot(d[0] - d[1], 2.0 * d[2])
    trace = beta * radius * rng.uniform(1.1, 2.0)
    return np.array([0.5 * (trace + d[0] - d[1]), 0.5 * (trace - d[0] + d[1]), d[2]])


SAMPLED = [
    von_mises(1.5),
    mohr_coulomb(1.0, PHI30),
    drucker_prager(2.0, math.radians(20.0)),
    rankine(1.0, 3.0),
    thick_plate(1.0, 2.0),
]


def test_support_is_conjugate_of_indicator_on_random_rates():
    # von Mises leaves the mean stress unbounded for its isochoric rates
    bounded = SAMPLED[1:]
    rng = np.random.default_rng(20)
    for i in range(100):
        mat = bounded[i % len(bounded)]
        d = _admissible_rate(mat, rng)
        expected = support_value(mat, d)
        assert _support_over_indicator(mat, d) == pytest.approx(expected, rel=1e-5, abs=1e-7)
        assert evaluate_via_solver(support_strain(mat), d) == pytest.approx(
            expected, rel=1e-5, abs=1e-7
        )


@pytest.mark.parametrize(
    "mat",
    [tresca(1.0), mohr_coulomb(1.0, PHI30), drucker_prager(1.0, PHI30), rankine(1.0, 2.0)],
    ids=lambda c: c.name,
)
def test_jump_value_matches_symmetric_product_on_random_facets(mat):
    rng = np.random.default_rng(21)
    for i in range(100):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        n = np.array([math.cos(angle), math.sin(angle)])
        t = np.array([-n[1], n[0]])
        v_n, v_t = rng.normal(size=2)
        if i % 2:
            # purely tangential slip keeps pressure-insensitive criteria finite
            v_n = 0.0
        expected = jump_value(mat, [v_n, v_t])
        actual = support_value(mat, jump_to_strain(v_n * n + v_t * t, n))
        if math.isinf(expected):
            assert math.isinf(actual)
        else:
            assert actual == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_support_is_sublinear_on_random_rates():
    rng = np.random.default_rng(22)
    for i in range(100):
        mat = SAMPLED[i % len(SAMPLED)]
        d1, d2 = _admissible_rate(mat, rng), _admissible_rate(mat, rng)
        scale = rng.uniform(0.1, 10.0)
        combined = support_value(mat, d1 + d2)
        assert combined <= support_value(mat, d1) + support_value(mat, d2) + 1e-9 * (1.0 + combined)
        assert support_value(mat, scale * d1) == pytest.approx(scale * support_value(mat, d1))
