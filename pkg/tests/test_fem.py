import numpy as np
import pytest

from lakit.errors import FormulationError, SpaceError
from lakit.fem import (
    DirichletBC,
    DirichletData,
    apply_dirichlet,
    assemble_load_functional,
    build_space,
    cell_operator,
    centroid_rule,
    divergence_operator,
    elimination_map,
    facet_endpoint_rule,
    facet_jumps,
    gauss_segment_rule,
    gauss_triangle_rule,
    interpolate,
    jump_operator,
    nodal_average,
    strain_operator,
    traction_operator,
    vertex_rule,
)
from lakit.mesh import generate_rectangle


@pytest.fixture
def single_square():
    """One crossed square: 5 nodes, 4 cells, 8 facets."""
    return generate_rectangle(1.0, 1.0, 1, 1)


@pytest.mark.parametrize(
    ("family", "degree", "value_dim", "expected"),
    [
        ("LagrangeContinuous", 1, 2, 10),
        ("LagrangeContinuous", 2, 2, 26),
        ("LagrangeDiscontinuous", 1, 2, 24),
        ("LagrangeDiscontinuous", 0, 3, 12),
        ("FacetTrace", 1, 2, 32),
        ("GlobalScalar", 0, 3, 3),
    ],
)
def test_dof_counts(single_square, family, degree, value_dim, expected):
    space = build_space(single_square, family, degree, value_dim)
    assert space.dof_count == expected
    assert space.dof_map.max() < space.dof_count


def test_vector_dofs_are_interleaved(single_square):
    space = build_space(single_square, "LagrangeContinuous", 1, 2)
    assert space.component_dofs(1).tolist() == [1, 3, 5, 7, 9]
    assert space.dof_map.shape == (4, 6)


def test_unsupported_spaces_rejected(single_square):
    with pytest.raises(SpaceError, match="supports degrees"):
        build_space(single_square, "LagrangeContinuous", 3)
    with pytest.raises(SpaceError, match="unknown space family"):
        build_space(single_square, "Nedelec", 1)
    with pytest.raises(SpaceError, match="value_dim must be >= 1"):
        build_space(single_square, "LagrangeDiscontinuous", 1, 0)


@pytest.mark.parametrize(
    "rule",
    [vertex_rule(), centroid_rule(), gauss_triangle_rule(), facet_endpoint_rule(), gauss_segment_rule(3)],
)
def test_quadrature_weights_sum_to_one(rule):
    assert rule.weights.sum() == pytest.approx(1.0)
    assert np.allclose(rule.points.sum(axis=1), 1.0)


def _composite(rule, f, corners, n):
    """Apply ``rule`` on the n*n congruent sub-triangles of a triangle."""
    p0, p1, p2 = corners
    area = 0.5 * abs(np.linalg.det(np.array([p1 - p0, p2 - p0]))) / n**2

    def lattice(i, j):
        return p0 + (i / n) * (p1 - p0) + (j / n) * (p2 - p0)

    total = 0.0
    for i in range(n):
        for j in range(n - i):
            subs = [(lattice(i, j), lattice(i + 1, j), lattice(i, j + 1))]
            if i + j < n - 1:
                subs.append((lattice(i + 1, j), lattice(i + 1, j + 1), lattice(i, j + 1)))
            for sub in subs:
                points = rule.points @ np.array(sub)
                total += area * sum(w * f(x) for w, x in zip(rule.weights, points))
    return total


def test_vertex_rule_overestimates_convex_norms():
    """Vertex quadrature of a convex integrand is an upper bound of its integral."""
    rng = np.random.default_rng(5)
    for _ in range(50):
        corners = rng.uniform(-1.0, 1.0, size=(3, 2))
        offset, linear = rng.normal(size=2), rng.normal(size=(2, 2))

        def f(x):
            return np.linalg.norm(offset + linear @ x)

        coarse = _composite(vertex_rule(), f, corners, 1)
        reference = _composite(gauss_triangle_rule(), f, corners, 16)
        assert coarse >= reference - 1e-12 * (1.0 + abs(reference))


@pytest.mark.parametrize("degree", [1, 2])
def test_strain_of_linear_field_is_exact(unit_square, degree):
    space = build_space(unit_square, "LagrangeContinuous", degree, 2)
    u = interpolate(space, lambda x, y: (x, -y))
    strains = (cell_operator(space, gauss_triangle_rule(), "strain") @ u).reshape(-1, 3)
    assert np.allclose(strains, [1.0, -1.0, 0.0])
    single = strain_operator(space, 5, [0.2, 0.3, 0.5]) @ u
    assert np.allclose(single, [1.0, -1.0, 0.0])


def test_shear_strain_uses_tensor_component(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 1, 2)
    u = interpolate(space, lambda x, y: (y, 0.0))
    strains = (cell_operator(space, centroid_rule(), "strain") @ u).reshape(-1, 3)
    assert np.allclose(strains, [0.0, 0.0, 0.5])


def test_gradient_of_scalar_field(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 2, 1)
    w = interpolate(space, lambda x, y: 2.0 * x + 3.0 * y)
    grads = (cell_operator(space, vertex_rule(), "gradient") @ w).reshape(-1, 2)
    assert np.allclose(grads, [2.0, 3.0])


def test_divergence_of_constant_stress_vanishes(unit_square):
    space = build_space(unit_square, "LagrangeDiscontinuous", 1, 3)
    sigma = interpolate(space, lambda x, y: (1.0, 2.0, 3.0))
    assert np.allclose(divergence_operator(space) @ sigma, 0.0)


def test_divergence_of_linear_stress_is_area_weighted(unit_square):
    space = build_space(unit_square, "LagrangeDiscontinuous", 1, 3)
    sigma = interpolate(space, lambda x, y: (x, 0.0, 0.0))
    div = (divergence_operator(space) @ sigma).reshape(-1, 2)
    assert np.allclose(div[:, 0], unit_square.cell_areas)
    assert np.allclose(div[:, 1], 0.0)


def test_traction_of_uniaxial_stress_on_right_edge(unit_square):
    space = build_space(unit_square, "LagrangeDiscontinuous", 1, 3)
    sigma = interpolate(space, lambda x, y: (1.0, 0.0, 0.0))
    right = unit_square.tagged_facets("right")
    traction = (traction_operator(space, right, 0.5, 0) @ sigma).reshape(-1, 2)
    assert np.allclose(traction, [1.0, 0.0])


def test_load_functional_integrates_loads(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 2, 2)
    P = assemble_load_functional(space, body_force=[0.0, -1.0], tractions={"right": (2.0, 0.0)})
    assert P[space.component_dofs(1)].sum() == pytest.approx(-1.0)
    assert P[space.component_dofs(0)].sum() == pytest.approx(2.0)
    # the work of the loads on a rigid translation is the resultant
    u = interpolate(space, lambda x, y: (1.0, 1.0))
    assert P @ u == pytest.approx(1.0)


def test_load_functional_rejects_unknown_tag(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 1, 2)
    with pytest.raises(SpaceError, match="unknown boundary tag 'roof'"):
        assemble_load_functional(space, tractions={"roof": (1.0, 0.0)})


def test_continuous_field_has_no_interior_jumps(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 2, 2)
    u = interpolate(space, lambda x, y: (x * y, x - y))
    interior = unit_square.interior_facets
    for s in (0.0, 0.5, 1.0):
        assert np.allclose(facet_jumps(space, interior, s) @ u, 0.0)


def test_boundary_jump_is_negated_trace_in_facet_frame(unit_square):
    space = build_space(unit_square, "LagrangeDiscontinuous", 1, 2)
    u = interpolate(space, lambda x, y: (1.0, 0.0))
    right = unit_square.tagged_facets("right")
    jumps = (facet_jumps(space, right, 0.5, boundary=True) @ u).reshape(-1, 2)
    assert np.allclose(jumps, [-1.0, 0.0])
    with pytest.raises(SpaceError, match="is on the boundary"):
        facet_jumps(space, right, 0.5)


def test_dirichlet_collects_boundary_dofs(unit_square, rollers):
    space = build_space(unit_square, "LagrangeContinuous", 1, 2)
    data = apply_dirichlet(space, rollers)
    # three nodes on each of the left and bottom edges
    assert len(data.dofs) == 6
    assert np.all(data.values == 0.0)
    E, u0 = elimination_map(space.dof_count, data)
    assert E.shape == (space.dof_count, space.dof_count - 6)
    assert np.all(u0 == 0.0)


def test_dirichlet_conflict_at_shared_corner(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 1, 2)
    bcs = [DirichletBC("left", (0,), (0.0,)), DirichletBC("bottom", (0,), (1.0,))]
    with pytest.raises(FormulationError, match="conflicting Dirichlet values"):
        apply_dirichlet(space, bcs)


def test_dirichlet_component_out_of_range(unit_square):
    space = build_space(unit_square, "LagrangeContinuous", 1, 2)
    with pytest.raises(FormulationError, match="component 2 outside 0..1"):
        apply_dirichlet(space, [DirichletBC("left", (2,), (0.0,))])


def test_elimination_map_reinserts_fixed_values():
    E, u0 = elimination_map(4, DirichletData(np.array([1, 3]), np.array([5.0, 7.0])))
    assert (E @ np.array([1.0, 2.0]) + u0).tolist() == [1.0, 5.0, 2.0, 7.0]


def test_nodal_average_of_constant_cells(unit_square):
    values = np.tile([[2.0, -1.0]], (unit_square.num_cells, 1))
    assert np.allclose(nodal_average(unit_square, values), [2.0, -1.0])


def test_jump_operator_differences_adjacent_cells(unit_square):
    space = build_space(unit_square, "LagrangeDiscontinuous", 0, 1)
    values = np.arange(unit_square.num_cells, dtype=float)
    facet = int(unit_square.interior_facets[0])
    c0, c1 = unit_square.facet_cells[facet]
    jump = jump_operator(space, facet, 0.5) @ values
    assert jump.tolist() == [pytest.approx(float(c1 - c0))]
