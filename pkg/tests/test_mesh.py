import numpy as np
import pytest

from lakit.errors import MeshError
from lakit.mesh import (
    EdgeSegment,
    Mesh,
    RefinementMark,
    facet_frame,
    generate_rectangle,
    load_mesh,
    refine_marked,
    refine_uniform,
    save_mesh,
)


def test_rectangle_counts(unit_square):
    assert unit_square.num_nodes == 13
    assert unit_square.num_cells == 16
    assert unit_square.num_facets == 28
    assert len(unit_square.boundary_facets) == 8
    assert unit_square.area == pytest.approx(1.0)
    assert unit_square.tags == {"left", "right", "bottom", "top"}


def test_facet_cells_list_lower_cell_first(unit_square):
    interior = unit_square.interior_facets
    cells = unit_square.facet_cells[interior]
    assert np.all(cells[:, 0] < cells[:, 1])
    assert np.all(unit_square.facet_cells[unit_square.boundary_facets, 1] == -1)


def test_normals_point_outward_and_from_first_cell(unit_square):
    mesh = unit_square
    centroids = mesh.cell_centroids
    mids = mesh.nodes[mesh.facet_nodes].mean(axis=1)
    for f in mesh.boundary_facets:
        outward = mids[f] - centroids[mesh.facet_cells[f, 0]]
        assert mesh.facet_normals[f] @ outward > 0
    for f in mesh.interior_facets:
        c0, c1 = mesh.facet_cells[f]
        assert mesh.facet_normals[f] @ (centroids[c1] - centroids[c0]) > 0
    assert np.allclose(np.linalg.norm(mesh.facet_normals, axis=1), 1.0)


def test_facet_frame_is_right_handed(unit_square):
    n, t = facet_frame(unit_square, 0)
    assert n[0] * t[1] - n[1] * t[0] == pytest.approx(1.0)


def test_clockwise_cells_are_reoriented():
    mesh = Mesh.from_cells([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], [[0, 1, 2]])
    assert mesh.cell_areas[0] == pytest.approx(0.5)
    assert mesh.cells[0].tolist() == [0, 2, 1]


def test_degenerate_cell_rejected():
    with pytest.raises(MeshError, match="zero area"):
        Mesh.from_cells([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]])


def test_duplicate_cell_rejected():
    with pytest.raises(MeshError, match="duplicate cell"):
        Mesh.from_cells([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2], [1, 2, 0]])


def test_hanging_node_rejected():
    nodes = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0], [1.0, 1.0]]
    with pytest.raises(MeshError, match="not conforming"):
        Mesh.from_cells(nodes, [[0, 1, 2], [1, 3, 4], [4, 3, 2]])


def test_tag_on_interior_facet_rejected():
    nodes = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    with pytest.raises(MeshError, match="not a boundary facet"):
        Mesh.from_cells(nodes, [[0, 1, 2], [1, 3, 2]], {(1, 2): "diag"})


def test_unknown_rectangle_edge_rejected():
    with pytest.raises(MeshError, match="unknown rectangle edge"):
        generate_rectangle(1.0, 1.0, 1, 1, {"middle": "x"})


def test_segments_override_edge_tags():
    mesh = generate_rectangle(
        5.0, 2.0, 10, 4, segments=[EdgeSegment("top", 2.0, 3.0, "footing")]
    )
    footing = mesh.tagged_facets("footing")
    assert mesh.facet_lengths[footing].sum() == pytest.approx(1.0)
    assert mesh.facet_lengths[mesh.tagged_facets("top")].sum() == pytest.approx(4.0)


def test_save_and_load_preserve_mesh(tmp_path, unit_square):
    path = tmp_path / "square.mesh"
    save_mesh(unit_square, path)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.nodes, unit_square.nodes)
    assert np.array_equal(loaded.cells, unit_square.cells)
    assert loaded.edge_tags() == unit_square.edge_tags()


def test_load_reports_bad_header(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("not-a-mesh\n")
    with pytest.raises(MeshError, match="line 1: expected header"):
        load_mesh(path)


def test_load_reports_short_section(tmp_path):
    path = tmp_path / "short.mesh"
    path.write_text("lakit-mesh 1\nnodes 3\n0 0\n1 0\n")
    with pytest.raises(MeshError, match="'nodes' section ends early"):
        load_mesh(path)


def test_load_reports_bad_value_line(tmp_path):
    path = tmp_path / "value.mesh"
    path.write_text("lakit-mesh 1\nnodes 3\n0 0\n1 x\n0 1\ncells 1\n0 1 2\n")
    with pytest.raises(MeshError, match="line 4: invalid float value"):
        load_mesh(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(MeshError, match="not found"):
        load_mesh(tmp_path / "missing.mesh")


class TestRefinement:
    def test_uniform_refinement_quadruples_cells(self, unit_square):
        """Uniform refinement splits every cell into four and keeps the area and tags."""
        fine = refine_uniform(unit_square)
        assert fine.num_cells == 4 * unit_square.num_cells
        assert fine.num_nodes == unit_square.num_nodes + unit_square.num_facets
        assert fine.area == pytest.approx(1.0)
        for tag in unit_square.tags:
            coarse_length = unit_square.facet_lengths[unit_square.tagged_facets(tag)].sum()
            fine_length = fine.facet_lengths[fine.tagged_facets(tag)].sum()
            assert fine_length == pytest.approx(coarse_length)

    def test_single_mark_closes_with_green_cells(self, unit_square):
        """A marked corner cell is red-refined and its two neighbours are bisected."""
        refined = refine_marked(unit_square, RefinementMark.of([0]))
        assert refined.num_cells == 16 - 3 + 4 + 4
        assert sum(refined.is_green(c) for c in range(refined.num_cells)) == 4
        assert refined.area == pytest.approx(1.0)

    def test_marking_green_child_rebuilds_parent(self, unit_square):
        """Refining a green child first merges it back, keeping the mesh conforming."""
        refined = refine_marked(unit_square, RefinementMark.of([0]))
        green = next(c for c in range(refined.num_cells) if refined.is_green(c))
        again = refine_marked(refined, RefinementMark.of([green]))
        assert again.area == pytest.approx(1.0)
        assert again.num_cells > refined.num_cells

    def test_empty_mark_returns_same_mesh(self, unit_square):
        """No marks means no refinement."""
        assert refine_marked(unit_square, RefinementMark()) is unit_square

    def test_out_of_range_mark_rejected(self, unit_square):
        """Marks must name existing cells."""
        with pytest.raises(MeshError, match="out of range"):
            refine_marked(unit_square, RefinementMark.of([99]))
