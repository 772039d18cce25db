"""Function spaces, quadrature rules and the linear operators of the discretization.

Local node order on a cell is the three vertices followed (degree 2) by the
midpoints of local edges (0,1), (1,2), (2,0); local edge ``k`` of cell ``c``
is facet ``mesh.cell_facets[c, k]``. Vector DOFs are numbered
``entity * value_dim + component``.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
import scipy.sparse as sps

from .errors import FormulationError, SpaceError
from .mesh import Mesh

SpaceFamily = Literal[
    "LagrangeContinuous", "LagrangeDiscontinuous", "FacetTrace", "GlobalScalar"
]

_SUPPORTED_DEGREES: dict[str, tuple[int, ...]] = {
    "LagrangeContinuous": (1, 2),
    "LagrangeDiscontinuous": (0, 1, 2),
    "FacetTrace": (1, 2),
    "GlobalScalar": (0,),
}
_CELL_NODES = {0: 1, 1: 3, 2: 6}
_FACET_NODES = {1: 2, 2: 3}
# local edge k joins local vertices k and k+1
_EDGE_VERTICES = ((0, 1), (1, 2), (2, 0))


class QuadratureRule(NamedTuple):
    """Barycentric points and weights summing to one (scaled by |T| or L at use)."""

    points: np.ndarray
    weights: np.ndarray


def vertex_rule() -> QuadratureRule:
    return QuadratureRule(np.eye(3), np.full(3, 1.0 / 3.0))


def centroid_rule() -> QuadratureRule:
    return QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.ones(1))


def gauss_triangle_rule() -> QuadratureRule:
    """Edge-midpoint rule, exact for quadratics."""
    points = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    return QuadratureRule(points, np.full(3, 1.0 / 3.0))


def facet_endpoint_rule() -> QuadratureRule:
    return QuadratureRule(np.eye(2), np.full(2, 0.5))


def gauss_segment_rule(count: int = 2) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(count)
    s = 0.5 * (x + 1.0)
    return QuadratureRule(np.column_stack([1.0 - s, s]), 0.5 * w)


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    """A finite-element space on a mesh.

    ``dof_map[e]`` lists the global DOFs of entity ``e`` (a cell, a facet for
    ``FacetTrace``, a single row for ``GlobalScalar``) in local-node-major
    order.
    """

    mesh: Mesh
    family: SpaceFamily
    degree: int
    value_dim: int
    dof_map: np.ndarray
    dof_coordinates: np.ndarray

    @property
    def dof_count(self) -> int:
        return len(self.dof_coordinates)

    @property
    def local_nodes(self) -> int:
        if self.family == "FacetTrace":
            return _FACET_NODES[self.degree]
        if self.family == "GlobalScalar":
            return 1
        return _CELL_NODES[self.degree]

    @property
    def is_discontinuous(self) -> bool:
        return self.family == "LagrangeDiscontinuous"

    def component_dofs(self, component: int) -> np.ndarray:
        return np.arange(component, self.dof_count, self.value_dim)


def build_space(mesh: Mesh, family: SpaceFamily, degree: int, value_dim: int = 1) -> FunctionSpace:
    """Build a space with deterministic DOF numbering.

    Raises:
        SpaceError: For unsupported (family, degree) pairs or value_dim < 1.
    """
    if family not in _SUPPORTED_DEGREES:
        raise SpaceError(f"unknown space family {family!r}")
    if degree not in _SUPPORTED_DEGREES[family]:
        raise SpaceError(
            f"{family} supports degrees {_SUPPORTED_DEGREES[family]}, got {degree}"
        )
    if value_dim < 1:
        raise SpaceError(f"value_dim must be >= 1, got {value_dim}")
    vd = value_dim
    comps = np.arange(vd)

    if family == "GlobalScalar":
        return FunctionSpace(
            mesh, family, degree, vd, comps[None, :], np.full((vd, 2), np.nan)
        )

    if family == "LagrangeContinuous":
        entities = mesh.cells.copy()
        coords = mesh.nodes
        if degree == 2:
            entities = np.hstack([entities, mesh.num_nodes + mesh.cell_facets])
            coords = np.vstack([coords, _facet_midpoints(mesh)])
    elif family == "LagrangeDiscontinuous":
        nloc = _CELL_NODES[degree]
        entities = np.arange(mesh.num_cells * nloc).reshape(mesh.num_cells, nloc)
        coords = _cell_node_coordinates(mesh, degree).reshape(-1, 2)
    else:
        nloc = _FACET_NODES[degree]
        entities = np.arange(mesh.num_facets * nloc).reshape(mesh.num_facets, nloc)
        ends = mesh.nodes[mesh.facet_nodes]
        parts = [ends[:, 0], ends[:, 1]]
        if degree == 2:
            parts.append(ends.mean(axis=1))
        coords = np.stack(parts, axis=1).reshape(-1, 2)

    dof_map = (entities[:, :, None] * vd + comps).reshape(len(entities), -1)
    dof_coordinates = np.repeat(coords, vd, axis=0)
    return FunctionSpace(mesh, family, degree, vd, dof_map, dof_coordinates)


def _facet_midpoints(mesh: Mesh) -> np.ndarray:
    return mesh.nodes[mesh.facet_nodes].mean(axis=1)


def _cell_node_coordinates(mesh: Mesh, degree: int) -> np.ndarray:
    vertices = mesh.nodes[mesh.cells]
    if degree == 0:
        return vertices.mean(axis=1, keepdims=True)
    if degree == 1:
        return vertices
    mids = [0.5 * (vertices[:, i] + vertices[:, j]) for i, j in _EDGE_VERTICES]
    return np.concatenate([vertices, np.stack(mids, axis=1)], axis=1)


def shape_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Lagrange shape functions at barycentric points, shape (k, nloc)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    if degree == 0:
        return np.ones((len(lam), 1))
    if degree == 1:
        return lam.copy()
    vertex = lam * (2.0 * lam - 1.0)
    mids = np.stack([4.0 * lam[:, i] * lam[:, j] for i, j in _EDGE_VERTICES], axis=1)
    return np.hstack([vertex, mids])


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the barycentric coordinates per cell, shape (C, 3, 2)."""
    p = mesh.nodes[mesh.cells]
    area2 = 2.0 * mesh.cell_areas
    grads = np.empty((mesh.num_cells, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
        grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
    return grads


def shape_gradients(mesh: Mesh, degree: int, bary: Sequence[float]) -> np.ndarray:
    """Physical shape-function gradients at one barycentric point, shape (C, nloc, 2)."""
    if degree == 0:
        raise SpaceError("degree-0 functions have no gradient")
    lam = np.asarray(bary, dtype=float)
    grad = barycentric_gradients(mesh)
    if degree == 1:
        return grad
    vertex = (4.0 * lam - 1.0)[None, :, None] * grad
    mids = np.stack(
        [4.0 * (lam[j] * grad[:, i] + lam[i] * grad[:, j]) for i, j in _EDGE_VERTICES],
        axis=1,
    )
    return np.concatenate([vertex, mids], axis=1)


def _cell_space(space: FunctionSpace) -> None:
    if space.family not in ("LagrangeContinuous", "LagrangeDiscontinuous"):
        raise SpaceError(f"{space.family} has no cell-wise shape functions")


def _stack_rows(space: FunctionSpace, local: np.ndarray, cells: np.ndarray) -> sps.csr_matrix:
    """Assemble per-entity local blocks (k, r, nloc*vd) into a (k*r, dofs) matrix."""
    k, r, width = local.shape
    rows = np.broadcast_to(np.arange(k * r).reshape(k, r, 1), local.shape)
    cols = np.broadcast_to(space.dof_map[cells][:, None, :], local.shape)
    matrix = sps.csr_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=(k * r, space.dof_count)
    )
    matrix.eliminate_zeros()
    return matrix


def _local_strain(grads: np.ndarray) -> np.ndarray:
    """Local symmetric-gradient blocks (C, 3, nloc*2) from shape gradients."""
    C, nloc, _ = grads.shape
    local = np.zeros((C, 3, nloc, 2))
    local[:, 0, :, 0] = grads[:, :, 0]
    local[:, 1, :, 1] = grads[:, :, 1]
    local[:, 2, :, 0] = 0.5 * grads[:, :, 1]
    local[:, 2, :, 1] = 0.5 * grads[:, :, 0]
    return local.reshape(C, 3, 2 * nloc)


def _local_gradient(grads: np.ndarray) -> np.ndarray:
    return np.transpose(grads, (0, 2, 1))


def _local_values(space: FunctionSpace, N: np.ndarray) -> np.ndarray:
    """Local value blocks (k, vd, nloc*vd) from shape values N (k, nloc)."""
    k, nloc = N.shape
    vd = space.value_dim
    local = np.zeros((k, vd, nloc, vd))
    for comp in range(vd):
        local[:, comp, :, comp] = N
    return local.reshape(k, vd, nloc * vd)


def _require_vector(space: FunctionSpace) -> None:
    if space.value_dim != 2:
        raise SpaceError(f"strain needs a 2-component space, got value_dim {space.value_dim}")


def strain_operator(space: FunctionSpace, cell: int, point: Sequence[float]) -> sps.csr_matrix:
    """Map DOFs to (dxx, dyy, dxy) of the field at a barycentric point of ``cell``."""
    _cell_space(space)
    _require_vector(space)
    grads = shape_gradients(space.mesh, space.degree, point)[[cell]]
    local = _local_strain(grads)
    return _stack_rows(space, local, np.array([cell]))


def gradient_operator(space: FunctionSpace, cell: int, point: Sequence[float]) -> sps.csr_matrix:
    """Map DOFs of a scalar space to the gradient at a barycentric point."""
    _cell_space(space)
    if space.value_dim != 1:
        raise SpaceError("gradient_operator needs a scalar space")
    grads = shape_gradients(space.mesh, space.degree, point)[[cell]]
    return _stack_rows(space, _local_gradient(grads), np.array([cell]))


def value_operator(space: FunctionSpace, cell: int, point: Sequence[float]) -> sps.csr_matrix:
    """Map DOFs to the field components at a barycentric point of ``cell``."""
    _cell_space(space)
    N = shape_values(space.degree, np.asarray(point)[None, :])
    return _stack_rows(space, _local_values(space, N), np.array([cell]))


def cell_operator(
    space: FunctionSpace,
    rule: QuadratureRule,
    kind: Literal["strain", "gradient", "value"],
    cells: np.ndarray | None = None,
) -> sps.csr_matrix:
    """Stack an operator over cells and rule points; rows ordered (cell, point, component)."""
    _cell_space(space)
    mesh = space.mesh
    cells = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    blocks = []
    for point in rule.points:
        if kind == "strain":
            _require_vector(space)
            local = _local_strain(shape_gradients(mesh, space.degree, point)[cells])
        elif kind == "gradient":
            if space.value_dim != 1:
                raise SpaceError("gradient needs a scalar space")
            local = _local_gradient(shape_gradients(mesh, space.degree, point)[cells])
        else:
            N = np.repeat(shape_values(space.degree, point[None, :]), len(cells), axis=0)
            local = _local_values(space, N)
        blocks.append(local)
    # (cells, points, rows, width)
    local = np.stack(blocks, axis=1)
    k, q, r, width = local.shape
    return _stack_rows(space, local.reshape(k, q * r, width), cells)


def _local_index(mesh: Mesh, cells: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    return np.argmax(mesh.cells[cells] == nodes[:, None], axis=1)


def _facet_bary(mesh: Mesh, cells: np.ndarray, facets: np.ndarray, s: float) -> np.ndarray:
    """Cell barycentric coordinates of the point at parameter ``s`` along each facet."""
    a, b = mesh.facet_nodes[facets, 0], mesh.facet_nodes[facets, 1]
    bary = np.zeros((len(facets), 3))
    rows = np.arange(len(facets))
    bary[rows, _local_index(mesh, cells, a)] = 1.0 - s
    bary[rows, _local_index(mesh, cells, b)] = s
    return bary


def facet_trace(
    space: FunctionSpace, facets: np.ndarray, s: float, side: int
) -> sps.csr_matrix:
    """Values of the field on ``side`` (0 or 1) of each facet at parameter ``s``.

    Rows are ordered (facet, component).
    """
    _cell_space(space)
    mesh = space.mesh
    facets = np.asarray(facets, dtype=np.int64)
    cells = mesh.facet_cells[facets, side]
    if np.any(cells < 0):
        raise SpaceError("facet has no cell on the requested side")
    N = shape_values(space.degree, _facet_bary(mesh, cells, facets, s))
    return _stack_rows(space, _local_values(space, N), cells)


def frame_rotation(mesh: Mesh, facets: np.ndarray) -> sps.csr_matrix:
    """Block-diagonal rotation taking (x, y) vectors to (n, t) per facet."""
    n = mesh.facet_normals[facets]
    t = np.column_stack([-n[:, 1], n[:, 0]])
    blocks = np.stack([n, t], axis=1)
    k = len(facets)
    rows = np.repeat(np.arange(2 * k), 2)
    cols = (np.arange(k)[:, None, None] * 2 + np.array([[0, 1], [0, 1]])).ravel()
    return sps.csr_matrix((blocks.ravel(), (rows, cols)), shape=(2 * k, 2 * k))


def jump_operator(
    space: FunctionSpace,
    facet: int,
    point: float,
    *,
    boundary: bool = False,
) -> sps.csr_matrix:
    """Map DOFs to the jump u(c1) - u(c0) at parameter ``point`` along ``facet``.

    Vector fields are returned in the facet frame (v_n, v_t). On a boundary
    facet ``boundary=True`` returns the map of ``-u(c0)``; the exterior value
    is supplied by the caller.

    Raises:
        SpaceError: For a boundary facet without ``boundary=True``.
    """
    return facet_jumps(space, np.array([facet]), point, boundary=boundary)


def facet_jumps(
    space: FunctionSpace,
    facets: np.ndarray,
    point: float,
    *,
    boundary: bool = False,
) -> sps.csr_matrix:
    """Stacked :func:`jump_operator` over several facets; rows (facet, component)."""
    mesh = space.mesh
    facets = np.asarray(facets, dtype=np.int64)
    on_boundary = mesh.facet_cells[facets, 1] < 0
    if np.any(on_boundary) and not boundary:
        raise SpaceError(f"facet {int(facets[np.argmax(on_boundary)])} is on the boundary")
    if np.any(~on_boundary) and boundary:
        raise SpaceError("boundary jumps requested on interior facets")
    inner = facet_trace(space, facets, point, 0)
    jump = -inner if boundary else facet_trace(space, facets, point, 1) - inner
    if space.value_dim == 2:
        jump = frame_rotation(mesh, facets) @ jump
    return sps.csr_matrix(jump)


def divergence_operator(space: FunctionSpace) -> sps.csr_matrix:
    """Area-weighted cell divergence of a degree-1 (sxx, syy, sxy) field.

    Rows are ordered (cell, component); row ``2c + k`` is
    ``|T_c| (div sigma)_k`` on cell ``c``.
    """
    _cell_space(space)
    if space.value_dim != 3 or space.degree != 1:
        raise SpaceError("divergence_operator needs a degree-1 symmetric tensor space")
    mesh = space.mesh
    grads = barycentric_gradients(mesh)
    local = np.zeros((mesh.num_cells, 2, 3, 3))
    local[:, 0, :, 0] = grads[:, :, 0]
    local[:, 0, :, 2] = grads[:, :, 1]
    local[:, 1, :, 1] = grads[:, :, 1]
    local[:, 1, :, 2] = grads[:, :, 0]
    local *= mesh.cell_areas[:, None, None, None]
    return _stack_rows(space, local.reshape(mesh.num_cells, 2, 9), np.arange(mesh.num_cells))


def traction_operator(
    space: FunctionSpace, facets: np.ndarray, s: float, side: int
) -> sps.csr_matrix:
    """Traction sigma . n of a (sxx, syy, sxy) field on ``side`` of each facet.

    Rows are ordered (facet, component).
    """
    if space.value_dim != 3:
        raise SpaceError("traction_operator needs a symmetric tensor space")
    facets = np.asarray(facets, dtype=np.int64)
    trace = facet_trace(space, facets, s, side)
    n = space.mesh.facet_normals[facets]
    k = len(facets)
    base = 3 * np.arange(k)
    rows = np.concatenate([2 * np.arange(k)] * 2 + [2 * np.arange(k) + 1] * 2)
    cols = np.concatenate([base, base + 2, base + 1, base + 2])
    vals = np.concatenate([n[:, 0], n[:, 1], n[:, 1], n[:, 0]])
    N = sps.csr_matrix((vals, (rows, cols)), shape=(2 * k, 3 * k))
    return sps.csr_matrix(N @ trace)


def to_facet_frame(mesh: Mesh, facets: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Express (k, 2) Cartesian vectors in the (n, t) frame of each facet."""
    n = mesh.facet_normals[facets]
    t = np.column_stack([-n[:, 1], n[:, 0]])
    return np.column_stack(
        [np.einsum("ij,ij->i", vectors, n), np.einsum("ij,ij->i", vectors, t)]
    )


def _as_cell_array(values: np.ndarray | Sequence[float] | float, count: int, width: int) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim <= 1 and array.size == width:
        array = np.broadcast_to(array.reshape(1, width), (count, width))
    if array.shape != (count, width):
        raise SpaceError(f"expected {width}-vector or ({count}, {width}) array, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise SpaceError("load values must be finite")
    return array


def assemble_load_functional(
    space: FunctionSpace,
    body_force: np.ndarray | Sequence[float] | float | None = None,
    tractions: Mapping[str, Sequence[float] | float] | None = None,
) -> np.ndarray:
    """Return the vector P with P @ u = int f.u dx + int t.u ds.

    ``body_force`` is one value_dim-vector (uniform) or one per cell;
    ``tractions`` maps boundary tags to a constant value_dim-vector.

    Raises:
        SpaceError: For an unknown tag or mis-shaped loads.
    """
    _cell_space(space)
    mesh = space.mesh
    vd = space.value_dim
    P = np.zeros(space.dof_count)
    if body_force is not None:
        f = _as_cell_array(body_force, mesh.num_cells, vd)
        rule = gauss_triangle_rule()
        weights = np.zeros(_CELL_NODES[space.degree])
        for point, w in zip(rule.points, rule.weights):
            weights += w * shape_values(space.degree, point[None, :])[0]
        # (C, nloc, vd) integrals of f_k * N_a
        local = mesh.cell_areas[:, None, None] * weights[None, :, None] * f[:, None, :]
        np.add.at(P, space.dof_map.ravel(), local.ravel())
    for tag, value in (tractions or {}).items():
        if tag not in mesh.tags:
            raise SpaceError(f"traction refers to unknown boundary tag {tag!r}")
        facets = mesh.tagged_facets(tag)
        t = _as_cell_array(value, len(facets), vd)
        rule = gauss_segment_rule(2)
        for point, w in zip(rule.points, rule.weights):
            trace = facet_trace(space, facets, float(point[1]), 0)
            scaled = (w * mesh.facet_lengths[facets])[:, None] * t
            P += trace.T @ scaled.ravel()
    return P


class DirichletBC(NamedTuple):
    """Prescribed values of selected field components on a tagged boundary."""

    tag: str
    components: tuple[int, ...]
    values: tuple[float, ...]


class DirichletData(NamedTuple):
    dofs: np.ndarray
    values: np.ndarray


def boundary_local_nodes(space: FunctionSpace, cell: int, facet: int) -> list[int]:
    """Local nodes of ``cell`` whose support lies on ``facet``."""
    k = int(np.flatnonzero(space.mesh.cell_facets[cell] == facet)[0])
    nodes = list(_EDGE_VERTICES[k])
    if space.degree == 2:
        nodes.append(3 + k)
    elif space.degree == 0:
        nodes = []
    return nodes


def apply_dirichlet(space: FunctionSpace, bcs: Iterable[DirichletBC]) -> DirichletData:
    """Collect the DOFs fixed by ``bcs`` and their values.

    Raises:
        FormulationError: For unknown tags, bad components or conflicting
            values on a shared DOF.
    """
    _cell_space(space)
    mesh = space.mesh
    vd = space.value_dim
    fixed: dict[int, float] = {}
    for bc in bcs:
        if bc.tag not in mesh.tags:
            raise FormulationError(f"boundary condition refers to unknown tag {bc.tag!r}")
        if len(bc.components) != len(bc.values):
            raise FormulationError(f"bc on {bc.tag!r}: components and values differ in length")
        for comp, value in zip(bc.components, bc.values):
            if not 0 <= comp < vd:
                raise FormulationError(
                    f"bc on {bc.tag!r}: component {comp} outside 0..{vd - 1}"
                )
            for facet in mesh.tagged_facets(bc.tag):
                cell = int(mesh.facet_cells[facet, 0])
                for local in boundary_local_nodes(space, cell, int(facet)):
                    dof = int(space.dof_map[cell, local * vd + comp])
                    previous = fixed.get(dof)
                    if previous is not None and not np.isclose(previous, value, rtol=1e-12, atol=1e-14):
                        raise FormulationError(
                            f"conflicting Dirichlet values {previous} and {value} at DOF {dof}"
                        )
                    fixed[dof] = float(value)
    dofs = np.array(sorted(fixed), dtype=np.int64)
    return DirichletData(dofs, np.array([fixed[d] for d in dofs], dtype=float))


def elimination_map(dof_count: int, data: DirichletData) -> tuple[sps.csr_matrix, np.ndarray]:
    """Return (E, u0) with u = E @ u_free + u0 over the non-fixed DOFs."""
    free = np.setdiff1d(np.arange(dof_count), data.dofs)
    E = sps.csr_matrix(
        (np.ones(len(free)), (free, np.arange(len(free)))), shape=(dof_count, len(free))
    )
    u0 = np.zeros(dof_count)
    u0[data.dofs] = data.values
    return E, u0


def nodal_average(mesh: Mesh, cell_node_values: np.ndarray) -> np.ndarray:
    """Average per-cell vertex values (C, 3, k) or cell values (C, k) onto mesh nodes."""
    values = np.asarray(cell_node_values, dtype=float)
    if values.ndim == 2:
        values = np.repeat(values[:, None, :], 3, axis=1)
    k = values.shape[2]
    sums = np.zeros((mesh.num_nodes, k))
    counts = np.zeros(mesh.num_nodes)
    np.add.at(sums, mesh.cells.ravel(), values.reshape(-1, k))
    np.add.at(counts, mesh.cells.ravel(), 1.0)
    return sums / np.maximum(counts, 1.0)[:, None]


def interpolate(space: FunctionSpace, function) -> np.ndarray:
    """Nodal interpolation of ``function(x, y) -> value_dim values`` into ``space``."""
    coords = space.dof_coordinates[:: space.value_dim]
    values = np.array([np.atleast_1d(function(x, y)) for x, y in coords], dtype=float)
    return values.reshape(-1)
