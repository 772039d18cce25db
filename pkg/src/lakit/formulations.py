"""Limit-analysis formulations lowered to conic programs.

Each builder returns an immutable :class:`~lakit.program.ConicProgram`
whose ``metadata`` records the formulation kind and how finite-element
fields are recovered from the program blocks. :func:`extract_fields` maps a
solver result back to a :class:`Solution`.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sps

from .cones import ConeProduct, ConicFunction, Free
from .criteria import Criterion, indicator, pairing, support_jump, support_strain
from .errors import FormulationError
from .fem import (
    DirichletBC,
    FunctionSpace,
    QuadratureRule,
    apply_dirichlet,
    assemble_load_functional,
    build_space,
    cell_operator,
    centroid_rule,
    divergence_operator,
    elimination_map,
    facet_endpoint_rule,
    facet_jumps,
    facet_trace,
    frame_rotation,
    nodal_average,
    traction_operator,
    vertex_rule,
)
from .ipm import (
    Recovery,
    SolverResult,
    SolverSettings,
    SolveStatus,
    solve,
    to_standard_form,
)
from .mesh import Mesh
from .program import ConicProgram, FunctionTerm, ProgramBuilder, VariableBlock

logger = logging.getLogger(__name__)

Material = Criterion | Sequence[Criterion]

MIXED_DEGREES: tuple[tuple[int, int], ...] = ((1, 0), (2, 1))

# Simpson weights for quadratic jumps along a facet
_SIMPSON = QuadratureRule(
    np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]), np.array([1.0, 4.0, 1.0]) / 6.0
)


class Inclusion(NamedTuple):
    """A circular region with its own strength criterion."""

    center: tuple[float, float]
    radius: float
    criterion: Criterion


def assign_inclusions(
    mesh: Mesh, base: Criterion, inclusions: Iterable[Inclusion]
) -> list[Criterion]:
    """Return one criterion per cell; cells whose centroid lies in an inclusion take its criterion.

    Later inclusions win where inclusions overlap.
    """
    criteria = [base] * mesh.num_cells
    centroids = mesh.cell_centroids
    for inclusion in inclusions:
        if not inclusion.radius > 0:
            raise FormulationError(f"inclusion radius must be > 0, got {inclusion.radius}")
        distance = np.hypot(*(centroids - np.asarray(inclusion.center, dtype=float)).T)
        for cell in np.flatnonzero(distance <= inclusion.radius):
            criteria[cell] = inclusion.criterion
    return criteria


def cell_criteria(mesh: Mesh, material: Material) -> list[Criterion]:
    """Expand a single criterion or a per-cell sequence to one criterion per cell."""
    if isinstance(material, Criterion):
        return [material] * mesh.num_cells
    criteria = list(material)
    if len(criteria) != mesh.num_cells:
        raise FormulationError(
            f"got {len(criteria)} criteria for a mesh with {mesh.num_cells} cells"
        )
    return criteria


def _require_kind(criteria: Sequence[Criterion], *, plate: bool, formulation: str) -> None:
    for criterion in criteria:
        if criterion.is_plate != plate:
            wanted = "a thick-plate" if plate else "a continuum"
            raise FormulationError(
                f"{formulation} needs {wanted} criterion, got {criterion.name}"
            )


@dataclass(frozen=True, eq=False)
class LoadingSpec:
    """Driving loads (multiplied by the load factor) and fixed loads.

    ``body_force`` is one vector per unit volume, either uniform or one per
    cell; ``tractions`` maps boundary tags to a constant vector per unit
    length. Vectors have the width of the loaded field (2 for continua, 1 for
    the transverse pressure on a plate).
    """

    body_force: np.ndarray | None = None
    tractions: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    fixed_body_force: np.ndarray | None = None
    fixed_tractions: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("body_force", "fixed_body_force"):
            value = getattr(self, name)
            if value is not None:
                array = np.atleast_1d(np.asarray(value, dtype=float))
                if not np.all(np.isfinite(array)):
                    raise FormulationError(f"{name} must be finite")
                object.__setattr__(self, name, array)
        for name in ("tractions", "fixed_tractions"):
            converted = {}
            for tag, value in getattr(self, name).items():
                vector = tuple(float(v) for v in np.atleast_1d(value))
                if not all(np.isfinite(vector)):
                    raise FormulationError(f"{name}[{tag!r}] must be finite")
                converted[tag] = vector
            object.__setattr__(self, name, converted)

    @property
    def has_driving_load(self) -> bool:
        return _nonzero(self.body_force, self.tractions)

    @property
    def has_fixed_load(self) -> bool:
        return _nonzero(self.fixed_body_force, self.fixed_tractions)

    def driving_functional(self, space: FunctionSpace) -> np.ndarray:
        return assemble_load_functional(space, self.body_force, self.tractions or None)

    def fixed_functional(self, space: FunctionSpace) -> np.ndarray:
        return assemble_load_functional(
            space, self.fixed_body_force, self.fixed_tractions or None
        )

    def body_force_per_cell(self, mesh: Mesh, width: int) -> np.ndarray:
        if self.body_force is None:
            return np.zeros((mesh.num_cells, width))
        force = self.body_force
        if force.size == width:
            return np.tile(force.reshape(1, width), (mesh.num_cells, 1))
        if force.shape != (mesh.num_cells, width):
            raise FormulationError(
                f"body_force has shape {force.shape}, expected ({width},) "
                f"or ({mesh.num_cells}, {width})"
            )
        return force


def _nonzero(body: np.ndarray | None, tractions: Mapping[str, tuple[float, ...]]) -> bool:
    if body is not None and np.any(body):
        return True
    return any(any(v != 0.0 for v in value) for value in tractions.values())


class FieldEmbedding(NamedTuple):
    """Full DOF vector of a field as ``E @ free + offset``."""

    space: FunctionSpace
    E: sps.csr_matrix
    offset: np.ndarray

    @classmethod
    def identity(cls, space: FunctionSpace) -> FieldEmbedding:
        n = space.dof_count
        return cls(space, sps.identity(n, format="csr"), np.zeros(n))

    @classmethod
    def eliminating(cls, space: FunctionSpace, bcs: Iterable[DirichletBC]) -> FieldEmbedding:
        E, offset = elimination_map(space.dof_count, apply_dirichlet(space, bcs))
        return cls(space, E, offset)

    @property
    def free_count(self) -> int:
        return self.E.shape[1]

    def expand(self, free: np.ndarray | None) -> np.ndarray:
        if free is None or self.free_count == 0:
            return self.offset.copy()
        return self.E @ np.asarray(free, dtype=float) + self.offset


@dataclass(frozen=True, eq=False)
class Solution:
    """Solver outcome mapped back to the formulation.

    ``fields`` holds full DOF vectors per finite-element field (and the raw
    values of scalar blocks); ``duals`` holds multipliers per named constraint
    group; ``primal`` is the program-ordered variable vector.
    """

    status: SolveStatus
    load_factor: float
    objective: float
    fields: Mapping[str, np.ndarray]
    duals: Mapping[str, np.ndarray]
    primal: np.ndarray
    iterations: int
    primal_res: float
    dual_res: float
    gap: float

    @property
    def is_optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


# -- shared assembly helpers


class _Fields:
    """Program blocks of the finite-element fields of one formulation."""

    def __init__(self, builder: ProgramBuilder) -> None:
        self.builder = builder
        self.embeddings: dict[str, FieldEmbedding] = {}
        self.blocks: dict[str, VariableBlock] = {}
        builder.metadata["fields"] = self.embeddings

    def add(self, name: str, embedding: FieldEmbedding, role: str) -> None:
        self.embeddings[name] = embedding
        if embedding.free_count:
            self.blocks[name] = self.builder.add_block(
                name,
                ConeProduct.of(Free(embedding.free_count)),
                role=role,
                space=embedding.space,
            )
        else:
            logger.warning("every DOF of field %r is prescribed", name)

    def lower(
        self, operators: Mapping[str, sps.spmatrix], rows: int
    ) -> tuple[dict[VariableBlock, sps.csr_matrix], np.ndarray]:
        """Turn full-space operators into block input maps plus a constant shift."""
        inputs: dict[VariableBlock, sps.csr_matrix] = {}
        shift = np.zeros(rows)
        for name, operator in operators.items():
            embedding = self.embeddings[name]
            operator = sps.csr_matrix(operator)
            shift += operator @ embedding.offset
            if name in self.blocks:
                inputs[self.blocks[name]] = sps.csr_matrix(operator @ embedding.E)
        return inputs, shift


def _partition(criteria: Sequence[Criterion]) -> list[tuple[Criterion, np.ndarray]]:
    """Group instance indices by criterion, in order of first appearance."""
    groups: list[tuple[Criterion, list[int]]] = []
    for index, criterion in enumerate(criteria):
        for existing, members in groups:
            if existing == criterion:
                members.append(index)
                break
        else:
            groups.append((criterion, [index]))
    return [(criterion, np.asarray(members)) for criterion, members in groups]


def _add_instances(
    builder: ProgramBuilder,
    name: str,
    make: Callable[[Criterion], ConicFunction],
    criteria: Sequence[Criterion],
    inputs: Mapping[VariableBlock, sps.csr_matrix],
    shift: np.ndarray,
    weights: np.ndarray,
    *,
    role: str,
    entity: str,
    ids: np.ndarray,
) -> None:
    """Add one conic function per instance, batched by criterion."""
    for k, (criterion, members) in enumerate(_partition(criteria)):
        function = make(criterion)
        n = function.n
        rows = (members[:, None] * n + np.arange(n)).ravel()
        builder.add_function(
            f"{name}/{k}",
            function,
            {block: matrix[rows] for block, matrix in inputs.items()},
            count=len(members),
            shift=shift[rows],
            weights=weights[members],
            role=role,
            meta={"criterion": criterion, "entity": entity, "ids": ids[members]},
        )


def _interleave(
    parts: Sequence[tuple[sps.spmatrix | None, int]], count: int, columns: int
) -> sps.csr_matrix:
    """Merge per-component operators into instance-major rows.

    Part ``k`` has ``count * width_k`` rows ordered (instance, component);
    the result has ``count * sum(widths)`` rows. ``None`` parts are zero.
    """
    total = sum(width for _, width in parts)
    data, rows, cols = [], [], []
    offset = 0
    for matrix, width in parts:
        if matrix is not None:
            coo = sps.coo_matrix(matrix)
            instance, component = np.divmod(coo.row, width)
            rows.append(instance * total + offset + component)
            cols.append(coo.col)
            data.append(coo.data)
        offset += width
    if not data:
        return sps.csr_matrix((count * total, columns))
    return sps.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(count * total, columns),
    )


def _cell_instances(mesh: Mesh, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Cell ids and weights of (cell, point) instances in cell_operator order."""
    q = len(rule.weights)
    ids = np.repeat(np.arange(mesh.num_cells), q)
    weights = np.repeat(mesh.cell_areas, q) * np.tile(rule.weights, mesh.num_cells)
    return ids, weights


def _facet_rule(degree: int) -> QuadratureRule:
    return facet_endpoint_rule() if degree <= 1 else _SIMPSON


def prescribed_boundary(
    mesh: Mesh, bcs: Iterable[DirichletBC], width: int, first: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boundary facets with prescribed components ``first .. first + width - 1``.

    Returns the facet indices, a (k, width) 0/1 mask of prescribed components
    and the (k, width) prescribed values.

    Raises:
        FormulationError: For unknown tags or conflicting values.
    """
    masks: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    for bc in bcs:
        if bc.tag not in mesh.tags:
            raise FormulationError(f"boundary condition refers to unknown tag {bc.tag!r}")
        for component, value in zip(bc.components, bc.values):
            local = component - first
            if not 0 <= local < width:
                continue
            for facet in mesh.tagged_facets(bc.tag):
                mask = masks.setdefault(int(facet), np.zeros(width))
                prescribed = values.setdefault(int(facet), np.zeros(width))
                if mask[local] and not np.isclose(prescribed[local], value):
                    raise FormulationError(
                        f"conflicting values {prescribed[local]} and {value} "
                        f"for component {component} on facet {facet}"
                    )
                mask[local] = 1.0
                prescribed[local] = value
    facets = np.array(sorted(masks), dtype=np.int64)
    return (
        facets,
        np.array([masks[f] for f in facets]).reshape(-1, width),
        np.array([values[f] for f in facets]).reshape(-1, width),
    )


def _check_components(bcs: Sequence[DirichletBC], count: int, formulation: str) -> None:
    for bc in bcs:
        if len(bc.components) != len(bc.values):
            raise FormulationError(f"bc on {bc.tag!r}: components and values differ in length")
        for component in bc.components:
            if not 0 <= component < count:
                raise FormulationError(
                    f"{formulation}: bc on {bc.tag!r} has component {component}, "
                    f"expected 0..{count - 1}"
                )


def _boundary_jump(
    space: FunctionSpace, facets: np.ndarray, masks: np.ndarray, values: np.ndarray, s: float
) -> tuple[sps.csr_matrix, np.ndarray]:
    """Facet-frame jump ``M (u_bar - u)`` on boundary facets; unprescribed components do not jump."""
    trace = facet_trace(space, facets, s, 0)
    M = sps.diags(masks.ravel())
    R = frame_rotation(space.mesh, facets)
    return sps.csr_matrix(-(R @ M @ trace)), R @ (masks * values).ravel()


def _add_normalization(
    builder: ProgramBuilder, fields: _Fields, functionals: Mapping[str, np.ndarray]
) -> None:
    terms: dict[VariableBlock, np.ndarray] = {}
    rhs = 1.0
    for name, P in functionals.items():
        embedding = fields.embeddings[name]
        rhs -= float(P @ embedding.offset)
        if name in fields.blocks:
            terms[fields.blocks[name]] = (embedding.E.T @ P)[None, :]
    builder.add_rows("normalization", terms, [rhs])


def _add_fixed_work(
    builder: ProgramBuilder, fields: _Fields, name: str, P0: np.ndarray
) -> None:
    """Add ``-P0 . u`` to the objective."""
    embedding = fields.embeddings[name]
    builder.add_objective_constant(-float(P0 @ embedding.offset))
    if name in fields.blocks:
        builder.add_objective(fields.blocks[name], -(embedding.E.T @ P0))


def _add_facet_jumps(
    builder: ProgramBuilder,
    fields: _Fields,
    name: str,
    criteria: Sequence[Criterion],
    bcs: Sequence[DirichletBC],
    *,
    make: Callable[[Criterion], ConicFunction],
    pad: int = 0,
    first: int = 0,
) -> None:
    """Jump dissipation of a discontinuous vector field on interior and prescribed boundary facets.

    ``pad`` zero components are appended to every facet-frame jump (the
    deflection jump of a plate).
    """
    space = fields.embeddings[name].space
    mesh = space.mesh
    rule = _facet_rule(space.degree)
    width = 2 + pad
    columns = space.dof_count
    owner = mesh.facet_cells[:, 0]

    interior = mesh.interior_facets
    operators, ids, weights = [], [], []
    for point, w in zip(rule.points, rule.weights):
        if len(interior):
            jump = facet_jumps(space, interior, float(point[1]))
            operators.append(_interleave([(jump, 2), (None, pad)], len(interior), columns))
            ids.append(interior)
            weights.append(w * mesh.facet_lengths[interior])
    if operators:
        inputs, shift = fields.lower({name: sps.vstack(operators)}, sum(o.shape[0] for o in operators))
        ids_all = np.concatenate(ids)
        _add_instances(
            builder,
            f"{name}_jump",
            make,
            [criteria[owner[f]] for f in ids_all],
            inputs,
            shift,
            np.concatenate(weights),
            role="support-facet",
            entity="facet",
            ids=ids_all,
        )

    facets, masks, values = prescribed_boundary(mesh, bcs, 2, first)
    if not len(facets):
        return
    operators, shifts, ids, weights = [], [], [], []
    for point, w in zip(rule.points, rule.weights):
        jump, constant = _boundary_jump(space, facets, masks, values, float(point[1]))
        operators.append(_interleave([(jump, 2), (None, pad)], len(facets), columns))
        padded = np.zeros((len(facets), width))
        padded[:, :2] = constant.reshape(-1, 2)
        shifts.append(padded.ravel())
        ids.append(facets)
        weights.append(w * mesh.facet_lengths[facets])
    stacked = sps.vstack(operators)
    inputs, shift = fields.lower({name: stacked}, stacked.shape[0])
    ids_all = np.concatenate(ids)
    _add_instances(
        builder,
        f"{name}_boundary_jump",
        make,
        [criteria[owner[f]] for f in ids_all],
        inputs,
        shift + np.concatenate(shifts),
        np.concatenate(weights),
        role="support-facet",
        entity="facet",
        ids=ids_all,
    )


# -- builders


def build_kinematic_ub(
    mesh: Mesh,
    space_deg: int,
    criterion: Material,
    loading: LoadingSpec,
    bcs: Iterable[DirichletBC] = (),
    discontinuous: bool = False,
) -> ConicProgram:
    """Kinematic (upper-bound) program: min dissipation - P0(u) s.t. P(u) = 1.

    Continuous velocities eliminate Dirichlet DOFs; discontinuous ones keep
    every DOF and dissipate on facets, including prescribed boundary facets
    where the jump is taken against the prescribed value.

    Raises:
        FormulationError: For unsupported degrees, plate criteria, bad
            boundary conditions or a zero driving load.
    """
    if space_deg not in (1, 2):
        raise FormulationError(f"kinematic velocity degree must be 1 or 2, got {space_deg}")
    criteria = cell_criteria(mesh, criterion)
    _require_kind(criteria, plate=False, formulation="kinematic formulation")
    if not loading.has_driving_load:
        raise FormulationError("kinematic formulation needs a nonzero driving load")
    bcs = tuple(bcs)
    _check_components(bcs, 2, "kinematic formulation")

    family = "LagrangeDiscontinuous" if discontinuous else "LagrangeContinuous"
    space = build_space(mesh, family, space_deg, 2)
    builder = ProgramBuilder()
    builder.metadata.update(
        formulation="kinematic", mesh=mesh, criteria=criteria, discontinuous=discontinuous
    )
    fields = _Fields(builder)
    if discontinuous:
        prescribed_boundary(mesh, bcs, 2)
        fields.add("u", FieldEmbedding.identity(space), "velocity")
    else:
        fields.add("u", FieldEmbedding.eliminating(space, bcs), "velocity")

    rule = vertex_rule() if space_deg == 2 else centroid_rule()
    strain = cell_operator(space, rule, "strain")
    inputs, shift = fields.lower({"u": strain}, strain.shape[0])
    ids, weights = _cell_instances(mesh, rule)
    _add_instances(
        builder,
        "u_support",
        support_strain,
        [criteria[c] for c in ids],
        inputs,
        shift,
        weights,
        role="support-cell",
        entity="cell",
        ids=ids,
    )
    if discontinuous:
        _add_facet_jumps(builder, fields, "u", criteria, bcs, make=support_jump)

    _add_normalization(builder, fields, {"u": loading.driving_functional(space)})
    if loading.has_fixed_load:
        _add_fixed_work(builder, fields, "u", loading.fixed_functional(space))
    return builder.build()


def build_static_lb(
    mesh: Mesh,
    criterion: Material,
    loading: LoadingSpec,
    bcs: Iterable[DirichletBC] = (),
) -> ConicProgram:
    """Static (lower-bound) program with piecewise-linear discontinuous stresses.

    Every boundary facet carries the traction condition ``sigma.n = lambda t``
    (zero where untagged by the loading) in the Cartesian components that
    ``bcs`` leave free; prescribed velocity components leave the matching
    traction component unconstrained.

    Raises:
        FormulationError: For plate criteria, fixed loads, traction tags
            missing from the mesh or bad boundary conditions.
    """
    criteria = cell_criteria(mesh, criterion)
    _require_kind(criteria, plate=False, formulation="static formulation")
    if loading.has_fixed_load:
        raise FormulationError("static formulation supports driving loads only")
    missing = sorted(set(loading.tractions) - mesh.tags)
    if missing:
        raise FormulationError(
            f"traction tags {', '.join(missing)} are not on the mesh boundary"
        )
    for tag, value in loading.tractions.items():
        if len(value) != 2:
            raise FormulationError(f"traction on {tag!r} must be a 2-vector, got {value}")
    bcs = tuple(bcs)
    _check_components(bcs, 2, "static formulation")

    sigma_space = build_space(mesh, "LagrangeDiscontinuous", 1, 3)
    builder = ProgramBuilder()
    builder.metadata.update(formulation="static", mesh=mesh, criteria=criteria)
    builder.metadata["fields"] = {}
    lam = builder.add_block(
        "lambda",
        ConeProduct.of(Free(1)),
        role="load_factor",
        space=build_space(mesh, "GlobalScalar", 0, 1),
    )
    sigma = builder.add_block(
        "sigma", ConeProduct.of(Free(sigma_space.dof_count)), role="stress", space=sigma_space
    )
    builder.add_objective(lam, [-1.0])

    # degree-1 DOFs are the vertex values, so the strength check reads them directly
    ids, weights = _cell_instances(mesh, vertex_rule())
    _add_instances(
        builder,
        "sigma_strength",
        indicator,
        [criteria[c] for c in ids],
        {sigma: sps.identity(sigma_space.dof_count, format="csr")},
        np.zeros(sigma_space.dof_count),
        weights,
        role="strength",
        entity="cell",
        ids=ids,
    )

    force = loading.body_force_per_cell(mesh, 2)
    builder.add_rows(
        "equilibrium",
        {
            sigma: divergence_operator(sigma_space),
            lam: (mesh.cell_areas[:, None] * force).reshape(-1, 1),
        },
        np.zeros(2 * mesh.num_cells),
        meta={"ids": np.arange(mesh.num_cells)},
    )

    interior = mesh.interior_facets
    if len(interior):
        jumps = [
            traction_operator(sigma_space, interior, s, 1)
            - traction_operator(sigma_space, interior, s, 0)
            for s in (0.0, 1.0)
        ]
        builder.add_rows(
            "continuity",
            {sigma: sps.vstack(jumps)},
            np.zeros(4 * len(interior)),
            meta={"ids": np.tile(interior, 2)},
        )

    boundary = mesh.boundary_facets
    fixed, masks, _ = prescribed_boundary(mesh, bcs, 2)
    free = np.ones((len(boundary), 2), dtype=bool)
    position = {int(f): i for i, f in enumerate(boundary)}
    for facet, mask in zip(fixed, masks):
        free[position[int(facet)]] = mask == 0
    load = np.array(
        [loading.tractions.get(mesh.boundary_tags.get(int(f), ""), (0.0, 0.0)) for f in boundary]
    ).reshape(-1, 2)
    keep = free.ravel()
    if np.any(keep):
        operators = [traction_operator(sigma_space, boundary, s, 0)[keep] for s in (0.0, 1.0)]
        column = -np.tile(load.ravel()[keep], 2)
        builder.add_rows(
            "boundary_traction",
            {sigma: sps.vstack(operators), lam: column.reshape(-1, 1)},
            np.zeros(len(column)),
            meta={"ids": np.tile(np.repeat(boundary, 2)[keep], 2)},
        )
    return builder.build()


def build_mixed(
    mesh: Mesh,
    u_deg: int,
    sig_deg: int,
    criterion: Material,
    loading: LoadingSpec,
    bcs: Iterable[DirichletBC] = (),
    quad: str = "vertex",
) -> ConicProgram:
    """Mixed program: max lambda s.t. int sigma : grad_s u = lambda P(u) + P0(u) for all u.

    The strength condition is enforced at the stress nodes (cell centroids
    for degree 0, vertices for degree 1), which is the vertex rule. The
    virtual work uses the same points, so the program is the dual of
    :func:`build_kinematic_ub` with degree ``u_deg``.

    Raises:
        FormulationError: For degree pairs other than (1, 0) and (2, 1), other
            quadrature choices, plate criteria or nonzero prescribed velocities.
    """
    if (u_deg, sig_deg) not in MIXED_DEGREES:
        raise FormulationError(
            f"unsupported mixed degree pair (u={u_deg}, sigma={sig_deg}); "
            "allowed pairs: (1, 0), (2, 1)"
        )
    if quad != "vertex":
        raise FormulationError(f"mixed formulation supports the vertex rule only, got {quad!r}")
    criteria = cell_criteria(mesh, criterion)
    _require_kind(criteria, plate=False, formulation="mixed formulation")
    bcs = tuple(bcs)
    _check_components(bcs, 2, "mixed formulation")
    if any(value != 0.0 for bc in bcs for value in bc.values):
        raise FormulationError("mixed formulation needs homogeneous Dirichlet values")

    u_space = build_space(mesh, "LagrangeContinuous", u_deg, 2)
    sigma_space = build_space(mesh, "LagrangeDiscontinuous", sig_deg, 3)
    velocity = FieldEmbedding.eliminating(u_space, bcs)

    builder = ProgramBuilder()
    builder.metadata.update(formulation="mixed", mesh=mesh, criteria=criteria)
    builder.metadata["fields"] = {"u": velocity}
    lam = builder.add_block(
        "lambda",
        ConeProduct.of(Free(1)),
        role="load_factor",
        space=build_space(mesh, "GlobalScalar", 0, 1),
    )
    sigma = builder.add_block(
        "sigma", ConeProduct.of(Free(sigma_space.dof_count)), role="stress", space=sigma_space
    )
    builder.add_objective(lam, [-1.0])

    nodes = 1 if sig_deg == 0 else 3
    ids = np.repeat(np.arange(mesh.num_cells), nodes)
    _add_instances(
        builder,
        "sigma_strength",
        indicator,
        [criteria[c] for c in ids],
        {sigma: sps.identity(sigma_space.dof_count, format="csr")},
        np.zeros(sigma_space.dof_count),
        np.repeat(mesh.cell_areas / nodes, nodes),
        role="strength",
        entity="cell",
        ids=ids,
    )

    # work is integrated at the stress nodes, where the strength condition holds
    rule = centroid_rule() if sig_deg == 0 else vertex_rule()
    strain = cell_operator(u_space, rule, "strain")
    values = cell_operator(sigma_space, rule, "value")
    _, point_weights = _cell_instances(mesh, rule)
    # pairing is identical for every continuum criterion
    W = sps.diags(np.outer(point_weights, pairing(criteria[0])).ravel())
    work = sps.csr_matrix(velocity.E.T @ (strain.T @ (W @ values)))
    P = velocity.E.T @ loading.driving_functional(u_space)
    P0 = (
        velocity.E.T @ loading.fixed_functional(u_space)
        if loading.has_fixed_load
        else np.zeros(velocity.free_count)
    )
    builder.add_rows(
        "virtual_work", {sigma: work, lam: -P.reshape(-1, 1)}, P0
    )
    return builder.build()


def periodic_map(space: FunctionSpace, tol: float = 1e-9) -> sps.csr_matrix:
    """Identify DOFs on opposite sides of a rectangular unit cell.

    Right-edge nodes map to the left-edge node at the same height and
    top-edge nodes to the bottom-edge node at the same abscissa; corners end
    up on a single master. Returns Q with ``u = Q @ u_master``.

    Raises:
        FormulationError: If a boundary node has no periodic partner.
    """
    if space.family != "LagrangeContinuous":
        raise FormulationError("periodicity needs a continuous space")
    vd = space.value_dim
    coords = space.dof_coordinates[::vd]
    lo = space.mesh.nodes.min(axis=0)
    hi = space.mesh.nodes.max(axis=0)
    scale = tol * max(float((hi - lo).max()), 1.0)
    parent = np.arange(len(coords))

    for axis in (0, 1):
        other = 1 - axis
        slaves = np.flatnonzero(np.abs(coords[:, axis] - hi[axis]) <= scale)
        masters = np.flatnonzero(np.abs(coords[:, axis] - lo[axis]) <= scale)
        for node in slaves:
            if axis == 1 and parent[node] != node:
                continue
            distance = np.abs(coords[masters, other] - coords[node, other])
            if not len(masters) or distance.min() > scale:
                x, y = coords[node]
                raise FormulationError(
                    f"periodic node at ({x:.6g}, {y:.6g}) has no partner on the opposite edge"
                )
            parent[node] = masters[np.argmin(distance)]
    for _ in range(3):
        parent = parent[parent]

    roots, column = np.unique(parent, return_inverse=True)
    Q = sps.csr_matrix(
        (np.ones(len(parent)), (np.arange(len(parent)), column)),
        shape=(len(parent), len(roots)),
    )
    return sps.csr_matrix(sps.kron(Q, sps.identity(vd)))


def build_homogenization_kin(
    unit_cell_mesh: Mesh,
    criterion: Material,
    sigma0: Sequence[float],
    degree: int = 2,
) -> ConicProgram:
    """Kinematic strength homogenization along the macroscopic stress direction ``sigma0``.

    Minimizes ``int pi(D + grad_s u)`` over the macroscopic strain rate ``D``
    and periodic fluctuations ``u`` subject to ``|A| sigma0 : D = 1``; the
    optimum ``lambda`` puts ``lambda * sigma0`` on the boundary of the
    homogenized strength domain.

    Raises:
        FormulationError: For a zero or malformed direction, plate criteria,
            unsupported degrees or unmatched periodic nodes.
    """
    mesh = unit_cell_mesh
    if degree not in (1, 2):
        raise FormulationError(f"fluctuation degree must be 1 or 2, got {degree}")
    direction = np.asarray(sigma0, dtype=float).reshape(-1)
    if direction.shape != (3,) or not np.all(np.isfinite(direction)) or not np.any(direction):
        raise FormulationError(f"sigma0 must be a finite nonzero 3-vector, got {sigma0}")
    criteria = cell_criteria(mesh, criterion)
    _require_kind(criteria, plate=False, formulation="homogenization")

    space = build_space(mesh, "LagrangeContinuous", degree, 2)
    # the first master node is pinned to remove rigid translations
    Q = periodic_map(space)[:, 2:]
    builder = ProgramBuilder()
    builder.metadata.update(
        formulation="homogenization", mesh=mesh, criteria=criteria, sigma0=direction
    )
    fields = _Fields(builder)
    D = builder.add_block("D", ConeProduct.of(Free(3)), role="macro_strain")
    fields.add("u", FieldEmbedding(space, sps.csr_matrix(Q), np.zeros(space.dof_count)), "fluctuation")

    rule = vertex_rule() if degree == 2 else centroid_rule()
    strain = cell_operator(space, rule, "strain")
    inputs, shift = fields.lower({"u": strain}, strain.shape[0])
    ids, weights = _cell_instances(mesh, rule)
    inputs[D] = sps.csr_matrix(sps.kron(np.ones((len(ids), 1)), sps.identity(3)))
    _add_instances(
        builder,
        "u_support",
        support_strain,
        [criteria[c] for c in ids],
        inputs,
        shift,
        weights,
        role="support-cell",
        entity="cell",
        ids=ids,
    )
    builder.add_rows(
        "normalization",
        {D: (mesh.area * pairing(criteria[0]) * direction)[None, :]},
        [1.0],
    )
    return builder.build()


def split_plate_bcs(bcs: Iterable[DirichletBC]) -> tuple[list[DirichletBC], list[DirichletBC]]:
    """Split plate conditions on (w, theta_x, theta_y) into deflection and rotation parts."""
    deflection, rotation = [], []
    for bc in bcs:
        w = [(c, v) for c, v in zip(bc.components, bc.values) if c == 0]
        theta = [(c, v) for c, v in zip(bc.components, bc.values) if c in (1, 2)]
        if w:
            deflection.append(DirichletBC(bc.tag, (0,), (w[0][1],)))
        if theta:
            rotation.append(
                DirichletBC(bc.tag, tuple(c for c, _ in theta), tuple(v for _, v in theta))
            )
    return deflection, rotation


def build_thick_plate_kin(
    mesh: Mesh,
    criterion: Material,
    loading: LoadingSpec,
    bcs: Iterable[DirichletBC] = (),
) -> ConicProgram:
    """Kinematic program for thick plates with P2 deflection and discontinuous P1 rotations.

    Generalized strains ``(chi, gamma) = (grad_s theta, grad w - theta)`` are
    checked at the cell vertices; rotation jumps dissipate on interior facets
    and against prescribed rotations on the boundary. ``loading.body_force``
    is the transverse pressure (width 1).

    Raises:
        FormulationError: For continuum criteria, a zero pressure or bad
            boundary conditions.
    """
    criteria = cell_criteria(mesh, criterion)
    _require_kind(criteria, plate=True, formulation="thick-plate formulation")
    if not loading.has_driving_load:
        raise FormulationError("thick-plate formulation needs a nonzero pressure")
    bcs = tuple(bcs)
    _check_components(bcs, 3, "thick-plate formulation")
    deflection_bcs, rotation_bcs = split_plate_bcs(bcs)

    w_space = build_space(mesh, "LagrangeContinuous", 2, 1)
    theta_space = build_space(mesh, "LagrangeDiscontinuous", 1, 2)
    builder = ProgramBuilder()
    builder.metadata.update(formulation="thick-plate", mesh=mesh, criteria=criteria)
    fields = _Fields(builder)
    fields.add("w", FieldEmbedding.eliminating(w_space, deflection_bcs), "deflection")
    fields.add("theta", FieldEmbedding.identity(theta_space), "rotation")

    rule = vertex_rule()
    ids, weights = _cell_instances(mesh, rule)
    count = len(ids)
    curvature = cell_operator(theta_space, rule, "strain")
    slope = cell_operator(w_space, rule, "gradient")
    rotation = cell_operator(theta_space, rule, "value")
    operators = {
        "w": _interleave([(None, 3), (slope, 2)], count, w_space.dof_count),
        "theta": _interleave([(curvature, 3), (-rotation, 2)], count, theta_space.dof_count),
    }
    inputs, shift = fields.lower(operators, 5 * count)
    _add_instances(
        builder,
        "plate_support",
        support_strain,
        [criteria[c] for c in ids],
        inputs,
        shift,
        weights,
        role="support-cell",
        entity="cell",
        ids=ids,
    )
    # rotation components are 1, 2 in plate numbering
    _add_facet_jumps(
        builder, fields, "theta", criteria, rotation_bcs, make=support_jump, pad=1, first=1
    )

    _add_normalization(builder, fields, {"w": loading.driving_functional(w_space)})
    if loading.has_fixed_load:
        _add_fixed_work(builder, fields, "w", loading.fixed_functional(w_space))
    return builder.build()


# -- solving and recovery


def _load_factor(formulation: str, status: SolveStatus, objective: float) -> float:
    maximizing = formulation in ("static", "mixed")
    if status is SolveStatus.OPTIMAL:
        return -objective if maximizing else objective
    if maximizing and status is SolveStatus.DUAL_INFEASIBLE:
        return np.inf
    if not maximizing and status is SolveStatus.PRIMAL_INFEASIBLE:
        return np.inf
    if not maximizing and status is SolveStatus.DUAL_INFEASIBLE:
        return 0.0
    return np.nan


def pseudo_velocity(mesh: Mesh, equilibrium_duals: np.ndarray) -> np.ndarray:
    """Nodal P1 velocity averaged from the per-cell equilibrium multipliers."""
    cell_values = -np.asarray(equilibrium_duals, dtype=float).reshape(mesh.num_cells, 2)
    return nodal_average(mesh, cell_values)


def extract_fields(
    program: ConicProgram, result: SolverResult, recovery: Recovery
) -> Solution:
    """Map a solver result back to named fields, duals and the load factor."""
    x = recovery.primal(result.x)
    y = recovery.duals(result.y)
    blocks = program.split(x)
    duals = {group.name: y[group.rows] for group in program.groups}
    formulation = program.metadata.get("formulation", "")
    objective = float(program.objective @ x + program.objective_offset)
    fields: dict[str, np.ndarray] = {}
    for name, embedding in program.metadata.get("fields", {}).items():
        if formulation == "mixed" and name == "u":
            fields[name] = embedding.expand(duals.get("virtual_work"))
        else:
            fields[name] = embedding.expand(blocks.get(name))
    for block in program.blocks:
        if block.role in ("load_factor", "stress", "macro_strain"):
            fields[block.name] = blocks[block.name]
    if formulation == "static" and "equilibrium" in duals:
        fields["pseudo_velocity"] = pseudo_velocity(program.metadata["mesh"], duals["equilibrium"])
    return Solution(
        status=result.status,
        load_factor=_load_factor(formulation, result.status, objective),
        objective=objective,
        fields=fields,
        duals=duals,
        primal=x,
        iterations=result.iterations,
        primal_res=result.primal_res,
        dual_res=result.dual_res,
        gap=result.gap,
    )


def solve_program(program: ConicProgram, settings: SolverSettings | None = None) -> Solution:
    """Lower, solve and recover a formulation program."""
    sf, recovery = to_standard_form(program)
    result = solve(sf, settings)
    solution = extract_fields(program, result, recovery)
    logger.info(
        "%s program: status %s, load factor %.10g",
        program.metadata.get("formulation", "conic"),
        solution.status.value,
        solution.load_factor,
    )
    return solution


def instance_values(program: ConicProgram, term: FunctionTerm, x: np.ndarray) -> np.ndarray:
    """Weighted objective contribution of every instance of a function term at ``x``."""
    f = term.function
    inputs = term.input_values(program, x)
    aux = x[term.aux.columns].reshape(term.count, f.p)
    return term.weights * (inputs @ f.c_x + aux @ f.c_y)
