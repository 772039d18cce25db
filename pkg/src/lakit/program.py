"""Conic programs assembled block by block from linear rows and conic functions."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sps

from .cones import ConeProduct, ConicFunction
from .errors import ConeError


@dataclass(frozen=True, eq=False)
class VariableBlock:
    """A named slice of the program variables with its cone structure.

    ``role`` and ``space`` are recovery metadata used to map solver output
    back to finite-element fields.
    """

    name: str
    offset: int
    cones: ConeProduct
    role: str = ""
    space: Any = None

    @property
    def dim(self) -> int:
        return self.cones.total_dim

    @property
    def columns(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


@dataclass(frozen=True)
class ConstraintGroup:
    """A named range of program rows, kept for dual recovery."""

    name: str
    start: int
    stop: int
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def rows(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """min c.x + offset  s.t.  b_l <= A x <= b_u,  x in the block cones."""

    blocks: tuple[VariableBlock, ...]
    objective: np.ndarray
    objective_offset: float
    A: sps.csr_matrix
    b_l: np.ndarray
    b_u: np.ndarray
    groups: tuple[ConstraintGroup, ...]
    functions: Mapping[str, FunctionTerm] = field(default_factory=dict)
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def num_variables(self) -> int:
        return len(self.objective)

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def cones(self) -> ConeProduct:
        blocks = []
        for block in self.blocks:
            blocks.extend(block.cones.blocks)
        return ConeProduct(tuple(blocks))

    def block(self, name: str) -> VariableBlock:
        for block in self.blocks:
            if block.name == name:
                return block
        raise KeyError(name)

    def has_block(self, name: str) -> bool:
        return any(block.name == name for block in self.blocks)

    def group(self, name: str) -> ConstraintGroup:
        for group in self.groups:
            if group.name == name:
                return group
        raise KeyError(name)

    def has_group(self, name: str) -> bool:
        return any(group.name == name for group in self.groups)

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Split a program-ordered vector into per-block arrays."""
        return {block.name: np.asarray(x[block.columns]) for block in self.blocks}


@dataclass(frozen=True, eq=False)
class FunctionTerm:
    """Record of ``count`` instances of a conic function added to a program.

    Instance ``i`` reads its input from ``inputs @ x + shift`` (rows
    ``i*n .. (i+1)*n``) and is weighted by ``weights[i]`` in the objective.
    """

    function: ConicFunction
    aux: VariableBlock
    inputs: Mapping[str, sps.csr_matrix]
    shift: np.ndarray
    weights: np.ndarray
    group: ConstraintGroup

    @property
    def count(self) -> int:
        return len(self.weights)

    def input_values(self, program: ConicProgram, x: np.ndarray) -> np.ndarray:
        """Return the (count, n) inputs of every instance at program vector ``x``."""
        values = self.shift.copy()
        for name, matrix in self.inputs.items():
            values += matrix @ x[program.block(name).columns]
        return values.reshape(self.count, self.function.n)


class ProgramBuilder:
    """Accumulates blocks, objective terms and constraint rows into a ConicProgram."""

    def __init__(self) -> None:
        self._blocks: list[VariableBlock] = []
        self._objective: list[np.ndarray] = []
        self._offset = 0.0
        self._row_blocks: list[dict[str, sps.csr_matrix]] = []
        self._b_l: list[np.ndarray] = []
        self._b_u: list[np.ndarray] = []
        self._groups: list[ConstraintGroup] = []
        self._functions: dict[str, FunctionTerm] = {}
        self._num_rows = 0
        self.metadata: dict[str, Any] = {}

    @property
    def num_variables(self) -> int:
        return sum(block.dim for block in self._blocks)

    def add_block(
        self, name: str, cones: ConeProduct, *, role: str = "", space: Any = None
    ) -> VariableBlock:
        """Declare a new variable block after the existing ones."""
        if any(block.name == name for block in self._blocks):
            raise ConeError(f"duplicate variable block {name!r}")
        block = VariableBlock(
            name=name, offset=self.num_variables, cones=cones, role=role, space=space
        )
        self._blocks.append(block)
        self._objective.append(np.zeros(block.dim))
        return block

    def _index(self, block: VariableBlock | str) -> int:
        name = block if isinstance(block, str) else block.name
        for i, candidate in enumerate(self._blocks):
            if candidate.name == name:
                return i
        raise ConeError(f"unknown variable block {name!r}")

    def add_objective(
        self, block: VariableBlock | str, coefficients: Sequence[float] | np.ndarray
    ) -> None:
        i = self._index(block)
        coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        if coefficients.size != self._blocks[i].dim:
            raise ConeError(
                f"objective for block {self._blocks[i].name!r} has size "
                f"{coefficients.size}, expected {self._blocks[i].dim}"
            )
        self._objective[i] = self._objective[i] + coefficients

    def add_objective_constant(self, value: float) -> None:
        self._offset += float(value)

    def add_rows(
        self,
        name: str,
        terms: Mapping[VariableBlock | str, np.ndarray | sps.spmatrix],
        b_l: Sequence[float] | np.ndarray,
        b_u: Sequence[float] | np.ndarray | None = None,
        *,
        meta: Mapping[str, Any] | None = None,
    ) -> ConstraintGroup:
        """Append rows ``b_l <= sum_k terms[k] @ x_k <= b_u`` (equality when b_u is None)."""
        b_l = np.asarray(b_l, dtype=float).reshape(-1)
        b_u = b_l.copy() if b_u is None else np.asarray(b_u, dtype=float).reshape(-1)
        rows = b_l.size
        if b_u.size != rows:
            raise ConeError(f"row group {name!r}: bound sizes differ")
        by_name: dict[str, sps.csr_matrix] = {}
        for block, matrix in terms.items():
            i = self._index(block)
            matrix = sps.csr_matrix(matrix, dtype=float)
            if matrix.shape != (rows, self._blocks[i].dim):
                raise ConeError(
                    f"row group {name!r}: block {self._blocks[i].name!r} matrix has "
                    f"shape {matrix.shape}, expected {(rows, self._blocks[i].dim)}"
                )
            key = self._blocks[i].name
            by_name[key] = by_name[key] + matrix if key in by_name else matrix
        group = ConstraintGroup(
            name=name,
            start=self._num_rows,
            stop=self._num_rows + rows,
            meta=dict(meta or {}),
        )
        self._row_blocks.append(by_name)
        self._b_l.append(b_l)
        self._b_u.append(b_u)
        self._groups.append(group)
        self._num_rows += rows
        return group

    def add_function(
        self,
        name: str,
        function: ConicFunction,
        inputs: Mapping[VariableBlock | str, np.ndarray | sps.spmatrix],
        *,
        count: int,
        shift: np.ndarray | None = None,
        weights: Sequence[float] | np.ndarray | None = None,
        role: str = "aux",
        meta: Mapping[str, Any] | None = None,
    ) -> FunctionTerm:
        """Add ``count`` weighted instances of ``function`` on affine inputs.

        Instance inputs are stacked: ``inputs[k]`` has ``count * function.n``
        rows and maps block ``k`` to the concatenated instance inputs; ``shift``
        is the constant part. One auxiliary block holds all ``y`` variables.
        """
        n, p = function.n, function.p
        weights = (
            np.ones(count) if weights is None else np.asarray(weights, dtype=float)
        )
        if weights.shape != (count,):
            raise ConeError(f"function {name!r}: expected {count} weights")
        shift = np.zeros(count * n) if shift is None else np.asarray(shift, dtype=float)

        aux = self.add_block(name, function.K.repeat(count), role=role)
        eye = sps.identity(count, format="csr")
        A_rep = sps.kron(eye, function.A, format="csr")
        B_rep = sps.kron(eye, function.B, format="csr")

        input_maps: dict[str, sps.csr_matrix] = {}
        terms: dict[str, sps.csr_matrix] = {aux.name: B_rep}
        for block, matrix in inputs.items():
            i = self._index(block)
            matrix = sps.csr_matrix(matrix, dtype=float)
            if matrix.shape != (count * n, self._blocks[i].dim):
                raise ConeError(
                    f"function {name!r}: input map for {self._blocks[i].name!r} has "
                    f"shape {matrix.shape}, expected {(count * n, self._blocks[i].dim)}"
                )
            key = self._blocks[i].name
            input_maps[key] = matrix
            terms[key] = sps.csr_matrix(A_rep @ matrix)
            if np.any(function.c_x):
                weighted = np.kron(weights, function.c_x)
                self.add_objective(key, matrix.T @ weighted)

        if np.any(function.c_x):
            self.add_objective_constant(float(np.kron(weights, function.c_x) @ shift))
        if np.any(function.c_y):
            self.add_objective(aux, np.kron(weights, function.c_y))

        offset = A_rep @ shift
        group = self.add_rows(
            name,
            terms,
            np.tile(function.b_l, count) - offset,
            np.tile(function.b_u, count) - offset,
            meta=meta,
        )
        term = FunctionTerm(
            function=function,
            aux=aux,
            inputs=input_maps,
            shift=shift,
            weights=weights,
            group=group,
        )
        self._functions[name] = term
        return term

    def build(self) -> ConicProgram:
        """Freeze the accumulated data into a ConicProgram."""
        n = self.num_variables
        row_matrices = []
        for by_name, b_l in zip(self._row_blocks, self._b_l):
            pieces = []
            for block in self._blocks:
                matrix = by_name.get(block.name)
                pieces.append(
                    matrix if matrix is not None else sps.csr_matrix((b_l.size, block.dim))
                )
            row_matrices.append(sps.hstack(pieces, format="csr") if pieces else None)
        if row_matrices:
            A = sps.vstack(row_matrices, format="csr")
        else:
            A = sps.csr_matrix((0, n))
        A.sum_duplicates()
        return ConicProgram(
            blocks=tuple(self._blocks),
            objective=np.concatenate(self._objective) if self._objective else np.zeros(0),
            objective_offset=self._offset,
            A=A,
            b_l=np.concatenate(self._b_l) if self._b_l else np.zeros(0),
            b_u=np.concatenate(self._b_u) if self._b_u else np.zeros(0),
            groups=tuple(self._groups),
            functions=dict(self._functions),
            metadata=dict(self.metadata),
        )
