"""Cone vocabulary and conic-representable function descriptors."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np
import scipy.sparse as sps

from .errors import ConeError, SolverError

if TYPE_CHECKING:
    from .ipm import SolverResult, StandardForm

ConeKind = Literal["Free", "NonNeg", "Quad", "RQuad"]

_MIN_DIM: dict[str, int] = {"Free": 1, "NonNeg": 1, "Quad": 2, "RQuad": 3}


@dataclass(frozen=True)
class ConeSpec:
    """A single cone: R^d, (R+)^d, the Lorentz cone Q_d or the rotated cone Q^r_d."""

    kind: ConeKind
    dim: int

    def __post_init__(self) -> None:
        if self.kind not in _MIN_DIM:
            raise ConeError(f"unknown cone kind {self.kind!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < _MIN_DIM[self.kind]:
            raise ConeError(
                f"{self.kind} cone requires dim >= {_MIN_DIM[self.kind]}, got {self.dim}"
            )

    @property
    def is_free(self) -> bool:
        return self.kind == "Free"


def Free(dim: int) -> ConeSpec:
    return ConeSpec("Free", dim)


def NonNeg(dim: int) -> ConeSpec:
    return ConeSpec("NonNeg", dim)


def Quad(dim: int) -> ConeSpec:
    return ConeSpec("Quad", dim)


def RQuad(dim: int) -> ConeSpec:
    return ConeSpec("RQuad", dim)


@dataclass(frozen=True)
class ConeProduct:
    """Cartesian product of cones laid out contiguously."""

    blocks: tuple[ConeSpec, ...] = ()

    @classmethod
    def of(cls, *blocks: ConeSpec) -> ConeProduct:
        return cls(tuple(blocks))

    @property
    def total_dim(self) -> int:
        return sum(block.dim for block in self.blocks)

    def __iter__(self) -> Iterator[ConeSpec]:
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def offsets(self) -> list[int]:
        """Return the start offset of every block."""
        starts = [0]
        for block in self.blocks[:-1]:
            starts.append(starts[-1] + block.dim)
        return starts

    def repeat(self, count: int) -> ConeProduct:
        return ConeProduct(self.blocks * count)

    def __add__(self, other: ConeProduct) -> ConeProduct:
        return ConeProduct(self.blocks + other.blocks)


class ConicSetMembershipReport(NamedTuple):
    """Membership verdict with a signed margin (non-negative iff inside)."""

    inside: bool
    margin: float


def _check_dim(spec: ConeSpec, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != spec.dim:
        raise ConeError(f"{spec.kind} cone has dim {spec.dim}, vector has {z.size}")
    return z


def cone_contains(spec: ConeSpec, z: Sequence[float] | np.ndarray, tol: float = 0.0) -> bool:
    """Return True when ``z`` lies within ``tol`` of the cone.

    Raises:
        ConeError: If the vector length does not match the cone dimension.
    """
    z = _check_dim(spec, z)
    if tol < 0:
        raise ConeError(f"tolerance must be non-negative, got {tol}")
    if spec.kind == "Free":
        return True
    if spec.kind == "NonNeg":
        return bool(z.min() >= -tol)
    if spec.kind == "Quad":
        return bool(z[0] >= np.linalg.norm(z[1:]) - tol)
    rest = z[2:]
    return bool(
        z[0] >= -tol and z[1] >= -tol and 2.0 * z[0] * z[1] >= rest @ rest - tol
    )


def cone_membership(spec: ConeSpec, z: Sequence[float] | np.ndarray) -> ConicSetMembershipReport:
    """Return a membership report whose margin is a signed distance surrogate."""
    z = _check_dim(spec, z)
    if spec.kind == "Free":
        margin = np.inf
    elif spec.kind == "NonNeg":
        margin = float(z.min())
    elif spec.kind == "Quad":
        margin = float(z[0] - np.linalg.norm(z[1:]))
    else:
        # rotate (z0, z1) onto a Lorentz cone axis
        u0 = (z[0] + z[1]) / np.sqrt(2.0)
        u1 = (z[0] - z[1]) / np.sqrt(2.0)
        margin = float(u0 - np.hypot(u1, np.linalg.norm(z[2:])))
    return ConicSetMembershipReport(inside=margin >= 0, margin=margin)


@dataclass(frozen=True, eq=False)
class ConicFunction:
    """Descriptor of F(x) = min_y c_x.x + c_y.y s.t. b_l <= A x + B y <= b_u, y in K.

    An infeasible inner problem means F(x) = +inf, which is how indicator
    functions and support functions with restricted domains are expressed.
    """

    c_x: np.ndarray
    c_y: np.ndarray
    A: sps.csr_matrix
    B: sps.csr_matrix
    b_l: np.ndarray
    b_u: np.ndarray
    K: ConeProduct

    @classmethod
    def create(
        cls,
        *,
        A: np.ndarray | sps.spmatrix,
        B: np.ndarray | sps.spmatrix,
        K: ConeProduct,
        b_l: Sequence[float] | np.ndarray | None = None,
        b_u: Sequence[float] | np.ndarray | None = None,
        c_x: Sequence[float] | np.ndarray | None = None,
        c_y: Sequence[float] | np.ndarray | None = None,
    ) -> ConicFunction:
        """Assemble a descriptor; omitted bounds mean equality to zero."""
        A = sps.csr_matrix(A, dtype=float)
        B = sps.csr_matrix(B, dtype=float)
        rows = A.shape[0]
        b_l = np.zeros(rows) if b_l is None else np.asarray(b_l, dtype=float)
        b_u = b_l.copy() if b_u is None else np.asarray(b_u, dtype=float)
        c_x = np.zeros(A.shape[1]) if c_x is None else np.asarray(c_x, dtype=float)
        c_y = np.zeros(B.shape[1]) if c_y is None else np.asarray(c_y, dtype=float)
        return cls(c_x=c_x, c_y=c_y, A=A, B=B, b_l=b_l, b_u=b_u, K=K)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @property
    def is_indicator(self) -> bool:
        return not np.any(self.c_x) and not np.any(self.c_y)

    def precompose(self, T: np.ndarray | sps.spmatrix) -> ConicFunction:
        """Return G(x') = F(T x')."""
        T = sps.csr_matrix(T, dtype=float)
        return ConicFunction(
            c_x=T.T @ self.c_x,
            c_y=self.c_y,
            A=sps.csr_matrix(self.A @ T),
            B=self.B,
            b_l=self.b_l,
            b_u=self.b_u,
            K=self.K,
        )


def validate(f: ConicFunction) -> list[str]:
    """Check every descriptor invariant and return one message per violation."""
    errors: list[str] = []
    rows, n = f.A.shape
    if f.B.shape[0] != rows:
        errors.append(f"A has {rows} rows but B has {f.B.shape[0]}")
    if f.c_x.shape != (n,):
        errors.append(f"c_x has shape {f.c_x.shape}, expected ({n},)")
    if f.c_y.shape != (f.p,):
        errors.append(f"c_y has shape {f.c_y.shape}, expected ({f.p},)")
    if f.b_l.shape != (rows,) or f.b_u.shape != (rows,):
        errors.append(
            f"bounds have shapes {f.b_l.shape}/{f.b_u.shape}, expected ({rows},)"
        )
    if f.K.total_dim != f.p:
        errors.append(f"cone product has dim {f.K.total_dim} but p = {f.p}")
    for name, matrix in (("A", f.A), ("B", f.B)):
        if not np.all(np.isfinite(matrix.data)):
            errors.append(f"{name} has non-finite coefficients")
    for name, vector in (("c_x", f.c_x), ("c_y", f.c_y)):
        if not np.all(np.isfinite(vector)):
            errors.append(f"{name} has non-finite entries")
    if f.b_l.shape == f.b_u.shape:
        if np.any(np.isnan(f.b_l)) or np.any(np.isnan(f.b_u)):
            errors.append("bounds contain NaN")
        for row in np.flatnonzero(f.b_l > f.b_u):
            errors.append(f"row {row}: b_l = {f.b_l[row]} > b_u = {f.b_u[row]}")
        for row in np.flatnonzero(np.isneginf(f.b_l) & np.isposinf(f.b_u)):
            errors.append(f"row {row}: both bounds infinite")
    return errors


def evaluate_via_solver(
    f: ConicFunction,
    x: Sequence[float] | np.ndarray,
    solver: Callable[[StandardForm], SolverResult] | None = None,
) -> float:
    """Evaluate F(x) by solving the inner minimization over y.

    Returns:
        The optimal value, ``inf`` when the inner problem is infeasible and
        ``-inf`` when it is unbounded below.

    Raises:
        ConeError: If the descriptor is invalid or ``x`` has the wrong size.
        SolverError: If the solver stops without a verdict.
    """
    from .ipm import SolveStatus, solve, to_standard_form
    from .program import ProgramBuilder

    problems = validate(f)
    if problems:
        raise ConeError("invalid conic function: " + "; ".join(problems))
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != f.n:
        raise ConeError(f"input has size {x.size}, function expects {f.n}")

    builder = ProgramBuilder()
    y = builder.add_block("y", f.K, role="aux")
    builder.add_objective(y, f.c_y)
    shift = f.A @ x
    builder.add_rows("inner", {y: f.B}, f.b_l - shift, f.b_u - shift)
    program = builder.build()
    sf, recovery = to_standard_form(program)
    result = (solver or solve)(sf)
    base = float(f.c_x @ x)
    if result.status is SolveStatus.OPTIMAL:
        return base + float(sf.c @ result.x)
    if result.status is SolveStatus.PRIMAL_INFEASIBLE:
        return np.inf
    if result.status is SolveStatus.DUAL_INFEASIBLE:
        return -np.inf
    raise SolverError(f"inner evaluation stopped with status {result.status.value}")


def stack_products(products: Iterable[ConeProduct]) -> ConeProduct:
    """Concatenate cone products in order."""
    blocks: list[ConeSpec] = []
    for product in products:
        blocks.extend(product.blocks)
    return ConeProduct(tuple(blocks))
