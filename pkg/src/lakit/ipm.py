"""Primal-dual interior-point solver for standard-form conic programs.

The solver handles products of free, nonnegative, Lorentz and rotated
Lorentz cones. Rotated cones are mapped onto Lorentz cones by an orthogonal
involution before iterating, so the Nesterov-Todd machinery only ever sees
``NonNeg`` and ``Quad`` blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, NamedTuple

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cones import ConeProduct, ConeSpec, Free, NonNeg, Quad, cone_contains
from .errors import SolverError
from .program import ConicProgram

logger = logging.getLogger(__name__)

_SQRT_HALF = np.sqrt(0.5)
_GROWTH_LIMIT = 1e10
_MAX_REGULARIZATION = 1e-4
_REFINEMENT_PASSES = 3
_STALL_STEP = 1e-6
_STALL_COUNT = 3

PositiveFloat = Annotated[float, Field(gt=0, strict=True)]
PositiveInt = Annotated[int, Field(ge=1, strict=True)]


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


class SolverSettings(BaseModel):
    """Tolerances and iteration controls of the interior-point method."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tol_gap: PositiveFloat = Field(1e-8, description="Relative duality-gap tolerance")
    tol_feas: PositiveFloat = Field(1e-8, description="Primal/dual feasibility tolerance")
    max_iter: PositiveInt = Field(100, description="Iteration budget")
    static_regularization: PositiveFloat = Field(
        1e-9, description="Static KKT regularization"
    )
    step_fraction: PositiveFloat = Field(
        0.99, description="Fraction of the distance to the cone boundary per step"
    )

    @model_validator(mode="after")
    def validate_step_fraction(self) -> SolverSettings:
        if self.step_fraction >= 1:
            raise ValueError("step_fraction must be < 1")
        return self


class IterationRecord(NamedTuple):
    iteration: int
    mu: float
    primal_res: float
    dual_res: float
    gap: float
    step: float


@dataclass(frozen=True, eq=False)
class StandardForm:
    """min c.x + offset  s.t.  A x = b,  x in cones (free dimensions first)."""

    c: np.ndarray
    A: sps.csr_matrix
    b: np.ndarray
    cones: ConeProduct
    free_count: int
    offset: float = 0.0

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.b)

    def validate(self) -> list[str]:
        errors = []
        if self.A.shape != (self.m, self.n):
            errors.append(f"A has shape {self.A.shape}, expected {(self.m, self.n)}")
        if self.cones.total_dim != self.n:
            errors.append(f"cones cover {self.cones.total_dim} of {self.n} variables")
        specs = list(self.cones)
        leading = 0
        while leading < len(specs) and specs[leading].is_free:
            leading += 1
        free_dims = sum(spec.dim for spec in specs[:leading])
        if free_dims != self.free_count:
            errors.append(
                f"free_count is {self.free_count} but {free_dims} leading free dims"
            )
        if any(spec.is_free for spec in specs[leading:]):
            errors.append("free blocks must precede every cone block")
        for name, vector in (("c", self.c), ("b", self.b)):
            if not np.all(np.isfinite(vector)):
                errors.append(f"{name} has non-finite entries")
        if not np.all(np.isfinite(self.A.data)):
            errors.append("A has non-finite coefficients")
        return errors


@dataclass(frozen=True, eq=False)
class Recovery:
    """Maps standard-form vectors back to the originating ConicProgram layout.

    ``columns[i]`` is the standard-form column of program variable ``i``;
    ``rows[i]`` is the standard-form row of program row ``i`` or -1 when the
    row was dropped as vacuous.
    """

    columns: np.ndarray
    rows: np.ndarray

    def primal(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.columns]

    def reduced_costs(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s)[self.columns]

    def duals(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.rows))
        kept = self.rows >= 0
        out[kept] = np.asarray(y)[self.rows[kept]]
        return out


@dataclass(frozen=True, eq=False)
class SolverResult:
    status: SolveStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    certificate: np.ndarray | None
    log: tuple[IterationRecord, ...]
    primal_res: float
    dual_res: float
    gap: float

    @property
    def iterations(self) -> int:
        return len(self.log)


def to_standard_form(program: ConicProgram) -> tuple[StandardForm, Recovery]:
    """Convert ranged rows to equalities with nonnegative slacks.

    Variables are reordered as free segments first, then cone segments in
    declaration order, then the slacks.
    """
    b_l = np.asarray(program.b_l, dtype=float)
    b_u = np.asarray(program.b_u, dtype=float)
    if np.any(np.isnan(b_l) | np.isnan(b_u)):
        raise SolverError("row bounds contain NaN")
    if np.any(np.isposinf(b_l) | np.isneginf(b_u) | (b_l > b_u)):
        raise SolverError("row bounds are inconsistent (b_l > b_u)")

    free_cols: list[np.ndarray] = []
    cone_cols: list[np.ndarray] = []
    cone_specs: list[ConeSpec] = []
    for block in program.blocks:
        start = block.offset
        for spec in block.cones:
            cols = np.arange(start, start + spec.dim)
            start += spec.dim
            if spec.is_free:
                free_cols.append(cols)
            else:
                cone_cols.append(cols)
                cone_specs.append(spec)
    order = np.concatenate(free_cols + cone_cols) if program.num_variables else np.zeros(0, int)
    n = len(order)
    free_count = sum(len(cols) for cols in free_cols)
    columns = np.empty(n, dtype=int)
    columns[order] = np.arange(n)

    vacuous = np.isneginf(b_l) & np.isposinf(b_u)
    for row in np.flatnonzero(vacuous):
        logger.warning("dropping vacuous row %d (both bounds infinite)", row)
    kept = np.flatnonzero(~vacuous)
    l, u = b_l[kept], b_u[kept]
    equal = l == u
    upper = np.isneginf(l)
    lower = np.isposinf(u)
    ranged = ~(equal | upper | lower)
    one_sided = np.flatnonzero(upper | lower)
    two_sided = np.flatnonzero(ranged)
    k1, k2 = len(one_sided), len(two_sided)
    r = len(kept)

    A_main = sps.coo_matrix(program.A[kept][:, order]) if n else sps.coo_matrix((r, 0))
    signs = np.where(upper[one_sided], 1.0, -1.0)
    S_rows = np.concatenate([one_sided, two_sided, r + np.arange(k2), r + np.arange(k2)])
    S_cols = np.concatenate(
        [np.arange(k1), k1 + np.arange(k2), k1 + np.arange(k2), k1 + k2 + np.arange(k2)]
    )
    S_vals = np.concatenate([signs, -np.ones(k2), np.ones(k2), np.ones(k2)])
    A = sps.csr_matrix(
        (
            np.concatenate([A_main.data, S_vals]),
            (
                np.concatenate([A_main.row, S_rows]),
                np.concatenate([A_main.col, n + S_cols]),
            ),
        ),
        shape=(r + k2, n + k1 + 2 * k2),
    )
    rhs = np.where(upper, u, l)
    b = np.concatenate([rhs, u[two_sided] - l[two_sided]])

    specs: list[ConeSpec] = []
    if free_count:
        specs.append(Free(free_count))
    specs.extend(cone_specs)
    if k1 + 2 * k2:
        specs.append(NonNeg(k1 + 2 * k2))
    c = np.concatenate([np.asarray(program.objective, dtype=float)[order], np.zeros(k1 + 2 * k2)])

    rows = np.full(program.num_rows, -1, dtype=int)
    rows[kept] = np.arange(r)
    sf = StandardForm(
        c=c,
        A=A,
        b=b,
        cones=ConeProduct(tuple(specs)),
        free_count=free_count,
        offset=float(program.objective_offset),
    )
    return sf, Recovery(columns=columns, rows=rows)


def residuals(
    sf: StandardForm, x: np.ndarray, y: np.ndarray, s: np.ndarray
) -> tuple[float, float, float]:
    """Return relative primal residual, dual residual and duality gap."""
    x, y, s = (np.asarray(v, dtype=float) for v in (x, y, s))
    r_p = np.linalg.norm(sf.A @ x - sf.b) / (1.0 + np.linalg.norm(sf.b)) if sf.m else 0.0
    r_d = (
        np.linalg.norm(sf.A.T @ y + s - sf.c) / (1.0 + np.linalg.norm(sf.c))
        if sf.n
        else 0.0
    )
    primal_obj = float(sf.c @ x)
    gap = abs(primal_obj - float(sf.b @ y)) / (1.0 + abs(primal_obj))
    return float(r_p), float(r_d), float(gap)


def verify_certificate(sf: StandardForm, result: SolverResult, tol: float = 1e-6) -> bool:
    """Check an infeasibility certificate by direct substitution."""
    if result.certificate is None:
        return False
    if result.status is SolveStatus.PRIMAL_INFEASIBLE:
        y = result.certificate
        bty = float(sf.b @ y)
        if bty <= 0:
            return False
        s = -(sf.A.T @ y) / bty
        return _inside(sf.cones, s, tol)
    if result.status is SolveStatus.DUAL_INFEASIBLE:
        x = result.certificate
        ctx = float(sf.c @ x)
        if ctx >= 0:
            return False
        x = x / -ctx
        if sf.m and np.linalg.norm(sf.A @ x) > tol:
            return False
        return _inside(sf.cones, x, tol, dual=False)
    return False


def _inside(cones: ConeProduct, v: np.ndarray, tol: float, *, dual: bool = True) -> bool:
    """Membership in ``cones``, or in its dual cone where free blocks must vanish."""
    for spec, start in zip(cones, cones.offsets()):
        part = v[start : start + spec.dim]
        if spec.is_free:
            if dual and np.linalg.norm(part) > tol:
                return False
        elif not cone_contains(spec, part, tol):
            return False
    return True


class _ConeLayout:
    """Vectorized Jordan-algebra operations over NonNeg and Quad blocks."""

    def __init__(self, specs: list[ConeSpec]) -> None:
        offset = 0
        nonneg: list[int] = []
        soc: dict[int, list[int]] = {}
        for spec in specs:
            if spec.kind == "NonNeg":
                nonneg.extend(range(offset, offset + spec.dim))
            elif spec.kind == "Quad":
                soc.setdefault(spec.dim, []).append(offset)
            else:
                raise SolverError(f"unexpected {spec.kind} block in cone layout")
            offset += spec.dim
        self.size = offset
        self.specs = specs
        self.nonneg = np.asarray(nonneg, dtype=int)
        self.soc = [
            np.asarray(starts, dtype=int)[:, None] + np.arange(dim)
            for dim, starts in sorted(soc.items())
        ]
        self.degree = len(nonneg) + sum(len(idx) for idx in self.soc)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[self.nonneg] = 1.0
        for idx in self.soc:
            e[idx[:, 0]] = 1.0
        return e

    def jordan(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.size)
        out[self.nonneg] = u[self.nonneg] * v[self.nonneg]
        for idx in self.soc:
            U, V = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", U, V)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def arrow_solve(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve lam o v = r for v."""
        out = np.empty(self.size)
        out[self.nonneg] = r[self.nonneg] / lam[self.nonneg]
        for idx in self.soc:
            L, R = lam[idx], r[idx]
            l0, lb = L[:, 0], L[:, 1:]
            r0, rb = R[:, 0], R[:, 1:]
            det = l0 * l0 - np.einsum("ij,ij->i", lb, lb)
            v0 = (l0 * r0 - np.einsum("ij,ij->i", lb, rb)) / det
            out[idx[:, 0]] = v0
            out[idx[:, 1:]] = (rb - lb * v0[:, None]) / l0[:, None]
        return out

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """Largest alpha with v + alpha*dv in the cone (inf when unbounded)."""
        alpha = np.inf
        if self.nonneg.size:
            d = dv[self.nonneg]
            neg = d < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-v[self.nonneg][neg] / d[neg])))
        for idx in self.soc:
            V, D = v[idx], dv[idx]
            a = D[:, 0] ** 2 - np.einsum("ij,ij->i", D[:, 1:], D[:, 1:])
            b = V[:, 0] * D[:, 0] - np.einsum("ij,ij->i", V[:, 1:], D[:, 1:])
            c = V[:, 0] ** 2 - np.einsum("ij,ij->i", V[:, 1:], V[:, 1:])
            t = np.full(len(idx), np.inf)
            with np.errstate(divide="ignore", invalid="ignore"):
                lead = D[:, 0] < 0
                t[lead] = -V[lead, 0] / D[lead, 0]
                quad = np.abs(a) > 1e-14 * (1.0 + np.abs(b))
                disc = b * b - a * c
                root = np.sqrt(np.maximum(disc, 0.0))
                for sign in (-1.0, 1.0):
                    cand = (-b + sign * root) / a
                    ok = quad & (disc >= 0) & (cand > 0)
                    t[ok] = np.minimum(t[ok], cand[ok])
                lin = ~quad & (b < 0)
                t[lin] = np.minimum(t[lin], -c[lin] / (2.0 * b[lin]))
            alpha = min(alpha, float(t.min()) if t.size else np.inf)
        return max(alpha, 0.0)


def _soc_matrix(w: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise product M(w) V with M(w) = [[w0, w1'], [w1, I + w1 w1'/(1+w0)]]."""
    w0, w1 = w[:, 0], w[:, 1:]
    v0, v1 = V[:, 0], V[:, 1:]
    dot = np.einsum("ij,ij->i", w1, v1)
    out = np.empty_like(V)
    out[:, 0] = w0 * v0 + dot
    out[:, 1:] = v0[:, None] * w1 + v1 + (dot / (1.0 + w0))[:, None] * w1
    return out


def _reflect(V: np.ndarray) -> np.ndarray:
    out = -V
    out[:, 0] = V[:, 0]
    return out


def _hyperbolic_norm(V: np.ndarray) -> np.ndarray:
    tail = np.linalg.norm(V[:, 1:], axis=1)
    return np.sqrt(np.maximum((V[:, 0] - tail) * (V[:, 0] + tail), 1e-300))


class _NTScaling:
    """Nesterov-Todd scaling W with W x = W^-1 s = lam."""

    def __init__(self, layout: _ConeLayout, x: np.ndarray, s: np.ndarray) -> None:
        self.layout = layout
        nn = layout.nonneg
        self.d = np.sqrt(s[nn] / x[nn])
        self.blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for idx in layout.soc:
            X, S = x[idx], s[idx]
            xn, sn = _hyperbolic_norm(X), _hyperbolic_norm(S)
            eta = np.sqrt(sn / xn)
            xb, sb = X / xn[:, None], S / sn[:, None]
            gamma = np.sqrt((1.0 + np.einsum("ij,ij->i", xb, sb)) / 2.0)
            w = (sb + _reflect(xb)) / (2.0 * gamma)[:, None]
            self.blocks.append((idx, eta, w))
        self.lam = self.apply(x)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nn = self.layout.nonneg
        out[nn] = self.d * v[nn]
        for idx, eta, w in self.blocks:
            out[idx] = eta[:, None] * _soc_matrix(w, v[idx])
        return out

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nn = self.layout.nonneg
        out[nn] = v[nn] / self.d
        for idx, eta, w in self.blocks:
            out[idx] = _reflect(_soc_matrix(w, _reflect(v[idx]))) / eta[:, None]
        return out

    def hessian(self) -> sps.csr_matrix:
        """W^2 as a sparse block-diagonal matrix."""
        nn = self.layout.nonneg
        rows, cols, vals = [nn], [nn], [self.d**2]
        for idx, eta, w in self.blocks:
            k, dim = idx.shape
            block = 2.0 * w[:, :, None] * w[:, None, :]
            diag = np.arange(dim)
            block[:, diag, diag] += 1.0
            block[:, 0, 0] -= 2.0
            block *= (eta**2)[:, None, None]
            rows.append(np.broadcast_to(idx[:, :, None], (k, dim, dim)).ravel())
            cols.append(np.broadcast_to(idx[:, None, :], (k, dim, dim)).ravel())
            vals.append(block.ravel())
        size = self.layout.size
        return sps.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        )


class _FactorizationFailed(Exception):
    pass


class _KKTSolver:
    """Regularized quasi-definite KKT factorization with iterative refinement."""

    def __init__(
        self, A: sps.csr_matrix, H: sps.csr_matrix, free_count: int, eps: float
    ) -> None:
        m, n = A.shape
        H = sps.coo_matrix(H)
        H_full = sps.csr_matrix(
            (H.data, (H.row + free_count, H.col + free_count)), shape=(n, n)
        )
        if m:
            self.K0 = sps.bmat(
                [[-H_full, A.T], [A, sps.csr_matrix((m, m))]], format="csc"
            )
        else:
            self.K0 = (-H_full).tocsc()
        reg = sps.diags(np.concatenate([-eps * np.ones(n), eps * np.ones(m)]))
        try:
            self.lu = spla.splu(
                (self.K0 + reg).tocsc(), permc_spec="MMD_AT_PLUS_A"
            )
        except RuntimeError as e:
            raise _FactorizationFailed(str(e)) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        z = self.lu.solve(rhs)
        for _ in range(_REFINEMENT_PASSES):
            z = z + self.lu.solve(rhs - self.K0 @ z)
        if not np.all(np.isfinite(z)):
            raise _FactorizationFailed("non-finite KKT solution")
        return z


@dataclass(eq=False)
class _Problem:
    """Presolved, rotated problem over free + NonNeg/Quad variables."""

    c: np.ndarray
    A: sps.csr_matrix
    b: np.ndarray
    free_count: int
    layout: _ConeLayout


@dataclass(eq=False)
class _Outcome:
    status: SolveStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    certificate: np.ndarray | None
    log: list[IterationRecord]


def _rotation(free_count: int, specs: list[ConeSpec]) -> sps.csr_matrix:
    """Symmetric orthogonal involution taking every RQuad block onto Quad."""
    n = free_count + sum(spec.dim for spec in specs)
    diag = np.ones(n)
    rows, cols, vals = [], [], []
    offset = free_count
    for spec in specs:
        if spec.kind == "RQuad":
            p = offset
            diag[p] = diag[p + 1] = 0.0
            rows += [p, p, p + 1, p + 1]
            cols += [p, p + 1, p, p + 1]
            vals += [_SQRT_HALF, _SQRT_HALF, _SQRT_HALF, -_SQRT_HALF]
        offset += spec.dim
    R = sps.diags(diag, format="coo")
    return sps.csr_matrix(
        (
            np.concatenate([R.data, vals]),
            (np.concatenate([R.row, rows]), np.concatenate([R.col, cols])),
        ),
        shape=(n, n),
    )


def _interior_point(
    problem: _Problem, settings: SolverSettings, *, fallback: bool
) -> _Outcome:
    A0, b0, c = problem.A, problem.b, problem.c
    nf, layout = problem.free_count, problem.layout
    m, n = A0.shape
    nu = layout.degree

    # row equilibration; residuals are always measured on the unscaled data
    row_max = abs(A0).max(axis=1).toarray().ravel() if m else np.zeros(0)
    row_scale = 1.0 / np.where(row_max > 0, row_max, 1.0)
    A = sps.diags(row_scale) @ A0 if m else A0
    A = sps.csr_matrix(A)
    b = row_scale * b0
    At = sps.csr_matrix(A.T)
    b_norm, c_norm = np.linalg.norm(b0), np.linalg.norm(c)

    x = np.zeros(n)
    x[nf:] = layout.identity()
    s = layout.identity()
    y = np.zeros(m)
    e = layout.identity()

    log: list[IterationRecord] = []
    eps = settings.static_regularization
    alpha = 0.0
    stalls = 0
    status: SolveStatus | None = None
    certificate: np.ndarray | None = None
    exhausted = False

    for iteration in range(settings.max_iter + 1):
        y_unscaled = row_scale * y
        dual_slack = np.concatenate([np.zeros(nf), s])
        r_p = np.linalg.norm(A0 @ x - b0) / (1.0 + b_norm) if m else 0.0
        r_d = np.linalg.norm(A0.T @ y_unscaled + dual_slack - c) / (1.0 + c_norm)
        primal_obj = float(c @ x)
        gap = abs(primal_obj - float(b0 @ y_unscaled)) / (1.0 + abs(primal_obj))
        mu = float(x[nf:] @ s) / nu if nu else 0.0
        if iteration:
            log.append(IterationRecord(iteration, mu, r_p, r_d, gap, alpha))
            logger.debug(
                "iter %3d  mu=%.3e  r_p=%.3e  r_d=%.3e  gap=%.3e  step=%.3f",
                iteration, mu, r_p, r_d, gap, alpha,
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
            status = SolveStatus.NUMERICAL_FAILURE
            break
        if r_p <= settings.tol_feas and r_d <= settings.tol_feas and gap <= settings.tol_gap:
            status = SolveStatus.OPTIMAL
            break

        bty = float(b @ y)
        if r_p > settings.tol_feas and bty > 0:
            cert_res = np.linalg.norm(At @ y - np.concatenate([np.zeros(nf), -s])) / bty
            if cert_res <= settings.tol_feas:
                status = SolveStatus.PRIMAL_INFEASIBLE
                certificate = row_scale * y / bty
                break
        if r_d > settings.tol_feas and primal_obj < 0:
            cert_res = (np.linalg.norm(A0 @ x) if m else 0.0) / -primal_obj
            if cert_res <= settings.tol_feas:
                status = SolveStatus.DUAL_INFEASIBLE
                certificate = x / -primal_obj
                break

        growth = max(np.linalg.norm(x), np.linalg.norm(y))
        if growth > _GROWTH_LIMIT or stalls >= _STALL_COUNT:
            logger.debug("iterates stalled or diverged at iteration %d", iteration)
            break
        if iteration == settings.max_iter:
            exhausted = True
            break

        scaling = _NTScaling(layout, x[nf:], s)
        lam = scaling.lam
        H = scaling.hessian()
        kkt = None
        while kkt is None:
            try:
                kkt = _KKTSolver(A, H, nf, eps)
            except _FactorizationFailed:
                eps *= 10.0
                if eps > _MAX_REGULARIZATION:
                    break
                logger.debug("raising KKT regularization to %.1e", eps)
        if kkt is None:
            status = SolveStatus.NUMERICAL_FAILURE
            break

        rp = b - A @ x
        rd = c - At @ y
        rd[nf:] -= s

        def direction(rc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            Wq = scaling.apply(layout.arrow_solve(lam, rc))
            rhs = np.concatenate([rd[:nf], rd[nf:] - Wq, rp])
            sol = kkt.solve(rhs)
            dx, dy = sol[:n], sol[n:]
            return dx, dy, Wq - H @ dx[nf:]

        try:
            dx, dy, ds = direction(-layout.jordan(lam, lam))
            if nu:
                alpha_aff = min(
                    1.0, layout.max_step(x[nf:], dx[nf:]), layout.max_step(s, ds)
                )
                mu_aff = float((x[nf:] + alpha_aff * dx[nf:]) @ (s + alpha_aff * ds)) / nu
                sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
                rc = (
                    sigma * mu * e
                    - layout.jordan(lam, lam)
                    - layout.jordan(scaling.apply_inverse(ds), scaling.apply(dx[nf:]))
                )
                dx, dy, ds = direction(rc)
                alpha = min(
                    1.0,
                    settings.step_fraction
                    * min(layout.max_step(x[nf:], dx[nf:]), layout.max_step(s, ds)),
                )
            else:
                alpha = 1.0
        except _FactorizationFailed:
            status = SolveStatus.NUMERICAL_FAILURE
            break

        stalls = stalls + 1 if alpha < _STALL_STEP else 0
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds

    if status is None and fallback:
        outcome = _farkas(problem, settings)
        if outcome is not None:
            outcome.log[:0] = log
            return outcome
    if status is None:
        status = SolveStatus.MAX_ITER if exhausted else SolveStatus.NUMERICAL_FAILURE
    return _Outcome(status, x, row_scale * y, s, certificate, log)


def _farkas(problem: _Problem, settings: SolverSettings) -> _Outcome | None:
    """Search for an infeasibility certificate through auxiliary feasibility problems."""
    A, b, c = problem.A, problem.b, problem.c
    nf, layout = problem.free_count, problem.layout
    m, n = A.shape
    nc = n - nf

    if m and np.any(b):
        # y free, s in K:  A_f' y = 0,  A_c' y + s = 0,  b' y = 1
        At = sps.csr_matrix(A.T)
        top, bottom = At, sps.csr_matrix(b)
        if nc:
            coupling = sps.csr_matrix(
                (np.ones(nc), (nf + np.arange(nc), np.arange(nc))), shape=(n, nc)
            )
            top = sps.hstack([At, coupling], format="csr")
            bottom = sps.hstack([bottom, sps.csr_matrix((1, nc))], format="csr")
        A_aux = sps.vstack([top, bottom], format="csr")
        aux = _Problem(
            c=np.zeros(m + nc),
            A=A_aux,
            b=np.concatenate([np.zeros(n), [1.0]]),
            free_count=m,
            layout=layout,
        )
        result = _interior_point(aux, settings, fallback=False)
        if result.status is SolveStatus.OPTIMAL:
            logger.debug("primal infeasibility certificate found")
            y = result.x[:m]
            return _Outcome(
                SolveStatus.PRIMAL_INFEASIBLE,
                np.zeros(n),
                np.zeros(m),
                np.zeros(nc),
                y,
                result.log,
            )

    if np.any(c):
        # x in K:  A x = 0,  c' x = -1
        A_aux = sps.vstack([A, sps.csr_matrix(c)], format="csr")
        aux = _Problem(
            c=np.zeros(n),
            A=A_aux,
            b=np.concatenate([np.zeros(m), [-1.0]]),
            free_count=nf,
            layout=layout,
        )
        result = _interior_point(aux, settings, fallback=False)
        if result.status is SolveStatus.OPTIMAL:
            logger.debug("dual infeasibility certificate found")
            return _Outcome(
                SolveStatus.DUAL_INFEASIBLE,
                np.zeros(n),
                np.zeros(m),
                np.zeros(nc),
                result.x,
                result.log,
            )
    return None


def _column_kinds(cones: ConeProduct) -> np.ndarray:
    kinds = []
    for spec in cones:
        kinds.extend([spec.kind] * spec.dim)
    return np.asarray(kinds, dtype=object)


def solve(sf: StandardForm, settings: SolverSettings | None = None) -> SolverResult:
    """Solve ``sf`` with a Mehrotra predictor-corrector interior-point method.

    Non-optimal outcomes are reported through ``SolverResult.status``; an
    infeasibility certificate accompanies ``PrimalInfeasible`` and
    ``DualInfeasible``.

    Raises:
        SolverError: If the standard form is malformed.
    """
    settings = settings or SolverSettings()
    problems = sf.validate()
    if problems:
        raise SolverError("invalid standard form: " + "; ".join(problems))
    n, m = sf.n, sf.m

    A = sps.csr_matrix(sf.A, copy=True)
    A.eliminate_zeros()
    row_nnz = np.diff(A.indptr)
    empty_rows = row_nnz == 0
    bad = np.flatnonzero(empty_rows & (np.abs(sf.b) > settings.tol_feas))
    if bad.size:
        row = bad[np.argmax(np.abs(sf.b[bad]))]
        certificate = np.zeros(m)
        certificate[row] = np.sign(sf.b[row])
        logger.info("presolve: row %d is empty with nonzero right-hand side", row)
        return _finish(sf, SolveStatus.PRIMAL_INFEASIBLE, np.zeros(n), np.zeros(m), np.zeros(n), certificate, ())

    kinds = _column_kinds(sf.cones)
    col_nnz = np.diff(A.tocsc().indptr)
    empty_cols = col_nnz == 0
    unbounded = np.flatnonzero(
        empty_cols
        & (
            ((kinds == "Free") & (np.abs(sf.c) > settings.tol_feas))
            | ((kinds == "NonNeg") & (sf.c < -settings.tol_feas))
        )
    )
    if unbounded.size:
        col = unbounded[0]
        certificate = np.zeros(n)
        certificate[col] = -np.sign(sf.c[col]) if kinds[col] == "Free" else 1.0
        logger.info("presolve: column %d is empty with improving cost", col)
        return _finish(sf, SolveStatus.DUAL_INFEASIBLE, np.zeros(n), np.zeros(m), np.zeros(n), certificate, ())
    dropped_cols = empty_cols & ((kinds == "Free") | (kinds == "NonNeg"))

    keep_rows = np.flatnonzero(~empty_rows)
    free_keep: list[np.ndarray] = []
    cone_keep: list[np.ndarray] = []
    specs: list[ConeSpec] = []
    for spec, start in zip(sf.cones, sf.cones.offsets()):
        cols = np.arange(start, start + spec.dim)
        if spec.kind in ("Free", "NonNeg"):
            cols = cols[~dropped_cols[cols]]
            if not cols.size:
                continue
        if spec.is_free:
            free_keep.append(cols)
        else:
            cone_keep.append(cols)
            specs.append(NonNeg(cols.size) if spec.kind == "NonNeg" else spec)
    keep_cols = np.concatenate(free_keep + cone_keep) if free_keep or cone_keep else np.zeros(0, int)
    nf = sum(len(cols) for cols in free_keep)

    x_full = np.zeros(n)
    s_full = np.where(dropped_cols & (kinds == "NonNeg"), sf.c, 0.0)
    y_full = np.zeros(m)
    if keep_cols.size == 0:
        return _finish(sf, SolveStatus.OPTIMAL, x_full, y_full, s_full, None, ())

    R = _rotation(nf, specs)
    layout_specs = [Quad(spec.dim) if spec.kind == "RQuad" else spec for spec in specs]
    reduced = _Problem(
        c=R @ sf.c[keep_cols],
        A=sps.csr_matrix(A[keep_rows][:, keep_cols] @ R),
        b=sf.b[keep_rows],
        free_count=nf,
        layout=_ConeLayout(layout_specs),
    )
    logger.debug(
        "presolve: %d of %d rows, %d of %d columns kept",
        len(keep_rows), m, len(keep_cols), n,
    )
    outcome = _interior_point(reduced, settings, fallback=True)

    certificate = None
    if outcome.status is SolveStatus.PRIMAL_INFEASIBLE and outcome.certificate is not None:
        certificate = np.zeros(m)
        certificate[keep_rows] = outcome.certificate
    elif outcome.status is SolveStatus.DUAL_INFEASIBLE and outcome.certificate is not None:
        certificate = np.zeros(n)
        certificate[keep_cols] = R @ outcome.certificate
    x_full[keep_cols] = R @ outcome.x
    s_full[keep_cols] = R @ np.concatenate([np.zeros(nf), outcome.s])
    y_full[keep_rows] = outcome.y
    return _finish(sf, outcome.status, x_full, y_full, s_full, certificate, tuple(outcome.log))


def _finish(
    sf: StandardForm,
    status: SolveStatus,
    x: np.ndarray,
    y: np.ndarray,
    s: np.ndarray,
    certificate: np.ndarray | None,
    log: tuple[IterationRecord, ...],
) -> SolverResult:
    r_p, r_d, gap = residuals(sf, x, y, s)
    logger.info(
        "solver finished: %s after %d iterations (r_p=%.2e, r_d=%.2e, gap=%.2e)",
        status.value, len(log), r_p, r_d, gap,
    )
    return SolverResult(
        status=status,
        x=x,
        y=y,
        s=s,
        certificate=certificate,
        log=log,
        primal_res=r_p,
        dual_res=r_d,
        gap=gap,
    )
