"""Strength criteria lowered to conic-representable functions.

Stresses are ordered ``(sxx, syy, sxy)`` for plane continua and
``(Mxx, Myy, Mxy, Qx, Qy)`` for thick plates; strain rates use the matching
``(dxx, dyy, dxy)`` and ``(chi_xx, chi_yy, chi_xy, gamma_x, gamma_y)``
orders. The duality product weights the shear components twice
(see :func:`pairing`).

Jump descriptors take their input in the facet frame: ``(v_n, v_t)`` for
continua and ``(theta_n, theta_t, w)`` for plates.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from .cones import ConeProduct, ConicFunction, Quad
from .errors import CriterionError

CriterionName = Literal[
    "MohrCoulomb2D",
    "Tresca2D",
    "VonMises2D",
    "DruckerPrager2D",
    "Rankine2D",
    "ThickPlateDecoupled",
]

_REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    "MohrCoulomb2D": ("c", "phi"),
    "Tresca2D": ("k",),
    "VonMises2D": ("k",),
    "DruckerPrager2D": ("c", "phi"),
    "Rankine2D": ("ft", "fc"),
    "ThickPlateDecoupled": ("M0", "Q0"),
}
_STRENGTH_PARAMS = frozenset({"c", "k", "ft", "fc", "M0", "Q0"})
_SQRT3 = math.sqrt(3.0)


def required_params(name: str) -> tuple[str, ...]:
    """Return the parameter names a criterion needs."""
    try:
        return _REQUIRED_PARAMS[name]
    except KeyError:
        raise CriterionError(
            f"unsupported criterion {name!r}; expected one of "
            + ", ".join(sorted(_REQUIRED_PARAMS))
        ) from None


@dataclass(frozen=True)
class Criterion:
    """A named strength criterion with its parameters.

    ``phi`` is the friction angle in radians; every other parameter is a
    strength (stress, moment or force per length).
    """

    name: str
    params: Mapping[str, float] = field(hash=False)

    def __post_init__(self) -> None:
        required = required_params(self.name)
        missing = [key for key in required if key not in self.params]
        extra = sorted(set(self.params) - set(required))
        if missing or extra:
            raise CriterionError(
                f"{self.name} takes parameters {', '.join(required)}"
                + (f"; missing {', '.join(missing)}" if missing else "")
                + (f"; unexpected {', '.join(extra)}" if extra else "")
            )
        for key in required:
            value = self.params[key]
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise CriterionError(f"{self.name}: {key} must be a finite number")
            if key in _STRENGTH_PARAMS and value <= 0:
                raise CriterionError(f"{self.name}: {key} must be > 0, got {value}")
            if key == "phi" and not 0 <= value < math.pi / 2:
                raise CriterionError(
                    f"{self.name}: phi must satisfy 0 <= phi < pi/2, got {value}"
                )
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})

    @property
    def stress_dim(self) -> int:
        return 5 if self.name == "ThickPlateDecoupled" else 3

    @property
    def is_plate(self) -> bool:
        return self.stress_dim == 5

    @property
    def jump_dim(self) -> int:
        return 3 if self.is_plate else 2

    def scaled(self, factor: float) -> Criterion:
        """Return the criterion with every strength multiplied by ``factor``."""
        return Criterion(
            self.name,
            {
                key: value * factor if key in _STRENGTH_PARAMS else value
                for key, value in self.params.items()
            },
        )


def make_criterion(name: str, **params: float) -> Criterion:
    return Criterion(name, params)


def mohr_coulomb(c: float, phi: float) -> Criterion:
    return Criterion("MohrCoulomb2D", {"c": c, "phi": phi})


def tresca(k: float) -> Criterion:
    return Criterion("Tresca2D", {"k": k})


def von_mises(k: float) -> Criterion:
    return Criterion("VonMises2D", {"k": k})


def drucker_prager(c: float, phi: float) -> Criterion:
    return Criterion("DruckerPrager2D", {"c": c, "phi": phi})


def rankine(ft: float, fc: float) -> Criterion:
    return Criterion("Rankine2D", {"ft": ft, "fc": fc})


def thick_plate(M0: float, Q0: float) -> Criterion:
    return Criterion("ThickPlateDecoupled", {"M0": M0, "Q0": Q0})


def pairing(mat: Criterion) -> np.ndarray:
    """Weights w such that the duality product is sum(w * sigma * d)."""
    if mat.is_plate:
        return np.array([1.0, 1.0, 2.0, 1.0, 1.0])
    return np.array([1.0, 1.0, 2.0])


def deviatoric_parameters(mat: Criterion) -> tuple[float, float]:
    """Return (a, beta) with G = {r <= a - beta*m}, m = (sxx+syy)/2, r the Mohr radius."""
    p = mat.params
    if mat.name == "MohrCoulomb2D":
        return p["c"] * math.cos(p["phi"]), math.sin(p["phi"])
    if mat.name in ("Tresca2D", "VonMises2D"):
        return p["k"], 0.0
    if mat.name == "DruckerPrager2D":
        # compression-cone fit of sqrt(J2) <= a - b*(sxx+syy)
        denom = _SQRT3 * (3.0 - math.sin(p["phi"]))
        a = 6.0 * p["c"] * math.cos(p["phi"]) / denom
        b = 2.0 * math.sin(p["phi"]) / denom
        return a, 2.0 * b
    raise CriterionError(f"{mat.name} is not a deviatoric-cone criterion")


# -- deviatoric cone family (Mohr-Coulomb, Tresca, von Mises, Drucker-Prager)


def _deviatoric_indicator(mat: Criterion) -> ConicFunction:
    a, beta = deviatoric_parameters(mat)
    M = np.array([[-beta, -beta, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 2.0]])
    return ConicFunction.create(
        A=-M, B=np.eye(3), K=ConeProduct.of(Quad(3)), b_l=[2.0 * a, 0.0, 0.0]
    )


def _deviatoric_support(mat: Criterion) -> ConicFunction:
    a, beta = deviatoric_parameters(mat)
    P = np.array(
        [[beta / 2.0, 0.5, 0.0], [beta / 2.0, -0.5, 0.0], [0.0, 0.0, 0.5]]
    )
    return ConicFunction.create(
        A=np.eye(3), B=-P, K=ConeProduct.of(Quad(3)), c_y=[a, 0.0, 0.0]
    )


def _deviatoric_jump(mat: Criterion) -> ConicFunction:
    a, beta = deviatoric_parameters(mat)
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
    B = np.array([[-beta, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return ConicFunction.create(A=A, B=B, K=ConeProduct.of(Quad(3)), c_y=[a, 0.0, 0.0])


def _deviatoric_value(a: float, beta: float, trace: float, radius: float) -> float:
    """Support value given tr d and sqrt((dxx-dyy)^2 + 4 dxy^2)."""
    scale = 1e-12 * max(1.0, abs(trace), radius)
    if beta == 0.0:
        return a * radius if abs(trace) <= scale else math.inf
    if trace >= beta * radius - scale:
        return a * trace / beta
    return math.inf


def _deviatoric_support_value(mat: Criterion, d: np.ndarray) -> float:
    a, beta = deviatoric_parameters(mat)
    return _deviatoric_value(a, beta, d[0] + d[1], math.hypot(d[0] - d[1], 2.0 * d[2]))


def _deviatoric_jump_value(mat: Criterion, v: np.ndarray) -> float:
    a, beta = deviatoric_parameters(mat)
    return _deviatoric_value(a, beta, v[0], math.hypot(v[0], v[1]))


# -- Rankine


_MOHR = np.array([[0.5, 0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.0, 0.5]])


def _rankine_indicator(mat: Criterion) -> ConicFunction:
    ft, fc = mat.params["ft"], mat.params["fc"]
    tension = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.0, 1.0]])
    compression = np.array([[0.5, 0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.0, 1.0]])
    return ConicFunction.create(
        A=-np.vstack([tension, compression]),
        B=np.eye(6),
        K=ConeProduct.of(Quad(3), Quad(3)),
        b_l=[ft, 0.0, 0.0, fc, 0.0, 0.0],
    )


def _rankine_support(mat: Criterion) -> ConicFunction:
    ft, fc = mat.params["ft"], mat.params["fc"]
    return ConicFunction.create(
        A=np.eye(3),
        B=np.hstack([-_MOHR, _MOHR]),
        K=ConeProduct.of(Quad(3), Quad(3)),
        c_y=[ft, 0.0, 0.0, fc, 0.0, 0.0],
    )


_LOCAL_FRAME_STRAIN = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.5]])


def _rankine_jump(mat: Criterion) -> ConicFunction:
    return _rankine_support(mat).precompose(_LOCAL_FRAME_STRAIN)


def _rankine_value(ft: float, fc: float, trace: float, radius: float) -> float:
    principal = (0.5 * (trace + radius), 0.5 * (trace - radius))
    return sum(ft * max(p, 0.0) + fc * max(-p, 0.0) for p in principal)


def _rankine_support_value(mat: Criterion, d: np.ndarray) -> float:
    return _rankine_value(
        mat.params["ft"],
        mat.params["fc"],
        d[0] + d[1],
        math.hypot(d[0] - d[1], 2.0 * d[2]),
    )


def _rankine_jump_value(mat: Criterion, v: np.ndarray) -> float:
    return _rankine_value(mat.params["ft"], mat.params["fc"], v[0], math.hypot(v[0], v[1]))


# -- thick plates: von Mises bending on moments, Euclidean shear


def _plate_indicator(mat: Criterion) -> ConicFunction:
    M0, Q0 = mat.params["M0"], mat.params["Q0"]
    L = np.zeros((7, 5))
    L[1, :2] = 0.5
    L[2, :2] = (_SQRT3 / 2.0, -_SQRT3 / 2.0)
    L[3, 2] = _SQRT3
    L[5, 3] = 1.0
    L[6, 4] = 1.0
    b = np.zeros(7)
    b[0], b[4] = M0, Q0
    return ConicFunction.create(
        A=-L, B=np.eye(7), K=ConeProduct.of(Quad(4), Quad(3)), b_l=b
    )


def _plate_support(mat: Criterion) -> ConicFunction:
    M0, Q0 = mat.params["M0"], mat.params["Q0"]
    A = np.zeros((5, 5))
    A[0, :2] = 1.0
    A[1, :2] = (1.0 / _SQRT3, -1.0 / _SQRT3)
    A[2, 2] = 2.0 / _SQRT3
    A[3, 3] = 1.0
    A[4, 4] = 1.0
    B = np.zeros((5, 7))
    B[0, 1] = B[1, 2] = B[2, 3] = B[3, 5] = B[4, 6] = -1.0
    c_y = np.zeros(7)
    c_y[0], c_y[4] = M0, Q0
    return ConicFunction.create(A=A, B=B, K=ConeProduct.of(Quad(4), Quad(3)), c_y=c_y)


def _plate_jump(mat: Criterion) -> ConicFunction:
    M0, Q0 = mat.params["M0"], mat.params["Q0"]
    A = np.array(
        [[2.0 / _SQRT3, 0.0, 0.0], [0.0, 1.0 / _SQRT3, 0.0], [0.0, 0.0, 1.0]]
    )
    B = np.zeros((3, 5))
    B[0, 1] = B[1, 2] = B[2, 4] = -1.0
    return ConicFunction.create(
        A=A, B=B, K=ConeProduct.of(Quad(3), Quad(2)), c_y=[M0, 0.0, 0.0, Q0, 0.0]
    )


def _plate_support_value(mat: Criterion, d: np.ndarray) -> float:
    bend = math.sqrt(
        (d[0] + d[1]) ** 2 + ((d[0] - d[1]) ** 2 + 4.0 * d[2] ** 2) / 3.0
    )
    return mat.params["M0"] * bend + mat.params["Q0"] * math.hypot(d[3], d[4])


def _plate_jump_value(mat: Criterion, v: np.ndarray) -> float:
    bend = math.sqrt((4.0 * v[0] ** 2 + v[1] ** 2) / 3.0)
    return mat.params["M0"] * bend + mat.params["Q0"] * abs(v[2])


class _Forms(NamedTuple):
    indicator: Callable[[Criterion], ConicFunction]
    support: Callable[[Criterion], ConicFunction]
    jump: Callable[[Criterion], ConicFunction]
    support_value: Callable[[Criterion, np.ndarray], float]
    jump_value: Callable[[Criterion, np.ndarray], float]


_DEVIATORIC = _Forms(
    _deviatoric_indicator,
    _deviatoric_support,
    _deviatoric_jump,
    _deviatoric_support_value,
    _deviatoric_jump_value,
)
_FORMS: dict[str, _Forms] = {
    "MohrCoulomb2D": _DEVIATORIC,
    "Tresca2D": _DEVIATORIC,
    "VonMises2D": _DEVIATORIC,
    "DruckerPrager2D": _DEVIATORIC,
    "Rankine2D": _Forms(
        _rankine_indicator,
        _rankine_support,
        _rankine_jump,
        _rankine_support_value,
        _rankine_jump_value,
    ),
    "ThickPlateDecoupled": _Forms(
        _plate_indicator,
        _plate_support,
        _plate_jump,
        _plate_support_value,
        _plate_jump_value,
    ),
}


def _forms(mat: Criterion) -> _Forms:
    try:
        return _FORMS[mat.name]
    except KeyError:
        raise CriterionError(f"unsupported criterion {mat.name!r}") from None


def indicator(mat: Criterion) -> ConicFunction:
    """Descriptor of the indicator of G: 0 inside, +inf outside."""
    return _forms(mat).indicator(mat)


def support_strain(mat: Criterion) -> ConicFunction:
    """Descriptor of the support function pi(d) = sup{sigma:d, sigma in G}."""
    return _forms(mat).support(mat)


def support_jump(mat: Criterion) -> ConicFunction:
    """Descriptor of the jump dissipation Pi(v; n) in the facet frame."""
    return _forms(mat).jump(mat)


def _as_vector(values: np.ndarray, size: int, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != size:
        raise CriterionError(f"{what} has size {values.size}, expected {size}")
    return values


def support_value(mat: Criterion, d: np.ndarray) -> float:
    """Closed-form support function value (``inf`` outside its domain)."""
    return _forms(mat).support_value(mat, _as_vector(d, mat.stress_dim, "strain rate"))


def jump_value(mat: Criterion, v: np.ndarray) -> float:
    """Closed-form jump dissipation for a facet-frame jump."""
    return _forms(mat).jump_value(mat, _as_vector(v, mat.jump_dim, "jump"))


def jump_to_strain(v: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Return the symmetric product v (x)s n in (dxx, dyy, dxy) order."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(normal, dtype=float)
    return np.array([v[0] * n[0], v[1] * n[1], 0.5 * (v[0] * n[1] + v[1] * n[0])])
