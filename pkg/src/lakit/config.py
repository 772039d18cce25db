"""Problem configuration models."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .criteria import Criterion, CriterionName, make_criterion, required_params
from .fem import DirichletBC
from .formulations import MIXED_DEGREES, Inclusion, LoadingSpec
from .ipm import SolverSettings
from .mesh import EdgeSegment

Formulation = Literal["ub", "ub-disc", "lb", "mixed", "homog-kin", "thick-plate"]
RectangleEdge = Literal["left", "right", "bottom", "top"]
OutputFormat = Literal["vtk", "csv", "cbf", "log"]

StrictFloat = Annotated[float, Field(strict=True)]
StrictPositiveFloat = Annotated[float, Field(gt=0, strict=True)]
StrictNonNegativeFloat = Annotated[float, Field(ge=0, strict=True)]
StrictPositiveInt = Annotated[int, Field(ge=1, strict=True)]
StrictNonNegativeInt = Annotated[int, Field(ge=0, strict=True)]

_DEFAULT_DEGREE: dict[str, int] = {
    "ub": 2,
    "ub-disc": 1,
    "lb": 1,
    "mixed": 1,
    "homog-kin": 2,
    "thick-plate": 2,
}
_ALLOWED_DEGREES: dict[str, tuple[int, ...]] = {
    "ub": (1, 2),
    "ub-disc": (1, 2),
    "lb": (1,),
    "mixed": (1, 2),
    "homog-kin": (1, 2),
    "thick-plate": (2,),
}
# config parameter name -> criterion parameter name
_PARAM_KEYS = {"c": "c", "phi_deg": "phi", "k": "k", "ft": "ft", "fc": "fc", "M0": "M0", "Q0": "Q0"}


class ConfigModel(BaseModel):
    """Base model for user-authored problem configuration."""

    model_config = ConfigDict(extra="forbid")


class SegmentConfig(ConfigModel):
    """A tagged interval along one rectangle edge."""

    edge: RectangleEdge = Field(..., description="Edge the interval lies on")
    lower: StrictFloat = Field(..., description="Interval start along the edge")
    upper: StrictFloat = Field(..., description="Interval end along the edge")
    tag: str = Field(..., description="Boundary tag of facets inside the interval")

    @model_validator(mode="after")
    def validate_interval(self) -> SegmentConfig:
        if self.lower > self.upper:
            raise ValueError(f"lower ({self.lower}) must not exceed upper ({self.upper})")
        return self


class RectangleConfig(ConfigModel):
    """Crossed-diagonal rectangle generator."""

    width: StrictPositiveFloat = Field(..., description="Domain width")
    height: StrictPositiveFloat = Field(..., description="Domain height")
    nx: StrictPositiveInt = Field(..., description="Rectangles along x")
    ny: StrictPositiveInt = Field(..., description="Rectangles along y")
    tags: dict[RectangleEdge, str] = Field(
        default_factory=dict, description="Boundary tag per edge (defaults to the edge name)"
    )
    segments: list[SegmentConfig] = Field(
        default_factory=list, description="Tagged intervals overriding edge tags"
    )

    def edge_segments(self) -> list[EdgeSegment]:
        return [EdgeSegment(s.edge, s.lower, s.upper, s.tag) for s in self.segments]


class MeshConfig(ConfigModel):
    """Mesh source: a generated rectangle or a mesh file."""

    rectangle: Optional[RectangleConfig] = Field(None, description="Rectangle generator")
    file: Optional[Path] = Field(None, description="Mesh file (relative to the config)")

    @model_validator(mode="after")
    def validate_source(self) -> MeshConfig:
        if (self.rectangle is None) == (self.file is None):
            raise ValueError("mesh needs exactly one of 'rectangle' or 'file'")
        return self


class CriterionConfig(ConfigModel):
    """Strength criterion; only the parameters of the named criterion may be set."""

    name: CriterionName = Field(..., description="Criterion name")
    c: Optional[StrictPositiveFloat] = Field(None, description="Cohesion")
    phi_deg: Optional[StrictNonNegativeFloat] = Field(
        None, description="Friction angle in degrees"
    )
    k: Optional[StrictPositiveFloat] = Field(None, description="Shear strength")
    ft: Optional[StrictPositiveFloat] = Field(None, description="Tensile strength")
    fc: Optional[StrictPositiveFloat] = Field(None, description="Compressive strength")
    M0: Optional[StrictPositiveFloat] = Field(None, description="Plastic bending moment")
    Q0: Optional[StrictPositiveFloat] = Field(None, description="Plastic shear force")

    @model_validator(mode="after")
    def validate_parameters(self) -> CriterionConfig:
        required = {("phi_deg" if p == "phi" else p) for p in required_params(self.name)}
        given = {key for key in _PARAM_KEYS if getattr(self, key) is not None}
        missing = sorted(required - given)
        extra = sorted(given - required)
        if missing:
            raise ValueError(f"{self.name} needs {', '.join(missing)}")
        if extra:
            raise ValueError(f"{self.name} does not take {', '.join(extra)}")
        if self.phi_deg is not None and self.phi_deg >= 90:
            raise ValueError(f"phi_deg must be < 90, got {self.phi_deg}")
        return self

    def to_criterion(self) -> Criterion:
        params = {}
        for key, param in _PARAM_KEYS.items():
            value = getattr(self, key)
            if value is not None:
                params[param] = math.radians(value) if key == "phi_deg" else value
        return make_criterion(self.name, **params)


class InclusionConfig(ConfigModel):
    """Circular inclusion with its own criterion."""

    center: tuple[StrictFloat, StrictFloat] = Field(..., description="Inclusion center")
    radius: StrictPositiveFloat = Field(..., description="Inclusion radius")
    criterion: CriterionConfig = Field(..., description="Criterion inside the inclusion")

    def to_inclusion(self) -> Inclusion:
        return Inclusion(self.center, self.radius, self.criterion.to_criterion())


class MaterialConfig(CriterionConfig):
    """Base criterion plus optional inclusions."""

    inclusions: list[InclusionConfig] = Field(
        default_factory=list, description="Circular inclusions (cells by centroid)"
    )


Vector = list[StrictFloat]


class LoadingConfig(ConfigModel):
    """Driving and fixed loads."""

    body_force: Optional[Vector] = Field(None, description="Driving body force per unit volume")
    tractions: dict[str, Vector] = Field(
        default_factory=dict, description="Driving traction per boundary tag"
    )
    fixed_body_force: Optional[Vector] = Field(None, description="Fixed body force")
    fixed_tractions: dict[str, Vector] = Field(
        default_factory=dict, description="Fixed traction per boundary tag"
    )
    pressure: Optional[StrictFloat] = Field(
        None, description="Driving transverse pressure (thick plates)"
    )

    def to_loading(self) -> LoadingSpec:
        body = [self.pressure] if self.pressure is not None else self.body_force
        return LoadingSpec(
            body_force=body,
            tractions={tag: tuple(v) for tag, v in self.tractions.items()},
            fixed_body_force=self.fixed_body_force,
            fixed_tractions={tag: tuple(v) for tag, v in self.fixed_tractions.items()},
        )


class BCConfig(ConfigModel):
    """Prescribed velocity components on a tagged boundary."""

    tag: str = Field(..., description="Boundary tag")
    components: list[StrictNonNegativeInt] = Field(
        ..., min_length=1, description="Field components (plates: 0=w, 1=theta_x, 2=theta_y)"
    )
    values: Optional[list[StrictFloat]] = Field(
        None, description="Prescribed values (default zero)"
    )

    @model_validator(mode="after")
    def validate_values(self) -> BCConfig:
        if self.values is not None and len(self.values) != len(self.components):
            raise ValueError(
                f"values length ({len(self.values)}) must match components "
                f"length ({len(self.components)})"
            )
        return self

    def to_bc(self) -> DirichletBC:
        values = self.values if self.values is not None else [0.0] * len(self.components)
        return DirichletBC(self.tag, tuple(self.components), tuple(values))


class HomogenizationConfig(ConfigModel):
    """Macroscopic loading direction and sweep plane."""

    sigma0: tuple[StrictFloat, StrictFloat, StrictFloat] = Field(
        (1.0, -1.0, 0.0), description="Macroscopic stress direction (Sxx, Syy, Sxy)"
    )
    plane: Literal["principal", "deviatoric"] = Field(
        "principal",
        description="Sweep plane: (Sxx, Syy) or ((Sxx-Syy)/2, Sxy) at zero mean stress",
    )
    directions: StrictPositiveInt = Field(32, description="Default sweep direction count")

    @model_validator(mode="after")
    def validate_direction(self) -> HomogenizationConfig:
        if not any(self.sigma0):
            raise ValueError("sigma0 must be nonzero")
        return self


class RefinementConfig(ConfigModel):
    """Mesh refinement driver."""

    mode: Literal["none", "uniform", "adaptive"] = Field("none", description="Refinement mode")
    steps: StrictPositiveInt = Field(1, description="Number of solves")
    eta: Annotated[float, Field(gt=0, le=1, strict=True)] = Field(
        0.5, description="Fraction of the total dissipation to mark"
    )


class OutputConfig(ConfigModel):
    """Artifact directory and formats."""

    directory: Path = Field(Path("results"), description="Output directory (relative to the config)")
    formats: list[OutputFormat] = Field(
        default_factory=lambda: ["vtk", "csv"], description="Artifacts to write"
    )


class ProblemConfig(ConfigModel):
    """Root model of a limit-analysis problem file."""

    name: str = Field("problem", description="Run name used for output files")
    mesh: MeshConfig = Field(..., description="Mesh source")
    material: MaterialConfig = Field(..., description="Strength criterion")
    formulation: Formulation = Field("ub", description="Limit-analysis formulation")
    degree: Optional[Literal[1, 2]] = Field(
        None, description="Velocity degree (filled per formulation)"
    )
    sigma_degree: Optional[Literal[0, 1]] = Field(
        None, description="Stress degree of the mixed formulation"
    )
    loading: LoadingConfig = Field(default_factory=LoadingConfig, description="Loads")
    bcs: list[BCConfig] = Field(default_factory=list, description="Dirichlet conditions")
    homogenization: Optional[HomogenizationConfig] = Field(
        None, description="Homogenization settings (homog-kin only)"
    )
    solver: SolverSettings = Field(default_factory=SolverSettings, description="Solver settings")
    refinement: RefinementConfig = Field(
        default_factory=RefinementConfig, description="Refinement driver"
    )
    output: OutputConfig = Field(default_factory=OutputConfig, description="Outputs")
    seed: Optional[StrictNonNegativeInt] = Field(None, description="Recorded random seed")

    @model_validator(mode="after")
    def validate_problem(self) -> ProblemConfig:
        formulation = self.formulation
        if self.degree is None:
            self.degree = _DEFAULT_DEGREE[formulation]
        if self.degree not in _ALLOWED_DEGREES[formulation]:
            raise ValueError(
                f"formulation {formulation!r} does not support degree={self.degree}; "
                f"allowed: {', '.join(map(str, _ALLOWED_DEGREES[formulation]))}"
            )
        if formulation == "mixed":
            if self.sigma_degree is None:
                self.sigma_degree = self.degree - 1
            if (self.degree, self.sigma_degree) not in MIXED_DEGREES:
                raise ValueError(
                    f"formulation 'mixed' does not support degree={self.degree} with "
                    f"sigma_degree={self.sigma_degree}; allowed pairs: (1, 0), (2, 1)"
                )
        elif self.sigma_degree is not None:
            raise ValueError(f"sigma_degree only applies to 'mixed', not {formulation!r}")

        plate = self.material.name == "ThickPlateDecoupled"
        if (formulation == "thick-plate") != plate:
            raise ValueError(
                f"formulation {formulation!r} cannot use criterion {self.material.name}"
            )
        if formulation == "homog-kin" and self.homogenization is None:
            self.homogenization = HomogenizationConfig()
        elif formulation != "homog-kin" and self.homogenization is not None:
            raise ValueError("homogenization settings apply to 'homog-kin' only")
        if self.loading.pressure is not None and not plate:
            raise ValueError("loading.pressure applies to 'thick-plate' only")
        return self

    def criteria_spec(self) -> tuple[Criterion, list[Inclusion]]:
        return (
            self.material.to_criterion(),
            [inclusion.to_inclusion() for inclusion in self.material.inclusions],
        )


def dump_config(config: ProblemConfig) -> str:
    """Return a normalized YAML document that re-parses to an equal model."""
    data = config.model_dump(mode="json", exclude_none=True)
    return yaml.safe_dump(data, sort_keys=False)
