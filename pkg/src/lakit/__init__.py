from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adapt import AdaptStep, DissipationMap, adapt_loop, dissipation_map, mark_cells
from .config import ProblemConfig
from .criteria import Criterion, make_criterion
from .errors import LakitError
from .formulations import (
    LoadingSpec,
    Solution,
    build_homogenization_kin,
    build_kinematic_ub,
    build_mixed,
    build_static_lb,
    build_thick_plate_kin,
    solve_program,
)
from .ipm import SolveStatus, SolverSettings
from .mesh import Mesh, generate_rectangle, load_mesh, refine_marked, refine_uniform
from .parser import parse_config

__all__ = [
    "AdaptStep",
    "Criterion",
    "DissipationMap",
    "LakitError",
    "LoadingSpec",
    "Mesh",
    "ProblemConfig",
    "Solution",
    "SolveStatus",
    "SolverSettings",
    "adapt_loop",
    "build_homogenization_kin",
    "build_kinematic_ub",
    "build_mixed",
    "build_static_lb",
    "build_thick_plate_kin",
    "dissipation_map",
    "generate_rectangle",
    "load_mesh",
    "make_criterion",
    "mark_cells",
    "parse_config",
    "refine_marked",
    "refine_uniform",
    "solve_program",
]


def _fallback_version() -> str:
    """Read the source-tree version from pyproject.toml when not installed."""
    pyproject_path = Path(__file__).resolve().parents[2] / "pyproject.toml"
    try:
        with pyproject_path.open("rb") as fh:
            project = tomllib.load(fh).get("project", {})
    except (OSError, tomllib.TOMLDecodeError):
        return "0.0.0"

    version_value = project.get("version")
    if isinstance(version_value, str) and version_value:
        return version_value
    return "0.0.0"


try:
    __version__ = version("lakit")
except PackageNotFoundError:
    __version__ = _fallback_version()
