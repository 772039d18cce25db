from pathlib import Path

import pytest

from lakit.cli import Problem

CONFIGS_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize(
    "config_path",
    sorted(CONFIGS_DIR.glob("*.yaml")),
    ids=lambda path: path.name,
)
def test_checked_in_configs_build(config_path: Path):
    """Checked-in problem files parse and lower to a conic program on their initial mesh."""
    problem = Problem.load(config_path)
    program = problem.build(problem.mesh)

    assert program.num_variables > 0
    assert program.metadata["mesh"] is problem.mesh
