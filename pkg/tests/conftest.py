"""Shared meshes, materials and loads for the limit-analysis tests."""

from pathlib import Path

import pytest

from lakit.criteria import tresca
from lakit.fem import DirichletBC
from lakit.formulations import LoadingSpec
from lakit.mesh import generate_rectangle


@pytest.fixture
def unit_square():
    """Crossed-diagonal 2x2 triangulation of the unit square (16 cells)."""
    return generate_rectangle(1.0, 1.0, 2, 2)


@pytest.fixture
def rollers():
    """Symmetry rollers on the left and bottom edges."""
    return (
        DirichletBC("left", (0,), (0.0,)),
        DirichletBC("bottom", (1,), (0.0,)),
    )


@pytest.fixture
def tension():
    """Unit horizontal traction on the right edge."""
    return LoadingSpec(tractions={"right": (1.0, 0.0)})


@pytest.fixture
def soft_clay():
    return tresca(1.0)


PATCH_YAML = """\
name: patch
mesh:
  rectangle:
    width: 1.0
    height: 1.0
    nx: 2
    ny: 2
material:
  name: Tresca2D
  k: 1.0
formulation: {formulation}
loading:
  tractions:
    right: [1.0, 0.0]
bcs:
  - tag: left
    components: [0]
  - tag: bottom
    components: [1]
output:
  directory: out
  formats: [vtk, csv, cbf, log]
"""


@pytest.fixture
def patch_config(tmp_path):
    """Write a uniaxial-tension problem file and return its path."""

    def write(formulation: str = "ub", extra: str = "") -> Path:
        path = tmp_path / f"{formulation}.yaml"
        path.write_text(PATCH_YAML.format(formulation=formulation) + extra)
        return path

    return write
