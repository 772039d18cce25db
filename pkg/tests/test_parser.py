import math
from pathlib import Path

import pytest
import yaml

from lakit.config import ProblemConfig, dump_config
from lakit.criteria import mohr_coulomb
from lakit.errors import ConfigError
from lakit.fem import DirichletBC
from lakit.parser import parse_config, parse_config_text

MINIMAL = """\
mesh:
  rectangle:
    width: 1.0
    height: 1.0
    nx: 2
    ny: 2
material:
  name: Tresca2D
  k: 1.0
"""


def _problem(**overrides) -> str:
    data = yaml.safe_load(MINIMAL)
    data.update(overrides)
    return yaml.safe_dump(data, sort_keys=False)


def test_minimal_config_fills_defaults():
    config = parse_config_text(MINIMAL)
    assert isinstance(config, ProblemConfig)
    assert config.name == "problem"
    assert config.formulation == "ub"
    assert config.degree == 2
    assert config.sigma_degree is None
    assert config.refinement.mode == "none"
    assert config.output.formats == ["vtk", "csv"]
    assert config.solver.max_iter == 100


def test_mixed_defaults_to_lower_stress_degree():
    config = parse_config_text(_problem(formulation="mixed", degree=2))
    assert config.sigma_degree == 1


def test_homogenization_settings_default_for_homog_kin():
    config = parse_config_text(_problem(formulation="homog-kin"))
    assert config.homogenization is not None
    assert config.homogenization.sigma0 == (1.0, -1.0, 0.0)


def test_friction_angle_is_given_in_degrees():
    config = parse_config_text(
        _problem(material={"name": "MohrCoulomb2D", "c": 1.0, "phi_deg": 30.0})
    )
    criterion, inclusions = config.criteria_spec()
    assert criterion == mohr_coulomb(1.0, math.radians(30.0))
    assert inclusions == []


def test_bc_values_default_to_zero():
    config = parse_config_text(_problem(bcs=[{"tag": "left", "components": [0, 1]}]))
    assert config.bcs[0].to_bc() == DirichletBC("left", (0, 1), (0.0, 0.0))


def test_plate_pressure_becomes_body_force():
    config = parse_config_text(
        _problem(
            material={"name": "ThickPlateDecoupled", "M0": 1.0, "Q0": 10.0},
            formulation="thick-plate",
            loading={"pressure": 2.0},
        )
    )
    assert config.loading.to_loading().body_force.tolist() == [2.0]


class TestValidationErrors:
    def test_error_reports_yaml_line(self):
        """Validation errors point at the offending line."""
        content = MINIMAL.replace("nx: 2", "nx: 0")
        with pytest.raises(ConfigError, match=r"mesh\.rectangle\.nx \(line 5\)"):
            parse_config_text(content)

    def test_strict_numbers_reject_strings(self):
        """Quoted numbers are not coerced."""
        content = MINIMAL.replace("width: 1.0", 'width: "1.0"')
        with pytest.raises(ConfigError, match=r"mesh\.rectangle\.width \(line 3\)"):
            parse_config_text(content)

    def test_unknown_key_rejected(self):
        """Typos in keys are reported instead of ignored."""
        with pytest.raises(ConfigError, match="Extra inputs are not permitted"):
            parse_config_text(MINIMAL + "solver_settings: {}\n")

    def test_missing_criterion_parameter(self):
        """Each criterion names the parameters it needs."""
        with pytest.raises(ConfigError, match="Tresca2D needs k"):
            parse_config_text(_problem(material={"name": "Tresca2D"}))

    def test_foreign_criterion_parameter(self):
        """Parameters of other criteria are rejected."""
        with pytest.raises(ConfigError, match="Tresca2D does not take phi_deg"):
            parse_config_text(_problem(material={"name": "Tresca2D", "k": 1.0, "phi_deg": 10.0}))

    def test_unsupported_mixed_pair(self):
        """Only the (1, 0) and (2, 1) mixed pairs exist."""
        with pytest.raises(ConfigError, match="degree=2 with sigma_degree=0"):
            parse_config_text(_problem(formulation="mixed", degree=2, sigma_degree=0))

    def test_plate_criterion_needs_plate_formulation(self):
        """Plate and continuum criteria cannot be swapped."""
        with pytest.raises(ConfigError, match="cannot use criterion ThickPlateDecoupled"):
            parse_config_text(
                _problem(material={"name": "ThickPlateDecoupled", "M0": 1.0, "Q0": 1.0})
            )

    def test_degree_outside_formulation(self):
        """The static formulation only has linear stresses."""
        with pytest.raises(ConfigError, match="'lb' does not support degree=2"):
            parse_config_text(_problem(formulation="lb", degree=2))

    def test_mesh_needs_single_source(self):
        """A rectangle and a mesh file cannot both be given."""
        with pytest.raises(ConfigError, match="exactly one of 'rectangle' or 'file'"):
            parse_config_text(
                _problem(mesh={"file": "a.mesh", "rectangle": yaml.safe_load(MINIMAL)["mesh"]["rectangle"]})
            )

    def test_friction_angle_below_right_angle(self):
        """phi_deg must stay below 90."""
        with pytest.raises(ConfigError, match="phi_deg must be < 90"):
            parse_config_text(
                _problem(material={"name": "MohrCoulomb2D", "c": 1.0, "phi_deg": 90.0})
            )


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="found duplicate key 'material'"):
        parse_config_text(MINIMAL + "material:\n  name: Tresca2D\n  k: 2.0\n")


def test_invalid_yaml():
    with pytest.raises(ConfigError, match="Failed to parse YAML"):
        parse_config_text("mesh: { invalid yaml")


def test_empty_file_reports_clear_error(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ConfigError, match="Config file is empty"):
        parse_config(path)


def test_non_mapping_root_reports_clear_error():
    with pytest.raises(ConfigError, match="Config root must be a mapping, got list"):
        parse_config_text("- mesh\n- material\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="Config file not found"):
        parse_config(tmp_path / "missing.yaml")


def test_merge_helper_keys_are_dropped():
    content = """\
clay: &clay
  name: Tresca2D
  k: 1.0
mesh:
  rectangle: {width: 1.0, height: 1.0, nx: 1, ny: 1}
material:
  <<: *clay
  k: 2.0
"""
    config = parse_config_text(content)
    assert config.material.k == 2.0


def test_relative_paths_resolve_against_config(tmp_path):
    path = tmp_path / "problem.yaml"
    path.write_text(_problem(mesh={"file": "meshes/block.mesh"}, output={"directory": "out"}))
    config = parse_config(path)
    assert config.mesh.file == tmp_path / "meshes" / "block.mesh"
    assert config.output.directory == tmp_path / "out"


def test_absolute_output_directory_is_kept(tmp_path):
    path = tmp_path / "problem.yaml"
    target = tmp_path / "elsewhere"
    path.write_text(_problem(output={"directory": str(target)}))
    assert parse_config(path).output.directory == target


def test_dump_config_reparses_to_equal_model():
    config = parse_config_text(
        _problem(
            formulation="mixed",
            bcs=[{"tag": "left", "components": [0]}],
            loading={"tractions": {"right": [1.0, 0.0]}},
            output={"directory": "out", "formats": ["csv"]},
        )
    )
    assert parse_config_text(dump_config(config)) == config
    assert Path(yaml.safe_load(dump_config(config))["output"]["directory"]) == Path("out")
