"""Tests for the published problem-file schema."""

import json
from pathlib import Path

from lakit.config import ProblemConfig

SCHEMA_PATH = Path(__file__).parent.parent / "schema" / "problem.schema.json"


def _stored_schema() -> dict:
    with open(SCHEMA_PATH) as f:
        return json.load(f)


def test_schema_file_exists():
    """The JSON schema file should exist."""
    assert SCHEMA_PATH.exists(), f"Schema file not found at {SCHEMA_PATH}"


def test_schema_has_metadata():
    """The stored schema should have proper JSON Schema metadata."""
    stored_schema = _stored_schema()
    assert "$schema" in stored_schema, "Schema should have a $schema field"
    assert "json-schema.org" in stored_schema["$schema"], (
        "$schema should reference json-schema.org"
    )
    assert stored_schema["$id"] == "lakit/problem.schema.json"


def test_schema_matches_pydantic_model():
    """Top-level keys, required keys and descriptions follow ProblemConfig.

    If this test fails, regenerate the schema by running:
        uv run scripts/generate_schema.py
    """
    generated = ProblemConfig.model_json_schema()
    stored = _stored_schema()

    assert stored["title"] == generated["title"]
    assert stored["additionalProperties"] is False
    assert sorted(stored["required"]) == sorted(generated["required"])
    assert list(stored["properties"]) == list(generated["properties"]), (
        "The stored JSON schema is out of sync with ProblemConfig. "
        "Regenerate it with: uv run scripts/generate_schema.py"
    )
    for key, prop in stored["properties"].items():
        assert prop["description"] == generated["properties"][key]["description"], key
