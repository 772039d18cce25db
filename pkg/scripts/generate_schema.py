"""Regenerate schema/problem.schema.json from the ProblemConfig model.

Only the top-level keys are described; nested sections are published as
plain objects so editors can complete the section names without pulling in
every model definition.
"""

import json
from pathlib import Path

from lakit.config import ProblemConfig

SCHEMA_PATH = Path(__file__).resolve().parents[1] / "schema" / "problem.schema.json"


def _refers_to_section(prop: dict) -> bool:
    text = json.dumps(prop)
    return '"$ref"' in text


def top_level_schema() -> dict:
    generated = ProblemConfig.model_json_schema()
    generated.pop("$defs", None)
    properties = {}
    for key, prop in generated["properties"].items():
        if _refers_to_section(prop):
            kind = "array" if prop.get("type") == "array" else "object"
            prop = {"description": prop["description"], "type": kind}
        properties[key] = prop
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "lakit/problem.schema.json",
        **generated,
        "properties": properties,
    }


if __name__ == "__main__":
    SCHEMA_PATH.write_text(json.dumps(top_level_schema(), indent=2) + "\n")
    print(f"Wrote {SCHEMA_PATH}")
