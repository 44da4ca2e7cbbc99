"""Loader and validators for the wire-protocol JSON schemas.

The *.schema.json files in this package are the single source of truth for
the /detect and /generate payload shapes; serving processes validate against
the same files (see the bridge package's contract tests).
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

SCHEMA_NAMES = (
    "detect_request",
    "detect_response",
    "generate_request",
    "generate_response",
)


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise KeyError(f"unknown schema {name!r}; expected one of {SCHEMA_NAMES}")
    ref = resources.files("active_look.schemas") / f"{name}.schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def validate_payload(name: str, payload: dict) -> None:
    """Raise jsonschema.ValidationError if the payload violates the schema."""
    jsonschema.validate(instance=payload, schema=load_schema(name))
