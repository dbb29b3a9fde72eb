"""Canonical JSON documents for twin models."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .sdtm import DanglingReference, DigitalTwinPackage, DuplicateId, SdtmError
from .validation import REFERENCE_RULES, ValidationFailed, validate

SCHEMA = "sdtm/1"
_TOP_LISTS = ("terminologyPackages", "artifactPackages", "componentPackages")


class ModelSyntaxError(SdtmError, ValueError):
    pass


def to_document(pkg: DigitalTwinPackage) -> dict[str, Any]:
    doc = pkg.model_dump(mode="json", by_alias=True, exclude_defaults=True)
    for key in _TOP_LISTS:
        doc.setdefault(key, [])
    doc["schema"] = SCHEMA
    return doc


def dumps(pkg: DigitalTwinPackage) -> str:
    """Serialize with sorted keys; equal packages give identical text."""
    return json.dumps(to_document(pkg), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def from_document(doc: Any) -> DigitalTwinPackage:
    """Build a package from a parsed document without reference checks."""
    if not isinstance(doc, dict):
        raise ModelSyntaxError("model document must be a JSON object")
    doc = dict(doc)
    schema = doc.pop("schema", None)
    if schema != SCHEMA:
        raise ModelSyntaxError(f"unsupported schema {schema!r}, expected {SCHEMA!r}")
    try:
        return DigitalTwinPackage.model_validate(doc)
    except ValidationError as exc:
        raise ModelSyntaxError(str(exc)) from None


def loads(text: str | bytes) -> DigitalTwinPackage:
    """Parse and link a model document.

    Raises ModelSyntaxError, DuplicateId or DanglingReference.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelSyntaxError(str(exc)) from None
    pkg = from_document(doc)
    violations = validate(pkg, constraints=False)
    for v in violations:
        if v.rule == "id-unique":
            raise DuplicateId(v.element_id)
    for v in violations:
        if v.rule in REFERENCE_RULES:
            raise DanglingReference(v.ref or v.element_id, v.element_id)
    return pkg


def load_model(path: str | Path) -> DigitalTwinPackage:
    return loads(Path(path).read_bytes())


def save_model(pkg: DigitalTwinPackage, path: str | Path) -> None:
    violations = validate(pkg)
    if violations:
        raise ValidationFailed(violations)
    Path(path).write_text(dumps(pkg), encoding="utf-8")


def json_schema() -> dict[str, Any]:
    """JSON Schema (draft 2020-12) of a model document."""
    s = DigitalTwinPackage.model_json_schema(by_alias=True)
    s["properties"] = {"schema": {"const": SCHEMA, "type": "string"}, **s["properties"]}
    s["required"] = ["schema", *s.get("required", [])]
    s["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    s["title"] = f"{SCHEMA} model document"
    return s
