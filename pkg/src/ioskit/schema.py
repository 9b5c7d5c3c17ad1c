"""Disease schema: the label space the dataset builder and scorer share.

A schema is an ordered list of disease descriptors (consecutive ids starting
at 1). Each disease has an applicability (which scan types it can be
diagnosed on), a label set of at least two answer labels, and optional
aliases per label. A default 23-disease schema ships with the package as
plain JSON; the disease names and label sets there are placeholders meant to
be replaced by a clinical schema file with the same shape.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

SINGLE_ARCH = "single-arch"
OCCLUDED_ARCHES = "occluded-arches"
SCAN_TYPES = (SINGLE_ARCH, OCCLUDED_ARCHES)
APPLICABILITIES = (SINGLE_ARCH, OCCLUDED_ARCHES, "both")

_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?"


class SchemaViolation(Exception):
    """A schema or manifest record breaks a structural rule.

    Carries the 1-based line number when the problem is tied to a line of a
    JSONL file (0 when it is not).
    """

    def __init__(self, reason: str, line: int = 0):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}" if line else reason)


def normalize_text(text: str) -> str:
    """Canonical answer/label form: lowercase, trimmed, single spaces,
    terminal punctuation stripped."""
    out = _WS.sub(" ", text.lower().strip())
    return out.rstrip(_TERMINAL_PUNCT).strip()


@dataclass
class Disease:
    """One diagnosable condition with its closed answer-label set."""

    id: int
    name: str
    applicability: str
    labels: list[str]
    aliases: dict[str, list[str]] = field(default_factory=dict)

    def applies_to(self, scan_type: str) -> bool:
        return self.applicability == "both" or self.applicability == scan_type

    def surface_forms(self) -> dict[str, str]:
        """Map every normalized label/alias string to its canonical label."""
        forms: dict[str, str] = {}
        for label in self.labels:
            forms[normalize_text(label)] = label
            for alias in self.aliases.get(label, ()):
                forms[normalize_text(alias)] = label
        return forms


@dataclass
class DiseaseSchema:
    diseases: list[Disease]

    def __post_init__(self) -> None:
        self.by_id = {d.id: d for d in self.diseases}
        self.validate()

    def __len__(self) -> int:
        return len(self.diseases)

    def validate(self) -> None:
        if not self.diseases:
            raise SchemaViolation("schema has no diseases")
        ids = [d.id for d in self.diseases]
        if ids != list(range(1, len(ids) + 1)):
            raise SchemaViolation(
                f"disease ids must be consecutive starting at 1, got {ids}"
            )
        names = set()
        for d in self.diseases:
            if not d.name:
                raise SchemaViolation(f"disease {d.id} has an empty name")
            if d.name in names:
                raise SchemaViolation(f"duplicate disease name {d.name!r}")
            names.add(d.name)
            if d.applicability not in APPLICABILITIES:
                raise SchemaViolation(
                    f"disease {d.id}: unknown applicability {d.applicability!r}"
                )
            if len(d.labels) < 2:
                raise SchemaViolation(
                    f"disease {d.id}: label set needs at least 2 labels"
                )
            seen: dict[str, str] = {}
            for label in d.labels:
                norm = normalize_text(label)
                if not norm:
                    raise SchemaViolation(f"disease {d.id}: empty label")
                if norm in seen:
                    raise SchemaViolation(
                        f"disease {d.id}: labels {seen[norm]!r} and {label!r} collide"
                    )
                seen[norm] = label
            for label, alias_list in d.aliases.items():
                if label not in d.labels:
                    raise SchemaViolation(
                        f"disease {d.id}: aliases for unknown label {label!r}"
                    )
                for alias in alias_list:
                    norm = normalize_text(alias)
                    if not norm:
                        raise SchemaViolation(f"disease {d.id}: empty alias")
                    if norm in seen and seen[norm] != label:
                        raise SchemaViolation(
                            f"disease {d.id}: alias {alias!r} collides with "
                            f"{seen[norm]!r}"
                        )
                    seen[norm] = label

    def counts_by_applicability(self) -> dict[str, int]:
        out = {a: 0 for a in APPLICABILITIES}
        for d in self.diseases:
            out[d.applicability] += 1
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "DiseaseSchema":
        if not isinstance(payload, dict) or "diseases" not in payload:
            raise SchemaViolation("schema JSON must be an object with 'diseases'")
        diseases = []
        for entry in payload["diseases"]:
            try:
                diseases.append(
                    Disease(
                        id=int(entry["id"]),
                        name=str(entry["name"]),
                        applicability=str(entry["applicability"]),
                        labels=[str(x) for x in entry["labels"]],
                        aliases={
                            str(k): [str(a) for a in v]
                            for k, v in entry.get("aliases", {}).items()
                        },
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"bad disease entry: {exc}") from exc
        return cls(diseases)

    def to_dict(self) -> dict:
        return {
            "diseases": [
                {
                    "id": d.id,
                    "name": d.name,
                    "applicability": d.applicability,
                    "labels": list(d.labels),
                    "aliases": {k: list(v) for k, v in d.aliases.items()},
                }
                for d in self.diseases
            ]
        }


def load_schema(path: str | Path) -> DiseaseSchema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"schema file is not valid JSON: {exc}") from exc
    return DiseaseSchema.from_dict(payload)


def default_schema() -> DiseaseSchema:
    """The packaged 23-disease placeholder schema (8 single-arch + 15
    occluded-arch conditions)."""
    text = resources.files("ioskit.data").joinpath("default_schema.json").read_text("utf-8")
    return DiseaseSchema.from_dict(json.loads(text))


def load_templates(path: str | Path) -> dict[int, list[str]]:
    """Question templates keyed by disease id (JSON object, string keys)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"template file is not valid JSON: {exc}") from exc
    return _templates_from_dict(payload)


def default_templates() -> dict[int, list[str]]:
    text = resources.files("ioskit.data").joinpath("default_templates.json").read_text("utf-8")
    return _templates_from_dict(json.loads(text))


def _templates_from_dict(payload: dict) -> dict[int, list[str]]:
    if not isinstance(payload, dict):
        raise SchemaViolation("templates JSON must be an object keyed by disease id")
    out: dict[int, list[str]] = {}
    for key, value in payload.items():
        try:
            did = int(key)
        except ValueError:
            raise SchemaViolation(f"template key {key!r} is not a disease id") from None
        if not isinstance(value, list) or not all(isinstance(q, str) for q in value):
            raise SchemaViolation(f"templates for disease {key} must be a string list")
        out[did] = list(value)
    return out
