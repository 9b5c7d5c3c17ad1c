"""Staged diagnostic VQA dataset construction.

Input is a JSONL case manifest (one scan per line with its per-disease
labels), output is three JSONL sample files (stage1 / stage2 / test) plus a
statistics report. Everything is deterministic in the top-level seed: every
per-case or per-source random decision derives its generator from a stable
hash, so results do not depend on input order or parallel scheduling.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ._seeding import fisher_yates_select, stable_hash64
from .schema import (
    DiseaseSchema,
    SchemaViolation,
    SCAN_TYPES,
    normalize_text,
)

STAGE1 = "stage1"
STAGE2 = "stage2"
TEST = "test"
STAGES = (STAGE1, STAGE2, TEST)

QUALITIES = ("high", "noisy")


class BuilderError(Exception):
    """Base class for dataset-construction failures."""


class UnknownDisease(BuilderError):
    def __init__(self, disease_id: int, line: int = 0):
        self.disease_id = disease_id
        self.line = line
        super().__init__(f"line {line}: unknown disease id {disease_id}")


class InapplicableDisease(BuilderError):
    def __init__(self, disease_id: int, scan_type: str, line: int = 0):
        self.disease_id = disease_id
        self.line = line
        super().__init__(
            f"line {line}: disease {disease_id} is not applicable to "
            f"{scan_type!r} scans"
        )


class RuleConflict(BuilderError):
    """Two equal-priority mapping rules fired for the same disease."""


class MissingTemplate(BuilderError):
    """A labeled disease has no question templates."""


class EmptySource(BuilderError):
    """A split was requested over no cases (or a named source is absent)."""


class InfeasiblePolicy(BuilderError):
    """The split policy cannot be satisfied (bad fractions, or a source too
    small to appear in every stage)."""


@dataclass
class CaseRecord:
    """One scanned case: its mesh, scan type, quality flag, and labels."""

    case_id: str
    source: str
    scan_type: str
    mesh_path: str
    labels: dict[int, str]
    quality: str = "noisy"


@dataclass
class VqaSample:
    """One question/answer pair tied to a case and a disease."""

    sample_id: str
    case_id: str
    disease_id: int
    question: str
    answer_label: str
    rationale: str | None = None
    has_rationale_slot: bool = False
    stage: str = STAGE1
    rationale_source: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


# ---------------------------------------------------------------------------
# manifest


def _case_from_dict(entry: dict, schema: DiseaseSchema, line: int) -> CaseRecord:
    for key in ("case_id", "source", "scan_type", "mesh_path", "labels"):
        if key not in entry:
            raise SchemaViolation(f"missing field {key!r}", line)
    case_id = entry["case_id"]
    if not isinstance(case_id, str) or not case_id:
        raise SchemaViolation("case_id must be a non-empty string", line)
    scan_type = entry["scan_type"]
    if scan_type not in SCAN_TYPES:
        raise SchemaViolation(f"unknown scan_type {scan_type!r}", line)
    quality = entry.get("quality", "noisy")
    if quality not in QUALITIES:
        raise SchemaViolation(f"unknown quality {quality!r}", line)
    raw_labels = entry["labels"]
    if not isinstance(raw_labels, dict):
        raise SchemaViolation("labels must be an object", line)
    labels: dict[int, str] = {}
    for key, value in raw_labels.items():
        try:
            did = int(key)
        except (TypeError, ValueError):
            raise SchemaViolation(f"label key {key!r} is not a disease id", line) from None
        disease = schema.by_id.get(did)
        if disease is None:
            raise UnknownDisease(did, line)
        if not disease.applies_to(scan_type):
            raise InapplicableDisease(did, scan_type, line)
        if not isinstance(value, str) or normalize_text(value) not in (
            normalize_text(lbl) for lbl in disease.labels
        ):
            raise SchemaViolation(
                f"label {value!r} is not in the label set of disease {did}", line
            )
        # store the canonical label spelling
        canonical = {normalize_text(lbl): lbl for lbl in disease.labels}
        labels[did] = canonical[normalize_text(value)]
    return CaseRecord(
        case_id=case_id,
        source=str(entry["source"]),
        scan_type=scan_type,
        mesh_path=str(entry["mesh_path"]),
        labels=labels,
        quality=quality,
    )


def load_manifest(path: str | Path, schema: DiseaseSchema) -> list[CaseRecord]:
    """Read and validate a JSONL case manifest.

    Every record is checked against the schema: labeled diseases must exist
    and be applicable to the record's scan type, labels must come from the
    disease's label set, and case ids must be unique. Errors carry the
    1-based line number. mesh_path is not checked for existence here; that
    is the converter's concern.
    """
    cases: list[CaseRecord] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                entry = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc}", line_no) from exc
            case = _case_from_dict(entry, schema, line_no)
            if case.case_id in seen:
                raise SchemaViolation(
                    f"duplicate case_id {case.case_id!r} "
                    f"(first seen on line {seen[case.case_id]})",
                    line_no,
                )
            seen[case.case_id] = line_no
            cases.append(case)
    return cases


# ---------------------------------------------------------------------------
# mapping rules (raw 2D-diagnosis records -> disease labels)


@dataclass
class MappingRule:
    """Maps a raw record field to a (disease, label) via one predicate.

    Exactly one of equals / in_set / regex must be given. Higher priority
    wins; two distinct rules for the same disease that both match at the
    same (maximal) priority are a conflict.
    """

    source_field: str
    disease_id: int
    label: str
    priority: int = 0
    equals: str | None = None
    in_set: tuple[str, ...] | None = None
    regex: str | None = None

    def __post_init__(self) -> None:
        kinds = [k is not None for k in (self.equals, self.in_set, self.regex)]
        if sum(kinds) != 1:
            raise SchemaViolation(
                "rule must have exactly one of equals / in_set / regex"
            )
        if self.in_set is not None:
            self.in_set = tuple(str(x) for x in self.in_set)
        self._compiled = re.compile(self.regex) if self.regex is not None else None

    def matches(self, record: dict) -> bool:
        if self.source_field not in record:
            return False
        value = str(record[self.source_field])
        if self.equals is not None:
            return value == self.equals
        if self.in_set is not None:
            return value in self.in_set
        return self._compiled.search(value) is not None


def validate_rules(rules: list[MappingRule], schema: DiseaseSchema) -> None:
    """Static checks: targets exist and labels are legal for their disease."""
    for rule in rules:
        disease = schema.by_id.get(rule.disease_id)
        if disease is None:
            raise UnknownDisease(rule.disease_id)
        if rule.label not in disease.labels:
            raise SchemaViolation(
                f"rule targets label {rule.label!r} outside disease "
                f"{rule.disease_id}'s label set"
            )


def apply_mapping(record: dict, rules: list[MappingRule]) -> dict[int, str]:
    """Evaluate all rules against a raw record and keep, per disease, the
    label of the highest-priority matching rule.

    Raises RuleConflict when two distinct rules for one disease match at the
    same maximal priority (regardless of whether they agree on the label).
    """
    fired: dict[int, list[MappingRule]] = {}
    for rule in rules:
        if rule.matches(record):
            fired.setdefault(rule.disease_id, []).append(rule)
    labels: dict[int, str] = {}
    for disease_id, matched in fired.items():
        top = max(rule.priority for rule in matched)
        winners = [rule for rule in matched if rule.priority == top]
        if len(winners) > 1:
            raise RuleConflict(
                f"{len(winners)} rules for disease {disease_id} matched at "
                f"priority {top}"
            )
        labels[disease_id] = winners[0].label
    return labels


# ---------------------------------------------------------------------------
# question generation


@dataclass
class QuestionPolicy:
    """How many questions to emit per labeled disease, per (source, stage).

    default_k applies everywhere unless an override exists; overrides key on
    (source, stage). Small sources can be oversampled this way (e.g. 9
    questions in stage1 and 3 in stage2).
    """

    default_k: int = 1
    overrides: dict[tuple[str, str], int] = field(default_factory=dict)

    def k_for(self, source: str, stage: str) -> int:
        k = self.overrides.get((source, stage), self.default_k)
        if k < 1:
            raise InfeasiblePolicy(f"k must be >= 1, got {k} for {source}/{stage}")
        return k


def generate_qa(
    case: CaseRecord,
    schema: DiseaseSchema,
    templates: dict[int, list[str]],
    k_questions: int,
    seed: int,
    stage: str = STAGE1,
) -> list[VqaSample]:
    """Emit k_questions samples per labeled disease of the case.

    Question selection uses a generator seeded by (seed, case_id,
    disease_id): k <= template count draws distinct templates, larger k
    falls back to independent uniform draws. Raises MissingTemplate when a
    labeled disease has no templates.
    """
    if k_questions < 1:
        raise ValueError(f"k_questions must be >= 1, got {k_questions}")
    samples: list[VqaSample] = []
    for disease_id in sorted(case.labels):
        pool = templates.get(disease_id)
        if not pool:
            raise MissingTemplate(f"no question templates for disease {disease_id}")
        rng = np.random.default_rng(stable_hash64(seed, case.case_id, disease_id))
        if k_questions <= len(pool):
            picks = fisher_yates_select(len(pool), k_questions, rng)
        else:
            picks = rng.integers(0, len(pool), size=k_questions)
        for j, t_idx in enumerate(picks):
            samples.append(
                VqaSample(
                    sample_id=f"{case.case_id}:{disease_id}:{j}",
                    case_id=case.case_id,
                    disease_id=disease_id,
                    question=pool[int(t_idx)],
                    answer_label=case.labels[disease_id],
                    stage=stage,
                )
            )
    return samples


# ---------------------------------------------------------------------------
# stage splitting


@dataclass
class SplitPolicy:
    """Per-source stage fractions plus the forced high-quality routing.

    fractions is (stage1, stage2, test) and must sum to 1; per_source may
    override fractions for named sources. Cases with quality="high" from
    high_quality_source are all assigned to stage2 before the remainder is
    split randomly.
    """

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    per_source: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    high_quality_source: str | None = None

    def __post_init__(self) -> None:
        for name, fr in [("fractions", self.fractions)] + [
            (f"per_source[{s}]", fr) for s, fr in self.per_source.items()
        ]:
            fr = tuple(float(x) for x in fr)
            if len(fr) != 3 or any(x < 0 for x in fr):
                raise InfeasiblePolicy(f"{name} must be 3 non-negative numbers")
            if abs(sum(fr) - 1.0) > 1e-9:
                raise InfeasiblePolicy(f"{name} must sum to 1, got {sum(fr)}")

    def fractions_for(self, source: str) -> tuple[float, float, float]:
        return self.per_source.get(source, self.fractions)


def split_stages(
    cases: list[CaseRecord], policy: SplitPolicy, seed: int
) -> dict[str, str]:
    """Assign every case to exactly one stage, per source.

    Forced high-quality cases go to stage2 first; the per-source remainder
    is shuffled with a source-derived seed and cut by the policy fractions
    (floor for stage1 and test, stage2 takes the rest). Raises EmptySource
    for an empty manifest or an absent designated source, InfeasiblePolicy
    when any source ends up missing from any stage.
    """
    if not cases:
        raise EmptySource("manifest has no cases")
    by_source: dict[str, list[CaseRecord]] = {}
    for case in cases:
        by_source.setdefault(case.source, []).append(case)
    if policy.high_quality_source is not None and (
        policy.high_quality_source not in by_source
    ):
        raise EmptySource(
            f"designated source {policy.high_quality_source!r} has no cases"
        )
    for source in policy.per_source:
        if source not in by_source:
            raise EmptySource(f"per-source policy names absent source {source!r}")

    assignment: dict[str, str] = {}
    for source in sorted(by_source):
        group = by_source[source]
        f1, f2, ftest = policy.fractions_for(source)
        forced = []
        rest_ids = []
        for case in group:
            if source == policy.high_quality_source and case.quality == "high":
                forced.append(case.case_id)
            else:
                rest_ids.append(case.case_id)
        rest_ids.sort()
        rng = np.random.default_rng(stable_hash64(seed, "split", source))
        order = fisher_yates_select(len(rest_ids), len(rest_ids), rng) if rest_ids else []
        shuffled = [rest_ids[int(i)] for i in order]
        n = len(shuffled)
        n1 = math.floor(f1 * n)
        nt = math.floor(ftest * n)
        for cid in forced:
            assignment[cid] = STAGE2
        for cid in shuffled[:n1]:
            assignment[cid] = STAGE1
        for cid in shuffled[n1:n - nt]:
            assignment[cid] = STAGE2
        for cid in shuffled[n - nt:]:
            assignment[cid] = TEST
        counts = {stage: 0 for stage in STAGES}
        for case in group:
            counts[assignment[case.case_id]] += 1
        missing = [stage for stage, c in counts.items() if c == 0]
        if missing:
            raise InfeasiblePolicy(
                f"source {source!r} has no cases in stage(s) {missing} "
                f"({len(group)} cases, fractions {f1}/{f2}/{ftest})"
            )
    return assignment


def flag_rationales(
    samples: list[VqaSample], fraction: float, seed: int
) -> list[VqaSample]:
    """Mark floor(fraction * n) samples as rationale slots, chosen uniformly.

    Selection is by sorted sample_id, so it does not depend on list order.
    The rationale text itself stays empty; this only reserves and accounts
    for the slots. Returns a new list (inputs are not mutated).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n_flag = math.floor(fraction * len(samples))
    order = sorted(range(len(samples)), key=lambda i: samples[i].sample_id)
    rng = np.random.default_rng(stable_hash64(seed, "rationale-flags"))
    chosen = {order[int(i)] for i in fisher_yates_select(len(samples), n_flag, rng)} \
        if samples else set()
    out = []
    for i, s in enumerate(samples):
        out.append(
            VqaSample(
                sample_id=s.sample_id,
                case_id=s.case_id,
                disease_id=s.disease_id,
                question=s.question,
                answer_label=s.answer_label,
                rationale=s.rationale,
                has_rationale_slot=(i in chosen) or s.has_rationale_slot,
                stage=s.stage,
                rationale_source=s.rationale_source,
            )
        )
    return out


# ---------------------------------------------------------------------------
# statistics


def dataset_stats(
    samples: list[VqaSample],
    cases: list[CaseRecord],
    schema: DiseaseSchema,
) -> dict:
    """Machine-checkable accounting of a built dataset.

    Per-source case and sample counts (sources come from the case records;
    samples whose case is not in `cases` are counted under "unknown"),
    per-stage sample counts, per-disease answer-label histograms, and
    per-source counts of distinct labeled single-arch / occluded-arch
    diseases. Per-source counts always add up to the totals.
    """
    case_source = {c.case_id: c.source for c in cases}
    per_source: dict[str, dict] = {}
    for c in cases:
        slot = per_source.setdefault(
            c.source,
            {"cases": 0, "samples": 0, "single_arch_diseases": set(),
             "occluded_arch_diseases": set()},
        )
        slot["cases"] += 1
        for did in c.labels:
            disease = schema.by_id[did]
            if disease.applicability == "single-arch":
                slot["single_arch_diseases"].add(did)
            elif disease.applicability == "occluded-arches":
                slot["occluded_arch_diseases"].add(did)
            else:
                slot["single_arch_diseases"].add(did)
                slot["occluded_arch_diseases"].add(did)

    per_stage = {stage: 0 for stage in STAGES}
    per_disease: dict[int, dict[str, int]] = {}
    rationale_slots = 0
    for s in samples:
        source = case_source.get(s.case_id, "unknown")
        slot = per_source.setdefault(
            source,
            {"cases": 0, "samples": 0, "single_arch_diseases": set(),
             "occluded_arch_diseases": set()},
        )
        slot["samples"] += 1
        if s.stage in per_stage:
            per_stage[s.stage] += 1
        hist = per_disease.setdefault(s.disease_id, {})
        hist[s.answer_label] = hist.get(s.answer_label, 0) + 1
        if s.has_rationale_slot:
            rationale_slots += 1

    return {
        "total_cases": len(cases),
        "total_samples": len(samples),
        "rationale_slots": rationale_slots,
        "per_stage": per_stage,
        "per_source": {
            source: {
                "cases": slot["cases"],
                "samples": slot["samples"],
                "single_arch_diseases": len(slot["single_arch_diseases"]),
                "occluded_arch_diseases": len(slot["occluded_arch_diseases"]),
            }
            for source, slot in sorted(per_source.items())
        },
        "per_disease": {
            did: dict(sorted(hist.items()))
            for did, hist in sorted(per_disease.items())
        },
    }


def format_stats_table(stats: dict) -> str:
    """Plain-text summary table of a stats report (one row per source)."""
    lines = [
        f"{'source':<16} {'cases':>8} {'samples':>9} {'#SD':>4} {'#OD':>4}",
    ]
    for source, slot in stats["per_source"].items():
        lines.append(
            f"{source:<16} {slot['cases']:>8} {slot['samples']:>9} "
            f"{slot['single_arch_diseases']:>4} {slot['occluded_arch_diseases']:>4}"
        )
    lines.append(
        f"{'total':<16} {stats['total_cases']:>8} {stats['total_samples']:>9}"
    )
    stages = ", ".join(f"{k}={v}" for k, v in stats["per_stage"].items())
    lines.append(f"stage sizes: {stages}; rationale slots: {stats['rationale_slots']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# synthetic manifests


def synth_manifest(
    seed: int,
    n_cases: int,
    schema: DiseaseSchema,
    sources: dict[str, int] | None = None,
    high_quality_fraction: float = 0.3,
) -> bytes:
    """Generate a valid JSONL manifest of synthetic cases.

    With `sources` given (name -> case count), n_cases is ignored and each
    source gets exactly its count; otherwise n_cases is spread over up to
    three synthetic sources of descending size, each with at least 10 cases
    (so the default 0.8/0.1/0.1 split stays feasible for every source). Each
    case gets a scan type, 1-4 applicable diseases with uniformly drawn
    labels, and a quality flag (high with probability
    high_quality_fraction). All draws derive from (seed, source, index), so
    output is byte-deterministic.
    """
    if sources is None:
        if n_cases < 1:
            raise ValueError("n_cases must be >= 1")
        if n_cases >= 60:
            c = max(10, n_cases // 20)
            b = max(10, n_cases // 4)
            sources = {"synth-a": n_cases - b - c, "synth-b": b, "synth-c": c}
        elif n_cases >= 20:
            sources = {"synth-a": n_cases - 10, "synth-b": 10}
        else:
            sources = {"synth-a": n_cases}

    single = [d.id for d in schema.diseases if d.applies_to("single-arch")]
    occluded = [d.id for d in schema.diseases if d.applies_to("occluded-arches")]
    lines = []
    for source, count in sources.items():
        if count < 1:
            raise ValueError(f"source {source!r} must have at least 1 case")
        for i in range(count):
            rng = np.random.default_rng(stable_hash64(seed, "synth", source, i))
            case_id = f"{source}-{i:06d}"
            scan_type = SCAN_TYPES[int(rng.integers(0, 2))]
            pool = single if scan_type == "single-arch" else occluded
            n_dis = int(rng.integers(1, min(4, len(pool)) + 1))
            picked = [pool[int(j)] for j in fisher_yates_select(len(pool), n_dis, rng)]
            labels = {}
            for did in sorted(picked):
                disease = schema.by_id[did]
                labels[str(did)] = disease.labels[
                    int(rng.integers(0, len(disease.labels)))
                ]
            quality = "high" if rng.random() < high_quality_fraction else "noisy"
            record = {
                "case_id": case_id,
                "source": source,
                "scan_type": scan_type,
                "mesh_path": f"meshes/{case_id}.stl",
                "labels": labels,
                "quality": quality,
            }
            lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# end-to-end build


@dataclass
class BuildResult:
    samples_by_stage: dict[str, list[VqaSample]]
    assignment: dict[str, str]
    stats: dict


def build_dataset(
    cases: list[CaseRecord],
    schema: DiseaseSchema,
    templates: dict[int, list[str]],
    split_policy: SplitPolicy,
    question_policy: QuestionPolicy,
    rationale_fraction: float,
    seed: int,
) -> BuildResult:
    """Split cases, generate questions, flag rationale slots, compute stats.

    Samples within each stage are ordered by (case_id, disease_id, question
    index), so serializing the result is byte-deterministic.
    """
    assignment = split_stages(cases, split_policy, seed)
    by_stage: dict[str, list[VqaSample]] = {stage: [] for stage in STAGES}
    for case in sorted(cases, key=lambda c: c.case_id):
        stage = assignment[case.case_id]
        k = question_policy.k_for(case.source, stage)
        by_stage[stage].extend(
            generate_qa(case, schema, templates, k, seed, stage)
        )
    by_stage[STAGE2] = flag_rationales(by_stage[STAGE2], rationale_fraction, seed)
    all_samples = [s for stage in STAGES for s in by_stage[stage]]
    stats = dataset_stats(all_samples, cases, schema)
    return BuildResult(by_stage, assignment, stats)


def write_samples(samples: list[VqaSample], path: str | Path) -> None:
    text = "".join(s.to_json() + "\n" for s in samples)
    Path(path).write_text(text, encoding="utf-8")


def read_samples(path: str | Path) -> list[VqaSample]:
    """Read a stage file back into VqaSample records (validating fields)."""
    out: list[VqaSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                entry = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc}", line_no) from exc
            try:
                out.append(
                    VqaSample(
                        sample_id=str(entry["sample_id"]),
                        case_id=str(entry["case_id"]),
                        disease_id=int(entry["disease_id"]),
                        question=str(entry["question"]),
                        answer_label=str(entry["answer_label"]),
                        rationale=entry.get("rationale"),
                        has_rationale_slot=bool(entry.get("has_rationale_slot", False)),
                        stage=str(entry.get("stage", STAGE1)),
                        rationale_source=entry.get("rationale_source"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"bad sample record: {exc}", line_no) from exc
    return out
