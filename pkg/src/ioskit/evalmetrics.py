"""Free-form answer parsing and macro diagnosis metrics.

Parsing maps generated text onto a disease's closed label set through a
fixed cascade: a structured "Answer:" prefix when present, then exact match
of the normalized text, then unique whole-word containment. Anything else is
unparsable. Metrics treat unparsable answers as wrong (a false negative for
the gold class, never a false positive), and report per-disease accuracy,
class-macro precision/recall/F1, and parsing rate, plus the unweighted
across-disease macro of each.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .builder import VqaSample, read_samples
from .schema import Disease, DiseaseSchema, normalize_text

NO_MATCH = "no-match"
AMBIGUOUS = "ambiguous"
EMPTY = "empty"

_ANSWER_PREFIX = re.compile(r"\banswer\s*:\s*", re.IGNORECASE)
_RATIONALE_MARK = re.compile(r"\brationale\s*:", re.IGNORECASE)


class EvalError(Exception):
    """Base class for scoring failures."""


class UnknownSampleId(EvalError):
    """A prediction references a sample id absent from the gold set."""


class DuplicatePrediction(EvalError):
    """Two predictions share a sample id."""


@dataclass
class ParsedAnswer:
    """Outcome of parsing one answer: a canonical label, or why not."""

    label: str | None
    reason: str | None = None  # no-match / ambiguous / empty when label is None

    @property
    def parsable(self) -> bool:
        return self.label is not None


class LabelMatcher:
    """Precompiled surface-form matching for one disease's label set."""

    def __init__(self, disease: Disease):
        self.disease_id = disease.id
        self.forms = disease.surface_forms()  # normalized form -> canonical label
        # longest-first so overlapping forms are each given their own word
        # boundary test; matching collects distinct *labels*, not forms
        self.patterns = [
            (re.compile(rf"(?<!\w){re.escape(form)}(?!\w)"), label)
            for form, label in sorted(
                self.forms.items(), key=lambda kv: -len(kv[0])
            )
        ]

    def exact(self, normalized: str) -> str | None:
        return self.forms.get(normalized)

    def contained(self, normalized: str) -> set[str]:
        return {label for pat, label in self.patterns if pat.search(normalized)}


def build_matchers(schema: DiseaseSchema) -> dict[int, LabelMatcher]:
    return {d.id: LabelMatcher(d) for d in schema.diseases}


def _cascade(normalized: str, matcher: LabelMatcher) -> ParsedAnswer:
    if not normalized:
        return ParsedAnswer(None, EMPTY)
    label = matcher.exact(normalized)
    if label is not None:
        return ParsedAnswer(label)
    found = matcher.contained(normalized)
    if len(found) == 1:
        return ParsedAnswer(found.pop())
    if len(found) > 1:
        return ParsedAnswer(None, AMBIGUOUS)
    return ParsedAnswer(None, NO_MATCH)


def parse_answer(text: str | None, matcher: LabelMatcher) -> ParsedAnswer:
    """Parse generated text against one disease's label set.

    An "Answer: ..." segment (cut at a following "Rationale:" marker) is
    tried first; a label or an ambiguity found there is final, an empty or
    unmatched segment falls back to the whole text. Matching is on the
    normalized text (lowercased, single-spaced, terminal punctuation
    stripped); containment requires word boundaries, so "normal" does not
    fire inside "abnormal".
    """
    if text is None:
        return ParsedAnswer(None, EMPTY)
    normalized = normalize_text(text)
    if not normalized:
        return ParsedAnswer(None, EMPTY)
    m = _ANSWER_PREFIX.search(normalized)
    if m:
        segment = normalized[m.end():]
        r = _RATIONALE_MARK.search(segment)
        if r:
            segment = segment[:r.start()]
        segment = normalize_text(segment)
        parsed = _cascade(segment, matcher)
        if parsed.parsable or parsed.reason == AMBIGUOUS:
            return parsed
    return _cascade(normalized, matcher)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass
class DiseaseMetrics:
    disease_id: int
    sample_count: int
    parsable_count: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    parsing_rate: float
    per_class: dict[str, ClassMetrics] = field(default_factory=dict)


@dataclass
class MetricsReport:
    """Per-disease metrics plus two aggregate views.

    `macro` is the headline: each field averaged unweighted over the
    diseases present in the gold set (precision/recall/F1 are class-macro
    within each disease first). `macro_classes_pooled` instead averages
    precision/recall/F1 unweighted over every (disease, class) cell.
    """

    per_disease: dict[int, DiseaseMetrics]
    macro: dict[str, float]
    macro_classes_pooled: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "macro": self.macro,
            "macro_classes_pooled": self.macro_classes_pooled,
            "per_disease": {
                did: {
                    "sample_count": m.sample_count,
                    "parsable_count": m.parsable_count,
                    "accuracy": m.accuracy,
                    "macro_precision": m.macro_precision,
                    "macro_recall": m.macro_recall,
                    "macro_f1": m.macro_f1,
                    "parsing_rate": m.parsing_rate,
                    "per_class": {
                        label: {
                            "precision": c.precision,
                            "recall": c.recall,
                            "f1": c.f1,
                            "tp": c.tp,
                            "fp": c.fp,
                            "fn": c.fn,
                        }
                        for label, c in m.per_class.items()
                    },
                }
                for did, m in self.per_disease.items()
            },
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(
    predictions: dict[str, str | None],
    gold: list[VqaSample],
    schema: DiseaseSchema,
    matchers: dict[int, LabelMatcher] | None = None,
) -> MetricsReport:
    """Score predictions (sample_id -> generated text) against gold samples.

    Every gold sample is scored; a missing prediction counts as unparsable.
    Prediction ids not in the gold set raise UnknownSampleId. Per disease,
    the classes under P/R/F1 are those appearing in the gold labels or the
    parsed predictions; an unparsable answer adds a false negative to its
    gold class and no false positive anywhere.
    """
    gold_ids = {s.sample_id for s in gold}
    if len(gold_ids) != len(gold):
        raise ValueError("gold sample ids are not unique")
    for sid in predictions:
        if sid not in gold_ids:
            raise UnknownSampleId(f"prediction for unknown sample id {sid!r}")
    if matchers is None:
        matchers = build_matchers(schema)

    by_disease: dict[int, list[VqaSample]] = {}
    for s in gold:
        if s.disease_id not in matchers:
            raise ValueError(f"gold sample {s.sample_id} has unknown disease id")
        by_disease.setdefault(s.disease_id, []).append(s)

    per_disease: dict[int, DiseaseMetrics] = {}
    for did in sorted(by_disease):
        samples = by_disease[did]
        matcher = matchers[did]
        parsed: list[ParsedAnswer] = [
            parse_answer(predictions.get(s.sample_id), matcher) for s in samples
        ]
        n = len(samples)
        n_parsable = sum(1 for p in parsed if p.parsable)
        n_correct = sum(
            1 for s, p in zip(samples, parsed) if p.parsable and p.label == s.answer_label
        )
        classes = sorted(
            {s.answer_label for s in samples}
            | {p.label for p in parsed if p.parsable}
        )
        per_class: dict[str, ClassMetrics] = {}
        for cls in classes:
            tp = sum(
                1
                for s, p in zip(samples, parsed)
                if s.answer_label == cls and p.label == cls
            )
            fp = sum(
                1
                for s, p in zip(samples, parsed)
                if p.parsable and p.label == cls and s.answer_label != cls
            )
            fn = sum(
                1
                for s, p in zip(samples, parsed)
                if s.answer_label == cls and p.label != cls
            )
            precision = _safe_div(tp, tp + fp)
            recall = _safe_div(tp, tp + fn)
            f1 = _safe_div(2 * precision * recall, precision + recall)
            per_class[cls] = ClassMetrics(precision, recall, f1, tp, fp, fn)
        k = len(per_class)
        per_disease[did] = DiseaseMetrics(
            disease_id=did,
            sample_count=n,
            parsable_count=n_parsable,
            accuracy=_safe_div(n_correct, n),
            macro_precision=_safe_div(sum(c.precision for c in per_class.values()), k),
            macro_recall=_safe_div(sum(c.recall for c in per_class.values()), k),
            macro_f1=_safe_div(sum(c.f1 for c in per_class.values()), k),
            parsing_rate=_safe_div(n_parsable, n),
            per_class=per_class,
        )

    d = len(per_disease)
    macro = {
        key: _safe_div(sum(getattr(m, key) for m in per_disease.values()), d)
        for key in (
            "accuracy", "macro_precision", "macro_recall", "macro_f1", "parsing_rate",
        )
    }
    cells = [c for m in per_disease.values() for c in m.per_class.values()]
    macro_classes_pooled = {
        "precision": _safe_div(sum(c.precision for c in cells), len(cells)),
        "recall": _safe_div(sum(c.recall for c in cells), len(cells)),
        "f1": _safe_div(sum(c.f1 for c in cells), len(cells)),
    }
    return MetricsReport(per_disease, macro, macro_classes_pooled)


def headline_row(report: MetricsReport) -> str:
    """Two-line text table: Acc, F1, Preci, Recall, PR as percentages."""
    m = report.macro
    head = f"{'Acc':>7} {'F1':>7} {'Preci':>7} {'Recall':>7} {'PR':>7}"
    row = (
        f"{m['accuracy'] * 100:>7.2f} {m['macro_f1'] * 100:>7.2f} "
        f"{m['macro_precision'] * 100:>7.2f} {m['macro_recall'] * 100:>7.2f} "
        f"{m['parsing_rate'] * 100:>7.2f}"
    )
    return head + "\n" + row


# ---------------------------------------------------------------------------
# file-level entry point


def read_predictions(path: str | Path) -> dict[str, str | None]:
    """Read a predictions JSONL file ({"sample_id", "generated_text"} rows)."""
    out: dict[str, str | None] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                entry = json.loads(raw)
                sid = str(entry["sample_id"])
                text = entry.get("generated_text")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"line {line_no}: bad prediction record: {exc}") from exc
            if sid in out:
                raise DuplicatePrediction(
                    f"line {line_no}: duplicate prediction for {sid!r}"
                )
            out[sid] = None if text is None else str(text)
    return out


def evaluate_run(
    predictions_path: str | Path,
    gold_path: str | Path,
    schema: DiseaseSchema,
) -> tuple[MetricsReport, list[dict]]:
    """Score a prediction file against a gold stage file.

    Returns the report plus a per-sample audit log (sample id, gold label,
    parsed label or failure reason, correctness).
    """
    predictions = read_predictions(predictions_path)
    gold = read_samples(gold_path)
    matchers = build_matchers(schema)
    report = compute_metrics(predictions, gold, schema, matchers)
    audit = []
    for s in gold:
        parsed = parse_answer(predictions.get(s.sample_id), matchers[s.disease_id])
        audit.append(
            {
                "sample_id": s.sample_id,
                "disease_id": s.disease_id,
                "gold": s.answer_label,
                "parsed": parsed.label,
                "outcome": "parsed" if parsed.parsable else parsed.reason,
                "correct": bool(parsed.parsable and parsed.label == s.answer_label),
            }
        )
    return report, audit
