"""Line-delimited VQA dataset access, a closed word vocabulary, and the
prediction serialization the scoring side understands."""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

EOS = "<eos>"
UNK = "<unk>"
ANSWER_PREFIX = "Answer:"
RATIONALE_PREFIX = "Rationale:"


@dataclasses.dataclass(frozen=True)
class VqaRow:
    """One dataset line. Only the fields this harness consumes are kept."""

    sample_id: str
    case_id: str
    disease_id: int
    question: str
    answer_label: str
    rationale: str | None = None
    stage: str | None = None


def _row_from_dict(obj: dict, lineno: int) -> VqaRow:
    if not isinstance(obj, dict):
        raise ValueError(f"line {lineno}: expected an object")
    for key in ("sample_id", "case_id", "disease_id", "question", "answer_label"):
        if key not in obj:
            raise ValueError(f"line {lineno}: missing field {key!r}")
    rationale = obj.get("rationale")
    if rationale is not None and not isinstance(rationale, str):
        raise ValueError(f"line {lineno}: rationale must be a string or null")
    return VqaRow(
        sample_id=str(obj["sample_id"]),
        case_id=str(obj["case_id"]),
        disease_id=int(obj["disease_id"]),
        question=str(obj["question"]),
        answer_label=str(obj["answer_label"]),
        rationale=rationale,
        stage=obj.get("stage"),
    )


def read_vqa_rows(path: str | Path) -> list[VqaRow]:
    """Read a line-delimited dataset file."""
    rows: list[VqaRow] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: bad JSON: {exc}") from exc
            rows.append(_row_from_dict(obj, lineno))
    return rows


def answer_text(label: str) -> str:
    """The serialization trained and emitted for an answer."""
    return f"{ANSWER_PREFIX} {label}"


def rationale_text(text: str) -> str:
    return f"{RATIONALE_PREFIX} {text}"


class WordVocab:
    """Lowercased whitespace word vocabulary with <eos>/<unk>.

    Ids are stable across runs because construction sorts the word set;
    <eos> is always 0 and <unk> always 1.
    """

    def __init__(self, words: Iterable[str]):
        uniq = sorted({w for w in words if w})
        self._words = [EOS, UNK] + uniq
        self._index = {w: i for i, w in enumerate(self._words)}

    def __len__(self) -> int:
        return len(self._words)

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return text.lower().split()

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, 1) for w in self.tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            if i == self.eos_id:
                continue
            words.append(self._words[i] if 0 <= i < len(self._words) else UNK)
        return " ".join(words)

    @classmethod
    def from_rows(cls, rows: Iterable[VqaRow]) -> "WordVocab":
        words: set[str] = set()
        for row in rows:
            words.update(cls.tokenize(row.question))
            words.update(cls.tokenize(answer_text(row.answer_label)))
            if row.rationale:
                words.update(cls.tokenize(rationale_text(row.rationale)))
        return cls(words)


def write_predictions(path: str | Path, rows: Iterable[tuple[str, str]]) -> int:
    """Write (sample_id, generated_text) pairs as line-delimited JSON.

    Returns the number of lines written. The field names match what the
    scoring CLI reads.
    """
    n = 0
    with open(path, "w", encoding="utf-8") as handle:
        for sample_id, text in rows:
            handle.write(json.dumps(
                {"sample_id": sample_id, "generated_text": text},
                ensure_ascii=False, sort_keys=True,
            ) + "\n")
            n += 1
    logger.info("wrote %d predictions to %s", n, path)
    return n
