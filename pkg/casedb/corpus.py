"""Corpus and evaluation-set files.

One JSON object per line with string fields `case`, `reasoning` and `diagnosis`;
evaluation sets may add `id` and leave reasoning/diagnosis empty.
"""
from dataclasses import dataclass
import json
import logging
import re
from typing import List

from diagnosis.dxcore import CaseReport, DiagnosisError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+")

CORPUS_FIELDS = ("case", "reasoning", "diagnosis")


class FormatError(DiagnosisError):
    """A record line could not be read."""

    def __init__(self, filename, line_no, message):
        self.filename = filename
        self.line_no = line_no
        super().__init__(f"{filename}:{line_no}: {message}")


@dataclass(frozen=True)
class CorpusInstance:
    case_text: str
    reasoning: str
    diagnosis: str
    corpus_index: int

    def __post_init__(self):
        for name in ("case_text", "reasoning", "diagnosis"):
            if not getattr(self, name).strip():
                raise ValueError(f"corpus instance {self.corpus_index}: {name} is empty")

    def to_dict(self):
        return {"case": self.case_text, "reasoning": self.reasoning, "diagnosis": self.diagnosis}


def tokenize(text: str) -> List[str]:
    """tokenize() lowercases and splits on non-alphanumerics. No stemming, no stopwords."""
    return _TOKEN_RE.findall(text.lower())


def _read_records(filename):
    with open(filename, "rt", encoding="utf-8-sig") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(filename, line_no, f"invalid JSON ({e.msg})") from e
            if not isinstance(record, dict):
                raise FormatError(filename, line_no, "record is not an object")
            yield line_no, record


def _text_field(filename, line_no, record, name, required=True):
    value = record.get(name)
    if value is None and not required:
        return ""
    if not isinstance(value, str):
        raise FormatError(filename, line_no, f"field '{name}' is missing or not a string")
    if required and not value.strip():
        raise FormatError(filename, line_no, f"field '{name}' is empty")
    return value


def ingest_corpus(filename) -> List[CorpusInstance]:
    """ingest_corpus() reads the annotated case database; file order defines corpus_index."""
    corpus = []
    for line_no, record in _read_records(filename):
        texts = [_text_field(filename, line_no, record, name) for name in CORPUS_FIELDS]
        corpus.append(CorpusInstance(*texts, len(corpus)))

    logger.info("Ingested %d corpus instances from '%s'", len(corpus), filename)
    return corpus


def load_case_set(filename) -> List[CaseReport]:
    """load_case_set() reads an evaluation set; a missing `id` becomes `case-<line>`."""
    cases = []
    seen_ids = set()
    for line_no, record in _read_records(filename):
        text = _text_field(filename, line_no, record, "case")
        case_id = str(record.get("id") or f"case-{line_no}")
        if case_id in seen_ids:
            raise FormatError(filename, line_no, f"duplicate case id '{case_id}'")
        seen_ids.add(case_id)

        reasoning = _text_field(filename, line_no, record, "reasoning", required=False)
        diagnosis = _text_field(filename, line_no, record, "diagnosis", required=False)
        cases.append(CaseReport(case_id, text, reasoning or None, diagnosis or None))

    logger.info("Loaded %d cases from '%s'", len(cases), filename)
    return cases
