"""Domain types shared by every stage of the diagnostic pipeline, and the parsers
that turn free-text completions into them.
"""
from collections import namedtuple
from dataclasses import dataclass
import re
from typing import Iterable, Optional, Tuple

SOURCE_SOAP = "soap"
SOURCE_WEB = "web"
SOURCE_CASE = "case"
SOURCE_TRACE = "trace"
SOURCE_FINAL = "final"

# Stage-1 sources in bundle order.
STAGE1_SOURCES = (SOURCE_SOAP, SOURCE_WEB, SOURCE_CASE, SOURCE_TRACE)
ALL_SOURCES = STAGE1_SOURCES + (SOURCE_FINAL,)


class DiagnosisError(Exception):
    """Base class of every error raised by the pipeline."""


class EmptyList(DiagnosisError):
    """A completion did not contain any parsable disease."""


class ConfigError(DiagnosisError):
    """Invalid configuration, detected before any work starts."""


class PipelineError(DiagnosisError):
    """Every enabled Stage-1 source failed for one case."""

    def __init__(self, case_id, causes):
        self.case_id = case_id
        self.causes = dict(causes)
        details = "; ".join(f"{source}: {cause}" for source, cause in self.causes.items())
        super().__init__(f"case {case_id}: all sources failed ({details})")


@dataclass(frozen=True)
class CaseReport:
    """CaseReport holds one clinical case and, when known, its gold reasoning and diagnosis."""

    id: str
    text: str
    gold_reasoning: Optional[str] = None
    gold_diagnosis: Optional[str] = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"case {self.id} has no text")


@dataclass(frozen=True)
class DiseaseCandidate:
    name: str
    rank: int
    evidence: Optional[str] = None

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ValueError("disease name is empty")
        if self.rank < 1:
            raise ValueError(f"rank {self.rank} is not 1-based")


@dataclass(frozen=True)
class DiseaseList:
    """DiseaseList is an ordered list of suspected diseases produced by one source."""

    source: str
    items: Tuple[DiseaseCandidate, ...] = ()

    def __post_init__(self):
        if self.source not in ALL_SOURCES:
            raise ValueError(f"unknown source '{self.source}'")
        object.__setattr__(self, "items", tuple(self.items))
        for i, item in enumerate(self.items):
            if item.rank != i + 1:
                raise ValueError(f"{self.source} list: rank {item.rank} at position {i + 1}")

    @staticmethod
    def from_names(source, names, evidence=None):
        evidence = evidence or {}
        items = [DiseaseCandidate(name, i + 1, evidence.get(name)) for i, name in enumerate(names)]
        return DiseaseList(source, tuple(items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def names(self):
        return [item.name for item in self.items]

    def top(self, k):
        return self.items[:k]

    def with_source(self, source):
        return DiseaseList(source, self.items)

    def truncated(self, length):
        return DiseaseList(self.source, self.items[:length])


@dataclass(frozen=True)
class SourceResult:
    """SourceResult pairs a disease list with the reasoning that produced it.

    A disabled or failed source still has a SourceResult: an empty list with a failure note.
    """

    disease_list: DiseaseList
    reasoning: str = ""
    failure: Optional[str] = None

    @property
    def source(self):
        return self.disease_list.source

    @property
    def failed(self):
        return self.failure is not None

    @staticmethod
    def failed_source(source, failure):
        return SourceResult(DiseaseList(source), "", failure)


@dataclass(frozen=True)
class EvidenceBundle:
    """EvidenceBundle holds the four Stage-1 results for one case."""

    soap: SourceResult
    web: SourceResult
    case: SourceResult
    trace: SourceResult

    def __post_init__(self):
        for source in STAGE1_SOURCES:
            result = getattr(self, source)
            if result.source != source:
                raise ValueError(f"bundle slot '{source}' holds a '{result.source}' list")

    @staticmethod
    def from_results(results):
        """from_results() builds a bundle from a source->SourceResult dict; absent sources become disabled entries."""
        slots = {}
        for source in STAGE1_SOURCES:
            slots[source] = results.get(source) or SourceResult.failed_source(source, "disabled")
        return EvidenceBundle(**slots)

    def get(self, source):
        return getattr(self, source)

    def results(self):
        return [getattr(self, source) for source in STAGE1_SOURCES]

    def non_empty_sources(self):
        return [r.source for r in self.results() if len(r.disease_list) > 0]

    def is_empty(self):
        return not self.non_empty_sources()


@dataclass(frozen=True)
class FinalDiagnosis:
    """FinalDiagnosis is the Stage-2 output: a reasoning trace and the re-ranked final list."""

    reasoning: str
    ranked: DiseaseList
    strategy: str
    degraded: bool = False
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.ranked.source != SOURCE_FINAL:
            raise ValueError("final diagnosis must carry a 'final' list")
        if not self.reasoning.strip():
            raise ValueError("final diagnosis has no reasoning")

    def justifications(self):
        return [(item.name, item.evidence or "") for item in self.ranked]


# Parsers

TaggedSection = namedtuple("TaggedSection", "text missing_tag")

_ITEM_PREFIX_RE = re.compile(r"^\s*(?:(?P<number>\d{1,3})[.)]|[-*•])\s+(?P<body>.*)$")
_INLINE_NUMBER_RE = re.compile(r"(?<=\s)(\d{1,3})[.)]\s+")
_EVIDENCE_SEP_RE = re.compile(r"\s+[–—-]\s+|:\s+")
_PARENTHETICAL_RE = re.compile(r"\([^()]*\)|\[[^\[\]]*\]")
_SPACE_RE = re.compile(r"\s+")
_TERMINAL_PUNCT = " .,;:!?"


def extract_tagged_section(text: str, tag: str) -> TaggedSection:
    """extract_tagged_section() returns the first <tag>...</tag> span.

    Without the tag the whole text comes back with missing_tag set.
    """
    match = re.search(rf"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", text, re.S | re.I)
    if match is None:
        return TaggedSection(text, True)
    return TaggedSection(match.group(1).strip(), False)


def strip_tagged_sections(text: str, tag: str) -> str:
    return re.sub(rf"<{re.escape(tag)}>.*?</{re.escape(tag)}>", "", text, flags=re.S | re.I).strip()


def normalize_disease_name(name: str) -> str:
    """normalize_disease_name() lowercases, drops parenthetical qualifiers, collapses whitespace
    and strips terminal punctuation. It is idempotent.
    """
    text = name.lower().replace("*", "")
    previous = None
    while previous != text:
        previous = text
        text = _PARENTHETICAL_RE.sub(" ", text)
    text = _SPACE_RE.sub(" ", text).strip()
    return text.strip(_TERMINAL_PUNCT)


def _split_inline_items(body, number):
    """Splits "A 2. B 3. C" (after a "1." prefix) into items when the inline numbers run consecutively."""
    parts = []
    expected = number + 1
    start = 0
    for m in _INLINE_NUMBER_RE.finditer(body):
        if int(m.group(1)) != expected:
            continue
        parts.append(body[start : m.start()])
        start = m.end()
        expected += 1
    parts.append(body[start:])
    return parts


def _split_name_evidence(body):
    body = body.replace("**", "").strip()
    m = _EVIDENCE_SEP_RE.search(body)
    if m is None:
        return body.strip(), None

    name = body[: m.start()].strip()
    evidence = body[m.end() :].strip()
    return name, evidence or None


def _collect_item_bodies(text):
    lines = [line for line in text.splitlines() if line.strip()]
    marked = []
    for line in lines:
        m = _ITEM_PREFIX_RE.match(line)
        if m is None:
            continue
        body = m.group("body")
        if m.group("number") is not None:
            marked.extend(_split_inline_items(body, int(m.group("number"))))
        else:
            marked.append(body)

    if marked:
        return marked

    # No markers at all: one diagnosis per line.
    return [line.strip() for line in lines]


def has_marked_items(text: str) -> bool:
    """True when at least one line carries an enumeration or bullet marker."""
    return any(_ITEM_PREFIX_RE.match(line) for line in (text or "").splitlines())


def parse_disease_list(text: str, source: str) -> DiseaseList:
    """parse_disease_list() extracts an ordered disease list from a completion.

    Accepts 'N.', 'N)', '-', '*' prefixes; without any prefix each non-empty line is an item.
    Text after ' - ', ' – ' or ': ' on the same line becomes the item's evidence.
    """
    names = []
    evidence = []
    for body in _collect_item_bodies(text or ""):
        name, ev = _split_name_evidence(body)
        name = name.strip(_TERMINAL_PUNCT)
        if not name:
            continue
        names.append(name)
        evidence.append(ev)

    if not names:
        raise EmptyList(f"no disease found in {source} completion")

    items = tuple(DiseaseCandidate(name, i + 1, ev) for i, (name, ev) in enumerate(zip(names, evidence)))
    return DiseaseList(source, items)


def render_disease_list(disease_list: DiseaseList) -> str:
    lines = []
    for item in disease_list:
        if item.evidence:
            lines.append(f"{item.rank}. {item.name} – {item.evidence}")
        else:
            lines.append(f"{item.rank}. {item.name}")
    return "\n".join(lines)


def parse_answer_list(completion: str, source: str) -> SourceResult:
    """parse_answer_list() reads the <answer> span as the list and the <think> span as reasoning."""
    answer = extract_tagged_section(completion, "answer")
    list_text = strip_tagged_sections(completion, "think") if answer.missing_tag else answer.text
    disease_list = parse_disease_list(list_text, source)

    think = extract_tagged_section(completion, "think")
    if not think.missing_tag:
        reasoning = think.text
    elif not answer.missing_tag:
        reasoning = re.sub(r"<answer>.*?</answer>", "", completion, flags=re.S | re.I).strip()
    else:
        reasoning = ""

    return SourceResult(disease_list, reasoning)


def entity_set(entities: Iterable[str]) -> frozenset:
    """entity_set() normalizes entity strings (lowercase, trimmed, single spaces) into a frozen set."""
    normalized = (_SPACE_RE.sub(" ", e.lower()).strip() for e in entities)
    return frozenset(e for e in normalized if e)
