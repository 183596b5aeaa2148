"""Stage-1 SOAP source: restructure a raw case into Subjective/Objective sections and ask
for a disease list from the structured note alone.
"""
from dataclasses import dataclass
import logging
import re
from typing import Tuple

from diagnosis.dxcore import SOURCE_SOAP, DiagnosisError, parse_answer_list
from llmgateway import prompts

logger = logging.getLogger(__name__)

ABSENT = "Absent"

FLAG_PRESTRUCTURED = "prestructured"
FLAG_UNSECTIONED = "unsectioned"
FLAG_NO_SUBJECTIVE = "missing-subjective"
FLAG_NO_OBJECTIVE = "missing-objective"
FLAG_DISCARDED_AP = "assessment-plan-discarded"

_SECTION_LETTERS = {"subjective": "S", "objective": "O", "assessment": "A", "plan": "P"}
_SECTION_TITLES = {"S": "Subjective", "O": "Objective", "A": "Assessment", "P": "Plan"}

# "S — Subjective", "## Subjective:", "**Objective**", "Plan - ..."
_WORD_HEADER_RE = re.compile(
    r"^[\s#*]*(?:[SOAP]\s*[—–:-]\s*)?\**(subjective|objective|assessment|plan)\b[\s*]*(?:\([^)]*\))?[\s*]*(?:$|[:—–-][\s*]*(.*)$)",
    re.I,
)
# "S: ...", "O - ...": upper case, and a dash must stand apart so "P-ANCA" or "A-a gradient" stay findings.
_LETTER_HEADER_RE = re.compile(r"^[\s#*]*([SOAP])(?:[\s*]*:|\s+[—–-](?=\s|$)|[—–](?=\s))[\s*]*(.*)$")


class StructuringError(DiagnosisError):
    """The completion has neither a Subjective nor an Objective section."""


@dataclass(frozen=True)
class SoapRecord:
    subjective: str
    objective: str
    assessment: str = ABSENT
    plan: str = ABSENT
    flags: Tuple[str, ...] = ()

    def is_empty(self):
        return not self.subjective.strip() and not self.objective.strip()

    def render(self) -> str:
        blocks = []
        for letter, text in zip("SOAP", (self.subjective, self.objective, self.assessment, self.plan)):
            blocks.append(f"{letter} — {_SECTION_TITLES[letter]}\n{text.strip() or ABSENT}")
        return "\n\n".join(blocks)


def _match_header(line):
    m = _WORD_HEADER_RE.match(line)
    if m is not None:
        return _SECTION_LETTERS[m.group(1).lower()], (m.group(2) or "").strip()

    m = _LETTER_HEADER_RE.match(line)
    if m is not None:
        return m.group(1), m.group(2).strip()

    return None, None


def parse_soap_sections(text: str) -> dict:
    """parse_soap_sections() maps section letters to their text; text before the first header is dropped.

    Raises StructuringError when no S or O header is present.
    """
    sections = {}
    current = None
    for line in text.splitlines():
        letter, rest = _match_header(line)
        if letter is not None:
            current = letter
            sections.setdefault(current, [])
            if rest:
                sections[current].append(rest)
        elif current is not None:
            sections[current].append(line.rstrip())

    if "S" not in sections and "O" not in sections:
        raise StructuringError("no Subjective or Objective section found")

    return {letter: "\n".join(lines).strip() for letter, lines in sections.items()}


def _is_absent(text):
    return not text or text.strip().strip(".").lower() in ("absent", "none", "n/a")


def soap_record_from_sections(sections: dict, flags=()) -> SoapRecord:
    """Builds the record with Assessment and Plan forced to Absent."""
    flags = list(flags)
    subjective = sections.get("S", "")
    objective = sections.get("O", "")
    if not subjective:
        flags.append(FLAG_NO_SUBJECTIVE)
    if not objective:
        flags.append(FLAG_NO_OBJECTIVE)
    if not _is_absent(sections.get("A")) or not _is_absent(sections.get("P")):
        flags.append(FLAG_DISCARDED_AP)

    return SoapRecord(subjective, objective, ABSENT, ABSENT, tuple(flags))


def prestructured_soap(text: str) -> SoapRecord:
    """prestructured_soap() reads sections straight from an already structured note.

    A note without headers is carried whole under Subjective.
    """
    try:
        sections = parse_soap_sections(text)
    except StructuringError:
        return SoapRecord(text.strip(), "", ABSENT, ABSENT, (FLAG_PRESTRUCTURED, FLAG_UNSECTIONED))
    return soap_record_from_sections(sections, [FLAG_PRESTRUCTURED])


class SoapStructurer:
    """SoapStructurer runs the SOAP source for one case at a time through a bound gateway."""

    def __init__(self, catalog, bypass=False):
        self.catalog = catalog
        self.bypass = bypass

    def to_soap(self, case, gateway) -> SoapRecord:
        prompt = self.catalog.render(prompts.TO_SOAP, case=case.text)
        completion = gateway.complete_text(prompt)
        record = soap_record_from_sections(parse_soap_sections(completion))
        if record.flags:
            gateway.note(f"SOAP record flags: {', '.join(record.flags)}")
        return record

    def diagnose_from_soap(self, soap: SoapRecord, gateway):
        """diagnose_from_soap() prompts with the structured note only and returns a SourceResult."""
        if soap.is_empty():
            raise StructuringError("SOAP record has no content to diagnose from")

        prompt = self.catalog.render(prompts.SOAP_DIAGNOSE, soap=soap.render())
        completion = gateway.complete_text(prompt)
        return parse_answer_list(completion, SOURCE_SOAP)

    def run(self, case, gateway):
        if self.bypass:
            logger.debug("Case %s: SOAP structuring bypassed", case.id)
            soap = prestructured_soap(case.text)
        else:
            soap = self.to_soap(case, gateway)
        return self.diagnose_from_soap(soap, gateway)
