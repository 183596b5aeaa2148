"""Diagnostic accuracy (Hit@k) and reasoning recall."""
from dataclasses import dataclass
import logging
import re
import threading
from typing import List, Optional

from casedb.traces import segment_trace
from diagnosis.dxcore import ConfigError, extract_tagged_section, normalize_disease_name, strip_tagged_sections
from llmgateway import prompts

logger = logging.getLogger(__name__)

MATCHER_EXACT = "exact-normalized"
MATCHER_JUDGE = "judge"
MATCHERS = (MATCHER_EXACT, MATCHER_JUDGE)

JUDGE_MODULE = "judge"

_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.I)
_STEP_VERDICT_RE = re.compile(r"^\s*(\d{1,3})[.):]?\s*\**\s*(yes|no)\b", re.I | re.M)


@dataclass(frozen=True)
class MatchVerdict:
    predicted: str
    gold: str
    equivalent: bool
    matcher: str
    completion: Optional[str] = None

    def __post_init__(self):
        if self.matcher == MATCHER_JUDGE and self.completion is None:
            raise ValueError("a judge verdict must carry the judge completion")


def parse_yes_no(completion: str) -> bool:
    """parse_yes_no() reads the first yes/no word of the <answer> span (or of the text outside <think>)."""
    answer = extract_tagged_section(completion, "answer")
    text = strip_tagged_sections(completion, "think") if answer.missing_tag else answer.text
    m = _YES_NO_RE.search(text)
    if m is None:
        logger.warning("Judge completion has no yes/no verdict; counted as no: %r", text[:80])
        return False
    return m.group(1).lower() == "yes"


def parse_step_verdicts(completion: str, count: int) -> List[bool]:
    answer = extract_tagged_section(completion, "answer")
    text = strip_tagged_sections(completion, "think") if answer.missing_tag else answer.text

    verdicts = {}
    for m in _STEP_VERDICT_RE.finditer(text):
        verdicts.setdefault(int(m.group(1)), m.group(2).lower() == "yes")

    missing = [n for n in range(1, count + 1) if n not in verdicts]
    if missing:
        logger.warning("Batched judge gave no verdict for step(s) %s; counted as not covered", missing)
    return [verdicts.get(n, False) for n in range(1, count + 1)]


class ExactMatcher:
    name = MATCHER_EXACT

    def for_record(self, record):
        return self

    def verdict(self, predicted: str, gold: str) -> MatchVerdict:
        equivalent = normalize_disease_name(predicted) == normalize_disease_name(gold)
        return MatchVerdict(predicted, gold, equivalent, self.name)

    def equivalent(self, predicted: str, gold: str) -> bool:
        return self.verdict(predicted, gold).equivalent


class JudgeMatcher:
    """JudgeMatcher asks the LLM whether two diagnoses are equivalent.

    Verdicts are cached per (predicted, gold) pair; for_record() returns a view that shares the
    cache and records its calls in the given (judge) RunRecord.
    """

    name = MATCHER_JUDGE

    def __init__(self, gateway, catalog, record=None, cache=None, lock=None):
        self.gateway = gateway
        self.catalog = catalog
        self.record = record

        self._cache = cache if cache is not None else {}
        self._lock = lock or threading.Lock()

    def for_record(self, record):
        return JudgeMatcher(self.gateway, self.catalog, record, self._cache, self._lock)

    def verdict(self, predicted: str, gold: str) -> MatchVerdict:
        key = (normalize_disease_name(predicted), normalize_disease_name(gold))
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached

        prompt = self.catalog.render(prompts.JUDGE_DIAGNOSIS, predicted=predicted, gold=gold)
        completion = self.gateway.bind(self.record, JUDGE_MODULE).complete_text(prompt)
        verdict = MatchVerdict(predicted, gold, parse_yes_no(completion), self.name, completion)
        with self._lock:
            self._cache[key] = verdict
        return verdict

    def equivalent(self, predicted: str, gold: str) -> bool:
        return self.verdict(predicted, gold).equivalent


def make_matcher(name, gateway=None, catalog=None):
    if name == MATCHER_EXACT:
        return ExactMatcher()
    if name == MATCHER_JUDGE:
        if gateway is None or catalog is None:
            raise ConfigError("the judge matcher needs a gateway and a prompt catalog")
        return JudgeMatcher(gateway, catalog)
    raise ConfigError(f"unknown matcher '{name}' (expected one of {', '.join(MATCHERS)})")


def first_hit_rank(prediction, gold: str, matcher, max_k: int = 10) -> Optional[int]:
    """first_hit_rank() is the rank of the first item equivalent to gold within the top max_k, or None."""
    for item in prediction.top(max_k):
        if matcher.equivalent(item.name, gold):
            return item.rank
    return None


def hit_at_k(prediction, gold: str, k: int, matcher) -> bool:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return first_hit_rank(prediction, gold, matcher, k) is not None


class StepJudge:
    """StepJudge decides whether a predicted reasoning covers gold reasoning steps."""

    def __init__(self, gateway, catalog, record=None):
        self.gateway = gateway
        self.catalog = catalog
        self.record = record

    def for_record(self, record):
        return StepJudge(self.gateway, self.catalog, record)

    def _complete(self, prompt):
        return self.gateway.bind(self.record, JUDGE_MODULE).complete_text(prompt)

    def covers(self, step: str, reasoning: str) -> bool:
        return parse_yes_no(self._complete(self.catalog.render(prompts.JUDGE_STEP, step=step, reasoning=reasoning)))

    def covers_batch(self, steps: List[str], reasoning: str) -> List[bool]:
        numbered = "\n".join(f"{i + 1}. {step}" for i, step in enumerate(steps))
        completion = self._complete(self.catalog.render(prompts.JUDGE_STEPS_BATCHED, steps=numbered, reasoning=reasoning))
        return parse_step_verdicts(completion, len(steps))


def reasoning_recall(predicted_reasoning: str, gold_reasoning: str, judge, batched=False) -> Optional[float]:
    """reasoning_recall() is the fraction of gold steps the judge finds covered.

    Returns None (skipped) when the gold reasoning has no steps.
    """
    steps = segment_trace(gold_reasoning or "")
    if not steps:
        return None

    if batched:
        verdicts = judge.covers_batch(steps, predicted_reasoning)
    else:
        verdicts = [judge.covers(step, predicted_reasoning) for step in steps]
    return sum(verdicts) / len(steps)
