import random
import re

from pytest import mark, raises

from casedb.corpus import CorpusInstance
from diagnosis.dxcore import CaseReport, ConfigError, DiseaseList
from diagnosis.runrecord import RunRecord
from integrate.synonyms import SynonymTable
from llmgateway.gateway import Gateway
from llmgateway.prompts import PromptCatalog
from llmgateway.providers import ScriptedMock

from .metrics import (
    MATCHER_EXACT,
    MATCHER_JUDGE,
    ExactMatcher,
    JudgeMatcher,
    MatchVerdict,
    StepJudge,
    hit_at_k,
    make_matcher,
    parse_step_verdicts,
    parse_yes_no,
    reasoning_recall,
)
from .splits import seen_unseen_split

PCNSL = "Primary central nervous system lymphoma"
JUDGE_DIAGNOSIS_MATCH = "Are these two diagnoses equivalent"
JUDGE_STEP_MATCH = "Does the predicted reasoning cover the following reasoning step?"
JUDGE_BATCH_MATCH = "For each numbered reasoning step below"

_STEP_RE = re.compile(r"\[REASONING STEP\]\n(.*?)\n\n\[PREDICTED REASONING\]\n(.*)", re.S)


def step_judge(answer):
    """A scripted judge: answer(step, reasoning) -> bool decides each verdict."""

    def complete(prompt):
        step, reasoning = _STEP_RE.search(prompt).groups()
        return "<answer>yes</answer>" if answer(step.strip(), reasoning.strip()) else "<answer>no</answer>"

    mock = ScriptedMock([(JUDGE_STEP_MATCH, complete)])
    return mock, StepJudge(Gateway(mock), PromptCatalog())


def test_hit_at_k_case_study():
    final = DiseaseList.from_names("final", [PCNSL, "Neurosarcoidosis", "Metastatic brain disease"])
    matcher = ExactMatcher()
    assert hit_at_k(final, PCNSL, 1, matcher)

    moved = DiseaseList.from_names("final", ["Neurosarcoidosis", "Metastatic brain disease", PCNSL])
    assert not hit_at_k(moved, PCNSL, 1, matcher)
    assert hit_at_k(moved, PCNSL, 5, matcher)


def test_hit_at_k_empty_prediction():
    for k in (1, 5, 10):
        assert not hit_at_k(DiseaseList("final"), PCNSL, k, ExactMatcher())


def test_hit_at_k_rejects_zero_window():
    with raises(ValueError):
        hit_at_k(DiseaseList("final"), PCNSL, 0, ExactMatcher())


def _perturb(rng, name):
    chars = [c.upper() if rng.random() < 0.5 else c.lower() for c in name]
    text = "".join(chars).replace(" ", " " * rng.randint(1, 3))
    return " " * rng.randint(0, 2) + text + " " * rng.randint(0, 2)


def test_hit_windows_are_monotone():
    rng = random.Random(500)
    vocabulary = ["Sepsis", "Pneumonia", "Lupus", PCNSL, "Neurosarcoidosis", "Multiple sclerosis", "Gout", "Asthma", "Migraine"]
    matcher = ExactMatcher()
    for _ in range(500):
        names = [rng.choice(vocabulary) for _ in range(rng.randint(0, 14))]
        prediction = DiseaseList.from_names("final", names)
        gold = rng.choice(vocabulary)

        hits = [hit_at_k(prediction, gold, k, matcher) for k in (1, 5, 10)]
        assert hits[0] <= hits[1] <= hits[2]
        assert hits == [gold in names[:k] for k in (1, 5, 10)]

        perturbed = DiseaseList.from_names("final", [_perturb(rng, n) for n in names])
        assert [hit_at_k(perturbed, gold, k, matcher) for k in (1, 5, 10)] == hits


test_data = [
    ("<answer>yes</answer>", True),
    ("<answer>No.</answer>", False),
    ("<think>maybe yes, maybe no</think>\n<answer>no</answer>", False),
    ("<think>not sure</think>\nYes, they are the same.", True),
    ("<answer>equivalent</answer>", False),
]


@mark.parametrize("completion,expected", test_data)
def test_parse_yes_no(completion, expected):
    assert parse_yes_no(completion) == expected


def test_parse_step_verdicts():
    completion = "<answer>\n1. yes\n2. no\n4. yes\n</answer>"
    assert parse_step_verdicts(completion, 4) == [True, False, False, True]


def test_judge_matcher_caches_and_records():
    mock = ScriptedMock([(JUDGE_DIAGNOSIS_MATCH, "<think>PCNSL is the abbreviation.</think><answer>yes</answer>")])
    matcher = JudgeMatcher(Gateway(mock), PromptCatalog())
    record = RunRecord("c1")
    view = matcher.for_record(record)

    verdict = view.verdict("PCNSL", PCNSL)
    assert verdict.equivalent
    assert verdict.matcher == MATCHER_JUDGE
    assert "abbreviation" in verdict.completion
    assert view.equivalent("pcnsl", PCNSL.lower())
    assert matcher.equivalent("PCNSL", PCNSL)

    assert mock.call_count() == 1
    assert record.llm_call_count("judge") == 1


def test_judge_verdict_needs_completion():
    with raises(ValueError):
        MatchVerdict("a", "b", True, MATCHER_JUDGE)


def test_make_matcher():
    assert isinstance(make_matcher(MATCHER_EXACT), ExactMatcher)
    with raises(ConfigError):
        make_matcher(MATCHER_JUDGE)
    with raises(ConfigError):
        make_matcher("fuzzy")


GOLD_STEPS = [
    "Embolic stroke was considered given atrial fibrillation.",
    "A spinal canal mass was considered given focal arm findings.",
    "Leptomeningeal metastases were considered after CN III involvement.",
    "Primary CNS lymphoma was considered due to age and multifocal presentation.",
    "Infectious etiologies were considered.",
    "Sarcoidosis was considered among inflammatory causes.",
]

test_data = [
    # (number of gold steps, affirmed step indexes, expected recall)
    (4, {0, 1, 2}, 0.75),
    (4, {0, 1, 2, 3}, 1.0),
    (4, set(), 0.0),
    (1, {0}, 1.0),
    (2, {1}, 0.5),
    (3, {2}, 1 / 3),
    (5, {0, 4}, 0.4),
    (5, {0, 1, 2, 3}, 0.8),
    (6, {1, 3, 5}, 0.5),
    (6, {0, 1, 2, 3, 4}, 5 / 6),
]


@mark.parametrize("count,affirmed,expected", test_data)
def test_reasoning_recall_with_scripted_verdicts(count, affirmed, expected):
    steps = GOLD_STEPS[:count]
    gold = "\n".join(f"{i + 1}. {step}" for i, step in enumerate(steps))
    covered = {steps[i] for i in affirmed}
    mock, judge = step_judge(lambda step, reasoning: step in covered)

    assert reasoning_recall("some predicted reasoning", gold, judge) == expected
    assert mock.call_count() == count


def test_reasoning_recall_identity():
    gold = "\n".join(f"{i + 1}. {step}" for i, step in enumerate(GOLD_STEPS))
    _, judge = step_judge(lambda step, reasoning: step in reasoning)
    assert reasoning_recall(gold, gold, judge) == 1.0


def test_reasoning_recall_without_gold_steps():
    mock, judge = step_judge(lambda step, reasoning: True)
    assert reasoning_recall("anything", "   ", judge) is None
    assert mock.call_count() == 0


def test_reasoning_recall_batched():
    gold = "\n".join(f"{i + 1}. {step}" for i, step in enumerate(GOLD_STEPS[:4]))
    mock = ScriptedMock([(JUDGE_BATCH_MATCH, "<answer>\n1. yes\n2. no\n3. yes\n4. yes\n</answer>")])
    judge = StepJudge(Gateway(mock), PromptCatalog())

    assert reasoning_recall("predicted", gold, judge, batched=True) == 0.75
    assert mock.call_count() == 1
    assert "4. Primary CNS lymphoma was considered" in mock.calls[0][1]


def _corpus():
    diagnoses = ["Primary CNS lymphoma", "Neurosarcoidosis", "Heart attack"]
    return [CorpusInstance(f"case {i}", f"reasoning {i}", d, i) for i, d in enumerate(diagnoses)]


test_data = [
    ("Neurosarcoidosis", "seen"),
    ("neurosarcoidosis.", "seen"),
    ("Glioblastoma", "unseen"),
    (PCNSL, "seen"),
    ("Myocardial infarction", "seen"),
]


@mark.parametrize("gold,expected", test_data)
def test_seen_unseen_split(gold, expected):
    partition = seen_unseen_split([CaseReport("c1", "text", gold_diagnosis=gold)], _corpus(), SynonymTable.seed())
    assert partition.subset_of("c1") == expected


def test_split_is_exhaustive_and_disjoint():
    cases = [
        CaseReport("a", "text", gold_diagnosis="Neurosarcoidosis"),
        CaseReport("b", "text", gold_diagnosis="Gout"),
        CaseReport("c", "text"),
        CaseReport("d", "text", gold_diagnosis="PCNSL"),
    ]
    partition = seen_unseen_split(cases, _corpus(), SynonymTable.seed())
    assert partition.seen == ("a", "d")
    assert partition.unseen == ("b",)
    assert partition.excluded == ("c",)

    without_synonyms = seen_unseen_split(cases, _corpus(), SynonymTable())
    assert without_synonyms.unseen == ("b", "d")
