"""Stage 2: fold the four Stage-1 lists into one final diagnosis, by vote or by an LLM differential."""
import logging

from diagnosis.dxcore import (
    SOURCE_FINAL,
    ConfigError,
    DiseaseCandidate,
    DiseaseList,
    EmptyList,
    FinalDiagnosis,
    extract_tagged_section,
    has_marked_items,
    parse_disease_list,
    render_disease_list,
    strip_tagged_sections,
)
from llmgateway import prompts

from .grouping import CandidateGroup, match_groups, render_group_summary

logger = logging.getLogger(__name__)

STRATEGY_VOTE = "vote"
STRATEGY_DIFFERENTIAL = "differential"
STRATEGY_SINGLE_SOURCE = "single-source"
STRATEGIES = (STRATEGY_VOTE, STRATEGY_DIFFERENTIAL)

DEFAULT_OUTPUT_LEN = 10


def check_strategy(strategy):
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown integration strategy '{strategy}' (expected one of {', '.join(STRATEGIES)})")


def vote_groups(bundle, synonyms, output_len=DEFAULT_OUTPUT_LEN):
    """vote_groups() returns the groups ordered by (support desc, best rank, mean rank, canonical name)."""
    return sorted(match_groups(bundle, synonyms), key=CandidateGroup.vote_key)[:output_len]


def simple_vote(bundle, output_len, synonyms) -> DiseaseList:
    groups = vote_groups(bundle, synonyms, output_len)
    items = [DiseaseCandidate(g.display_name, i + 1, g.describe()) for i, g in enumerate(groups)]
    return DiseaseList(SOURCE_FINAL, tuple(items))


def _vote_reasoning(bundle, ranked):
    sources = bundle.non_empty_sources()
    if not ranked:
        return "Simple vote: no source produced a candidate."
    lines = [f"Simple vote over {len(sources)} source list(s) ({', '.join(sources)}), ordered by support, best rank and mean rank:"]
    lines += [f"{item.rank}. {item.name}: {item.evidence}" for item in ranked]
    return "\n".join(lines)


def _render_source(result):
    if len(result.disease_list) == 0:
        return f"(unavailable: {result.failure or 'empty list'})"
    reasoning = result.reasoning.strip() or "(no reasoning returned)"
    return f"{reasoning}\n\nSuspected diseases:\n{render_disease_list(result.disease_list)}"


def parse_final_completion(completion: str):
    """parse_final_completion() returns (reasoning, ranked list); EmptyList when no list parses.

    Without an <answer> span only enumerated or bulleted lines count as a list, so prose is rejected.
    """
    answer = extract_tagged_section(completion, "answer")
    if answer.missing_tag:
        list_text = strip_tagged_sections(strip_tagged_sections(completion, "think"), "reasoning")
        if not has_marked_items(list_text):
            raise EmptyList("final completion has no <answer> span and no enumerated list")
    else:
        list_text = answer.text
    ranked = parse_disease_list(list_text, SOURCE_FINAL)

    for tag in ("reasoning", "think"):
        section = extract_tagged_section(completion, tag)
        if not section.missing_tag and section.text:
            return section.text, ranked

    rest = strip_tagged_sections(completion, "answer")
    return rest or render_disease_list(ranked), ranked


class EvidenceIntegrator:
    def __init__(self, catalog, synonyms, output_len=DEFAULT_OUTPUT_LEN):
        self.catalog = catalog
        self.synonyms = synonyms
        self.output_len = output_len

    def match_groups(self, bundle):
        return match_groups(bundle, self.synonyms)

    def simple_vote(self, bundle) -> DiseaseList:
        return simple_vote(bundle, self.output_len, self.synonyms)

    def vote(self, bundle, degraded=False, notes=()):
        ranked = self.simple_vote(bundle)
        return FinalDiagnosis(_vote_reasoning(bundle, ranked), ranked, STRATEGY_VOTE, degraded, tuple(notes))

    def differential_diagnose(self, case, bundle, groups, gateway) -> FinalDiagnosis:
        prompt = self.catalog.render(
            prompts.MULTI_INTEGRATE,
            pred_search=_render_source(bundle.web),
            pred_soap=_render_source(bundle.soap),
            pred_case=_render_source(bundle.case),
            pred_trace=_render_source(bundle.trace),
            groups=render_group_summary(groups) or "(no candidates)",
            case=case.text,
        )
        reasoning, ranked = parse_final_completion(gateway.complete_text(prompt))

        notes = ()
        if len(ranked) > self.output_len:
            notes = (f"final list cut from {len(ranked)} to {self.output_len} items",)
            ranked = ranked.truncated(self.output_len)
        return FinalDiagnosis(reasoning, ranked, STRATEGY_DIFFERENTIAL, False, notes)

    def single_source(self, bundle) -> FinalDiagnosis:
        """The lone non-empty Stage-1 list becomes the final list; no Stage-2 call."""
        sources = bundle.non_empty_sources()
        if len(sources) != 1:
            raise ValueError(f"single-source integration needs exactly one list, got {len(sources)}")
        result = bundle.get(sources[0])
        reasoning = result.reasoning.strip() or f"Single-source run: the {sources[0]} list is the final list."
        return FinalDiagnosis(reasoning, result.disease_list.with_source(SOURCE_FINAL), STRATEGY_SINGLE_SOURCE)

    def integrate(self, case, bundle, strategy, gateway=None) -> FinalDiagnosis:
        """integrate() dispatches on strategy; an unparsable differential falls back to a degraded vote."""
        check_strategy(strategy)
        if strategy == STRATEGY_VOTE:
            return self.vote(bundle)

        groups = self.match_groups(bundle)
        try:
            return self.differential_diagnose(case, bundle, groups, gateway)
        except EmptyList as e:
            message = f"differential output unusable ({e}); fell back to simple vote"
            logger.warning("Case %s: %s", case.id, message)
            gateway.note(message)
            return self.vote(bundle, degraded=True, notes=(message,))
