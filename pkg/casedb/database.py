"""CaseDatabase: the annotated corpus with its two retrieval granularities, and the two
Stage-1 sources that prompt with what they retrieve.
"""
import logging
from typing import List

from atomicfile import read_json, write_json
from diagnosis.dxcore import SOURCE_CASE, SOURCE_TRACE, normalize_disease_name, parse_answer_list
from llmgateway import prompts

from .bm25 import DEFAULT_B, DEFAULT_K1, Bm25Index
from .corpus import CorpusInstance, ingest_corpus, tokenize
from .traces import SegmentStore, TraceSegment, segment_trace

logger = logging.getLogger(__name__)

INDEX_VERSION = 1
DEFAULT_CONTEXT_CHARS = 60000


class CaseDatabase:
    """CaseDatabase is immutable once built and may be shared by concurrent sources."""

    def __init__(self, corpus: List[CorpusInstance], extractor, segments=None, k1=DEFAULT_K1, b=DEFAULT_B):
        self.corpus = list(corpus)
        self.extractor = extractor
        self.index = Bm25Index([tokenize(instance.case_text) for instance in self.corpus], k1, b)

        if segments is None:
            segments = self._segment_corpus()
        self.segments = SegmentStore(segments)

        logger.info("Case database: %d cases, %d trace segments", len(self.corpus), len(self.segments))

    def _segment_corpus(self):
        segments = []
        for instance in self.corpus:
            for j, text in enumerate(segment_trace(instance.reasoning)):
                segments.append(TraceSegment(instance.corpus_index, j, text, self.extractor.extract(text)))
        return segments

    @staticmethod
    def build(corpus_filename, extractor, k1=DEFAULT_K1, b=DEFAULT_B):
        return CaseDatabase(ingest_corpus(corpus_filename), extractor, None, k1, b)

    def save(self, filename):
        """save() writes corpus and segment entities; the BM25 index is rebuilt on load."""
        doc = {
            "version": INDEX_VERSION,
            "bm25": {"k1": self.index.k1, "b": self.index.b},
            "corpus": [instance.to_dict() for instance in self.corpus],
            "segments": [
                {"i": s.instance_index, "j": s.step_index, "text": s.text, "entities": sorted(s.entities)} for s in self.segments.segments
            ],
        }
        write_json(filename, doc)
        logger.info("Saved case database to '%s'", filename)

    @staticmethod
    def load(filename, extractor):
        doc = read_json(filename)
        if doc.get("version") != INDEX_VERSION:
            raise ValueError(f"'{filename}' is not a version {INDEX_VERSION} case database")

        corpus = [CorpusInstance(d["case"], d["reasoning"], d["diagnosis"], i) for i, d in enumerate(doc["corpus"])]
        segments = [TraceSegment(s["i"], s["j"], s["text"], frozenset(s["entities"])) for s in doc["segments"]]
        params = doc.get("bm25", {})
        return CaseDatabase(corpus, extractor, segments, params.get("k1", DEFAULT_K1), params.get("b", DEFAULT_B))

    def __len__(self):
        return len(self.corpus)

    def normalized_diagnoses(self):
        return {normalize_disease_name(instance.diagnosis) for instance in self.corpus}

    def topk_cases(self, case, k: int) -> List[CorpusInstance]:
        return [self.corpus[i] for i, _ in self.index.topk(tokenize(case.text), k)]

    def topk_traces(self, case, k: int) -> List[TraceSegment]:
        query_entities = self.extractor.extract(case.text)
        return [segment for segment, _ in self.segments.topk(query_entities, k)]


def render_exemplars(exemplars: List[CorpusInstance]) -> str:
    blocks = []
    for n, instance in enumerate(exemplars, 1):
        blocks.append(
            f"Example {n}\n[CASE]\n{instance.case_text.strip()}\n[REASONING]\n{instance.reasoning.strip()}\n[DIAGNOSIS]\n{instance.diagnosis.strip()}"
        )
    return "\n\n".join(blocks)


def render_fragments(fragments: List[TraceSegment]) -> str:
    return "\n".join(f"- {segment.text}" for segment in fragments)


def diagnose_with_cases(case, exemplars, gateway, catalog, context_chars=DEFAULT_CONTEXT_CHARS):
    """diagnose_with_cases() prompts with retrieved exemplars, then the case.

    Exemplars are dropped from the tail until the prompt fits `context_chars`.
    """
    exemplars = list(exemplars)
    prompt = catalog.render(prompts.CASE_DIAGNOSE, examples=render_exemplars(exemplars), case=case.text)
    dropped = 0
    while exemplars and len(prompt) > context_chars:
        exemplars.pop()
        dropped += 1
        prompt = catalog.render(prompts.CASE_DIAGNOSE, examples=render_exemplars(exemplars), case=case.text)
    if dropped:
        gateway.note(f"dropped {dropped} exemplar(s) to fit the {context_chars}-character context budget")

    logger.debug("Case %s: case prompt with %d exemplars, %d chars", case.id, len(exemplars), len(prompt))
    return parse_answer_list(gateway.complete_text(prompt), SOURCE_CASE)


def diagnose_with_traces(case, fragments, gateway, catalog):
    prompt = catalog.render(prompts.TRACE_DIAGNOSE, fragments=render_fragments(fragments), case=case.text)
    logger.debug("Case %s: trace prompt with %d fragments, %d chars", case.id, len(fragments), len(prompt))
    return parse_answer_list(gateway.complete_text(prompt), SOURCE_TRACE)
