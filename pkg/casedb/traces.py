"""Reasoning-trace segmentation and entity-overlap ranking of trace segments."""
from dataclasses import dataclass
import re
from typing import List

_MARKER_RE = re.compile(r"(?:^|(?<=\s))(\d{1,3})[.)]\s+")
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class TraceSegment:
    instance_index: int
    step_index: int
    text: str
    entities: frozenset = frozenset()


def _at_line_start(text, pos):
    return pos == 0 or text[pos - 1] == "\n"


def segment_trace(reasoning: str) -> List[str]:
    """segment_trace() splits a reasoning trace into its numbered steps.

    The first marker must open a line; later markers count when they continue the numbering,
    inline or not. Text before the first marker is kept as its own segment. Without markers
    the trace is split into sentences.
    """
    text = reasoning.strip()
    cuts = []
    expected = None
    for m in _MARKER_RE.finditer(text):
        number = int(m.group(1))
        if expected is None:
            if not _at_line_start(text, m.start()):
                continue
        elif number != expected:
            continue
        cuts.append((m.start(), m.end()))
        expected = number + 1

    if not cuts:
        return [s.strip() for s in _SENTENCE_END_RE.split(text) if s.strip()]

    segments = []
    preamble = text[: cuts[0][0]].strip()
    if preamble:
        segments.append(preamble)
    for (_, body_start), (next_start, _) in zip(cuts, cuts[1:] + [(len(text), None)]):
        body = text[body_start:next_start].strip()
        if body:
            segments.append(body)
    return segments


def jaccard(a: frozenset, b: frozenset) -> float:
    """jaccard() is |a ∩ b| / |a ∪ b|, and 0.0 when both sets are empty."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


class SegmentStore:
    """SegmentStore holds every trace segment with an entity -> segment inverted index.

    Only segments sharing an entity with the query can score above zero, so ranking scans
    just those.
    """

    def __init__(self, segments):
        self.segments = list(segments)
        self._by_entity = {}
        for position, segment in enumerate(self.segments):
            for entity in segment.entities:
                self._by_entity.setdefault(entity, []).append(position)

    def __len__(self):
        return len(self.segments)

    def topk(self, query_entities: frozenset, k: int) -> List[tuple]:
        """topk() returns (segment, similarity) by similarity descending, then (i, j) ascending.

        Zero-similarity segments are never returned.
        """
        if k <= 0 or not query_entities:
            return []

        candidates = set()
        for entity in query_entities:
            candidates.update(self._by_entity.get(entity, ()))

        scored = []
        for position in candidates:
            segment = self.segments[position]
            similarity = jaccard(query_entities, segment.entities)
            if similarity > 0:
                scored.append((segment, similarity))

        scored.sort(key=lambda pair: (-pair[1], pair[0].instance_index, pair[0].step_index))
        return scored[:k]
