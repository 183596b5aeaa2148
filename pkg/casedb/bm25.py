"""Okapi BM25 over tokenized documents, with numpy postings per term."""
from collections import Counter
import math
from typing import List, Sequence

import numpy as np

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class Bm25Index:
    """Bm25Index is built once and never mutated; queries are pure.

    IDF is ln((N - df + 0.5) / (df + 0.5) + 1), which keeps every score non-negative.
    """

    def __init__(self, documents: Sequence[Sequence[str]], k1=DEFAULT_K1, b=DEFAULT_B):
        self.k1 = k1
        self.b = b
        self.doc_count = len(documents)

        lengths = [len(tokens) for tokens in documents]
        self.doc_lengths = np.array(lengths, dtype=np.float64)
        self.avgdl = sum(lengths) / self.doc_count if self.doc_count else 0.0

        postings = {}
        for doc_index, tokens in enumerate(documents):
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, ([], []))
                postings[term][0].append(doc_index)
                postings[term][1].append(tf)

        self.doc_freqs = {term: len(ids) for term, (ids, _) in postings.items()}
        self._postings = {
            term: (np.array(ids, dtype=np.int64), np.array(tfs, dtype=np.float64)) for term, (ids, tfs) in postings.items()
        }

    def idf(self, term: str) -> float:
        df = self.doc_freqs.get(term, 0)
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1)

    def term_frequency(self, term: str, doc_index: int) -> int:
        posting = self._postings.get(term)
        if posting is None:
            return 0
        ids, tfs = posting
        hit = np.flatnonzero(ids == doc_index)
        return int(tfs[hit[0]]) if len(hit) else 0

    def score(self, query: Sequence[str], doc_index: int) -> float:
        """score() is BM25(query, document); every query token counts, duplicates included."""
        if not 0 <= doc_index < self.doc_count:
            raise IndexError(f"document {doc_index} not in index of {self.doc_count}")
        if self.avgdl == 0:
            return 0.0

        k1, b = self.k1, self.b
        dl = self.doc_lengths[doc_index]
        total = 0.0
        for term in query:
            tf = self.term_frequency(term, doc_index)
            if tf == 0:
                continue
            total += self.idf(term) * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / self.avgdl))
        return float(total)

    def scores(self, query: Sequence[str]) -> np.ndarray:
        """scores() returns the BM25 score of every document, accumulated in query-token order."""
        result = np.zeros(self.doc_count, dtype=np.float64)
        if self.avgdl == 0:
            return result

        k1, b = self.k1, self.b
        for term in query:
            posting = self._postings.get(term)
            if posting is None:
                continue
            ids, tf = posting
            dl = self.doc_lengths[ids]
            result[ids] += self.idf(term) * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / self.avgdl))
        return result

    def topk(self, query: Sequence[str], k: int) -> List[tuple]:
        """topk() returns (doc_index, score) pairs by score descending, then doc_index ascending."""
        if k <= 0 or self.doc_count == 0:
            return []

        scores = self.scores(query)
        order = np.lexsort((np.arange(self.doc_count), -scores))
        return [(int(i), float(scores[i])) for i in order[:k]]
