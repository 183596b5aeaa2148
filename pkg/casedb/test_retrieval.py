import math
import random

from pytest import approx, mark

from diagnosis.dxcore import CaseReport

from .bm25 import Bm25Index
from .corpus import CorpusInstance, tokenize
from .database import CaseDatabase
from .entities import LexiconExtractor
from .traces import jaccard

VOCABULARY = (
    "fever cough dyspnea rash headache confusion weakness numbness seizure nausea vomiting diarrhea "
    "jaundice ascites edema pleocytosis lymphoma sarcoidosis carcinoma meningitis woman man year old "
    "left right arm leg chest abdomen history examination reflex triceps"
).split()

LEXICON = ["fever", "cough", "dyspnea", "rash", "headache", "confusion", "weakness", "numbness", "seizure", "nausea", "jaundice", "ascites", "edema", "pleocytosis", "lymphoma", "sarcoidosis", "left arm", "triceps reflex"]


def brute_force_bm25(docs, query, k, k1=1.2, b=0.75):
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    scores = []
    for d in docs:
        total = 0.0
        for term in query:
            tf = d.count(term)
            if tf == 0:
                continue
            df = sum(1 for other in docs if term in other)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
            total += idf * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * len(d) / avgdl))
        scores.append(total)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    return [(i, scores[i]) for i in order[:k]]


def _random_docs(rng, count):
    docs = [[rng.choice(VOCABULARY) for _ in range(rng.randint(3, 40))] for _ in range(count)]
    # identical documents force score ties
    docs[30] = list(docs[10])
    docs[41] = list(docs[5])
    return docs


def test_bm25_matches_brute_force():
    rng = random.Random(2024)
    docs = _random_docs(rng, 50)
    index = Bm25Index(docs)
    queries = [[rng.choice(VOCABULARY + ["absentterm"]) for _ in range(rng.randint(1, 6))] for _ in range(20)]

    for query in queries:
        for k in (1, 5, 10):
            expected = brute_force_bm25(docs, query, k)
            actual = index.topk(query, k)
            assert [i for i, _ in actual] == [i for i, _ in expected], f"query {query}, k={k}"
            assert [s for _, s in actual] == approx([s for _, s in expected])


def test_bm25_single_document_score_matches_vector():
    rng = random.Random(5)
    docs = _random_docs(rng, 50)
    index = Bm25Index(docs)
    query = ["fever", "cough", "fever", "lymphoma"]
    vector = index.scores(query)
    for i in range(len(docs)):
        assert index.score(query, i) == approx(vector[i])


def test_bm25_absent_and_empty_queries():
    index = Bm25Index([["fever", "cough"], ["rash"], ["seizure", "fever"]])
    assert index.score(["malaria"], 0) == 0.0
    assert list(index.scores([])) == [0.0, 0.0, 0.0]


def test_bm25_unique_single_term_document_scores_highest():
    docs = [["rash"], ["fever", "cough"], ["cough", "seizure"]]
    index = Bm25Index(docs)
    scores = [index.score(["rash"], i) for i in range(3)]
    assert scores[0] > scores[1]
    assert scores[0] > scores[2]
    assert index.topk(["rash"], 1) == [(0, scores[0])]


def test_bm25_statistics_are_stable_across_queries():
    docs = [["fever", "cough"], ["rash", "rash", "fever"], []]
    index = Bm25Index(docs)
    assert index.avgdl == approx(5 / 3)
    before = (dict(index.doc_freqs), list(index.doc_lengths), index.avgdl)
    for query in (["fever"], ["rash", "cough"], []):
        index.topk(query, 2)
    assert (dict(index.doc_freqs), list(index.doc_lengths), index.avgdl) == before


def test_bm25_ties_and_short_corpus():
    index = Bm25Index([["fever"], ["fever"], ["cough"]])
    assert [i for i, _ in index.topk(["fever"], 10)] == [0, 1, 2]
    assert index.topk(["fever"], 0) == []


def _trace_corpus(rng, instances, steps):
    corpus = []
    for i in range(instances):
        lines = []
        for j in range(steps):
            words = [rng.choice(VOCABULARY) for _ in range(rng.randint(2, 8))]
            lines.append(f"{j + 1}. " + " ".join(words) + " was considered.")
        case_text = " ".join(rng.choice(VOCABULARY) for _ in range(15))
        corpus.append(CorpusInstance(case_text, "\n".join(lines), f"disease {i}", i))
    return corpus


def brute_force_traces(segments, query_entities, k):
    scored = []
    for s in segments:
        union = query_entities | s.entities
        similarity = len(query_entities & s.entities) / len(union) if union else 0.0
        if similarity > 0:
            scored.append((s, similarity))
    scored.sort(key=lambda p: (-p[1], p[0].instance_index, p[0].step_index))
    return [(s.instance_index, s.step_index) for s, _ in scored[:k]]


def test_trace_retrieval_matches_brute_force():
    rng = random.Random(99)
    extractor = LexiconExtractor(LEXICON)
    database = CaseDatabase(_trace_corpus(rng, 12, 4), extractor)
    segments = database.segments.segments
    assert len(segments) >= 40

    for q in range(20):
        case = CaseReport(f"q{q}", " ".join(rng.choice(VOCABULARY) for _ in range(rng.randint(2, 12))))
        query_entities = extractor.extract(case.text)
        for k in (1, 5, 10):
            actual = [(s.instance_index, s.step_index) for s in database.topk_traces(case, k)]
            assert actual == brute_force_traces(segments, query_entities, k), f"{case.text}, k={k}"


def test_trace_retrieval_without_query_entities():
    rng = random.Random(3)
    database = CaseDatabase(_trace_corpus(rng, 3, 3), LexiconExtractor(LEXICON))
    assert database.topk_traces(CaseReport("q", "nothing recognisable here"), 10) == []


def test_trace_retrieval_dominant_segment_first():
    corpus = [
        CorpusInstance("a", "1. Fever and cough were noted.\n2. Rash was absent.", "pneumonia", 0),
        CorpusInstance("b", "1. Seizure history.\n2. Headache.", "epilepsy", 1),
    ]
    database = CaseDatabase(corpus, LexiconExtractor(LEXICON))
    result = database.topk_traces(CaseReport("q", "fever with cough"), 10)
    assert [(s.instance_index, s.step_index) for s in result] == [(0, 0)]


def _random_set(rng):
    return frozenset(rng.sample("abcdefghij", rng.randint(0, 6)))


def test_jaccard_properties():
    rng = random.Random(1234)
    for _ in range(1000):
        a, b = _random_set(rng), _random_set(rng)
        value = jaccard(a, b)
        assert value == jaccard(b, a)
        assert 0.0 <= value <= 1.0
        if a or b:
            assert (value == 1.0) == (a == b)
        else:
            assert value == 0.0

        # adding an element outside both sets to one side keeps the intersection and can only lower similarity
        extra = next(c for c in "klmnopqrstuvwxyz" if c not in a | b)
        assert jaccard(a | {extra}, b) <= value


test_data = [
    ({"fever", "cough"}, {"fever", "cough"}, 1.0),
    ({"a", "b", "c"}, {"b", "c", "d"}, 0.5),
    (set(), set(), 0.0),
]


@mark.parametrize("a,b,expected", test_data)
def test_jaccard_examples(a, b, expected):
    assert jaccard(frozenset(a), frozenset(b)) == expected


def test_tokenize():
    assert tokenize("Strength 4/5 in the LEFT triceps; CN-III palsy") == ["strength", "4", "5", "in", "the", "left", "triceps", "cn", "iii", "palsy"]
