"""Biomedical entity extraction: a lexicon scan, a remote NER client, and a fallback wrapper."""
import logging
import os

import httpx

from diagnosis.dxcore import DiagnosisError, entity_set

from .corpus import tokenize

logger = logging.getLogger(__name__)

SEED_LEXICON = os.path.join(os.path.dirname(os.path.abspath(__file__)), "seed_lexicon.txt")


class ExtractorError(DiagnosisError):
    """The entity extractor could not be reached or answered garbage."""


class LexiconExtractor:
    """LexiconExtractor finds lexicon terms by a longest-match scan over the token stream."""

    def __init__(self, terms):
        self.terms = set()
        for term in terms:
            tokens = tuple(tokenize(term))
            if tokens:
                self.terms.add(tokens)
        self.max_len = max((len(t) for t in self.terms), default=0)

    @staticmethod
    def from_file(filename):
        """One term per line; blank lines and lines starting with '#' are skipped."""
        with open(filename, "rt", encoding="utf-8-sig") as f:
            terms = [line.strip() for line in f if line.strip() and not line.lstrip().startswith("#")]
        logger.debug("Loaded %d lexicon terms from '%s'", len(terms), filename)
        return LexiconExtractor(terms)

    @staticmethod
    def seed():
        return LexiconExtractor.from_file(SEED_LEXICON)

    def extract(self, text: str) -> frozenset:
        tokens = tokenize(text or "")
        found = []
        i = 0
        while i < len(tokens):
            for length in range(min(self.max_len, len(tokens) - i), 0, -1):
                candidate = tuple(tokens[i : i + length])
                if candidate in self.terms:
                    found.append(" ".join(candidate))
                    i += length
                    break
            else:
                i += 1
        return entity_set(found)


class RemoteNerExtractor:
    """RemoteNerExtractor posts {"text": ...} and reads {"entities": [{"text": ...}, ...]}."""

    def __init__(self, endpoint, timeout=30.0, client=None):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=timeout)

    def extract(self, text: str) -> frozenset:
        if not text:
            return frozenset()

        try:
            response = self._client.post(self.endpoint, json={"text": text})
            response.raise_for_status()
            entities = response.json()["entities"]
            return entity_set(e["text"] for e in entities)
        except httpx.HTTPError as e:
            raise ExtractorError(f"NER service '{self.endpoint}' failed: {e}") from e
        except (ValueError, KeyError, TypeError) as e:
            raise ExtractorError(f"NER service '{self.endpoint}' returned a malformed response: {e}") from e


class FallbackExtractor:
    """FallbackExtractor uses `fallback` whenever `primary` raises ExtractorError."""

    def __init__(self, primary, fallback):
        self.primary = primary
        self.fallback = fallback

    def extract(self, text: str) -> frozenset:
        try:
            return self.primary.extract(text)
        except ExtractorError as e:
            logger.warning("%s; using the lexicon extractor", e)
            return self.fallback.extract(text)


def extract_entities(text: str, extractor) -> frozenset:
    return extractor.extract(text)
