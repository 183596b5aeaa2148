"""Seen/unseen partition of an evaluation set against the case database."""
from dataclasses import dataclass
import logging
from typing import Tuple

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    """Case ids split by whether their gold diagnosis occurs in the corpus."""

    seen: Tuple[str, ...]
    unseen: Tuple[str, ...]
    excluded: Tuple[str, ...] = ()

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise ValueError("a case cannot be both seen and unseen")

    def subset_of(self, case_id):
        if case_id in self.seen:
            return "seen"
        if case_id in self.unseen:
            return "unseen"
        return None


def seen_unseen_split(cases, corpus, synonyms) -> Partition:
    """A case is seen when its gold diagnosis matches some corpus diagnosis by normalized name or synonym.

    Cases without a gold diagnosis are excluded with a warning.
    """
    known = {synonyms.key(instance.diagnosis) for instance in corpus}

    seen, unseen, excluded = [], [], []
    for case in cases:
        if not (case.gold_diagnosis or "").strip():
            logger.warning("Case %s has no gold diagnosis; left out of the seen/unseen split", case.id)
            excluded.append(case.id)
        elif synonyms.key(case.gold_diagnosis) in known:
            seen.append(case.id)
        else:
            unseen.append(case.id)

    logger.info("Seen/unseen split: %d seen, %d unseen, %d excluded", len(seen), len(unseen), len(excluded))
    return Partition(tuple(seen), tuple(unseen), tuple(excluded))
