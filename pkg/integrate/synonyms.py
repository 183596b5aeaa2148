"""Synonym table: groups of surface forms that name the same disease."""
import logging
import os

from diagnosis.dxcore import normalize_disease_name

logger = logging.getLogger(__name__)

SEED_SYNONYMS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "seed_synonyms.txt")


class SynonymTable:
    """SynonymTable maps every normalized form of a group to the group's first form."""

    def __init__(self, groups=()):
        self._canonical = {}
        for group in groups:
            self.add_group(group)

    def add_group(self, forms):
        forms = [normalize_disease_name(f) for f in forms if f.strip()]
        forms = [f for f in forms if f]
        if not forms:
            return

        canonical = self._canonical.get(forms[0], forms[0])
        for form in forms:
            existing = self._canonical.get(form)
            if existing is not None and existing != canonical:
                logger.warning("Synonym '%s' already belongs to '%s'; ignored for '%s'", form, existing, canonical)
                continue
            self._canonical[form] = canonical

    @staticmethod
    def from_file(filename):
        """One group per line, surface forms separated by '|'; '#' starts a comment line."""
        table = SynonymTable()
        with open(filename, "rt", encoding="utf-8-sig") as f:
            for line in f:
                if line.strip() and not line.lstrip().startswith("#"):
                    table.add_group(line.strip().split("|"))
        return table

    @staticmethod
    def seed():
        return SynonymTable.from_file(SEED_SYNONYMS)

    def __len__(self):
        return len(self._canonical)

    def canonical(self, normalized_name: str) -> str:
        return self._canonical.get(normalized_name, normalized_name)

    def key(self, name: str) -> str:
        """key() is the grouping key of a raw disease name."""
        return self.canonical(normalize_disease_name(name))

    def equivalent(self, a: str, b: str) -> bool:
        return self.key(a) == self.key(b)
