"""Deterministic cross-source grouping of Stage-1 candidates."""
from dataclasses import dataclass
from typing import List, Tuple

from diagnosis.dxcore import STAGE1_SOURCES


@dataclass(frozen=True)
class GroupMember:
    source: str
    rank: int
    name: str


@dataclass(frozen=True)
class CandidateGroup:
    """CandidateGroup gathers the items of different sources that name one disease."""

    canonical: str
    members: Tuple[GroupMember, ...]

    def __post_init__(self):
        sources = [m.source for m in self.members]
        if not sources:
            raise ValueError(f"group '{self.canonical}' has no members")
        if len(set(sources)) != len(sources):
            raise ValueError(f"group '{self.canonical}' has two members from one source")

    @property
    def support(self):
        return len(self.members)

    @property
    def best_rank(self):
        return min(m.rank for m in self.members)

    @property
    def mean_rank(self):
        return sum(m.rank for m in self.members) / len(self.members)

    @property
    def sources(self):
        return [m.source for m in self.members]

    @property
    def display_name(self):
        """Surface name of the best-ranked member; earlier sources win ties."""
        return min(self.members, key=lambda m: (m.rank, STAGE1_SOURCES.index(m.source))).name

    def vote_key(self):
        return (-self.support, self.best_rank, self.mean_rank, self.canonical)

    def describe(self):
        positions = ", ".join(f"{m.source} #{m.rank}" for m in self.members)
        return f"support {self.support} ({positions})"


def match_groups(bundle, synonyms) -> List[CandidateGroup]:
    """match_groups() groups bundle items by normalized name plus the synonym table.

    A source contributes at most its best-ranked item to a group. Groups come back in
    first-seen order (bundle source order, then rank).
    """
    members = {}
    for result in bundle.results():
        for item in result.disease_list:
            key = synonyms.key(item.name)
            group = members.setdefault(key, [])
            if any(m.source == result.source for m in group):
                continue
            group.append(GroupMember(result.source, item.rank, item.name))

    return [CandidateGroup(key, tuple(group)) for key, group in members.items()]


def render_group_summary(groups: List[CandidateGroup]) -> str:
    """One line per group in vote order, used as the Stage-2 prompt hint."""
    ordered = sorted(groups, key=CandidateGroup.vote_key)
    return "\n".join(f"- {g.display_name}: {g.describe()}" for g in ordered)
