"""Raw detector labels -> broad vehicle categories, plus duplicate-free counting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

# Raw (lowercased) detector labels mapped onto the reporting categories.
# Overridable via the classmap config section.
DEFAULT_CATEGORY_MAP: dict[str, str] = {
    "car": "car",
    "suv": "car",
    "taxi": "car",
    "private-car": "car",
    "government-car": "car",
    "van": "truck",
    "pickup": "truck",
    "truck": "truck",
    "bus": "bus",
    "minibus": "bus",
    "motorbike": "motorcycle",
    "motorcycle": "motorcycle",
}


class UnknownLabel(Exception):
    """Raised in strict mode when a raw label has no mapping."""


@dataclass(frozen=True)
class CategoryMap:
    mapping: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORY_MAP))
    strict: bool = False
    default_category: str = "car"


def map_label(raw: str, cmap: CategoryMap | None = None) -> str:
    """Case-insensitive category lookup for one raw label."""
    cmap = cmap or CategoryMap()
    category = cmap.mapping.get(raw.lower())
    if category is None:
        if cmap.strict:
            raise UnknownLabel(raw)
        return cmap.default_category
    return category


class VehicleCounter:
    """Tracks which category each track id counts under, without duplication.

    Each record() is one category vote for a track. The track sits under its
    majority category; vote ties go to the most recently seen category.
    """

    def __init__(self):
        self._members: dict[str, set[int]] = {}
        self._current: dict[int, str] = {}
        self._votes: dict[int, Counter] = {}
        self._last_vote_seq: dict[int, dict[str, int]] = {}
        self._seq = 0

    def record(self, track_id: int, category: str) -> None:
        self._seq += 1
        votes = self._votes.setdefault(track_id, Counter())
        votes[category] += 1
        self._last_vote_seq.setdefault(track_id, {})[category] = self._seq
        if len(votes) == 1:
            winner = category
        else:
            winner = max(
                votes, key=lambda c: (votes[c], self._last_vote_seq[track_id][c])
            )
        current = self._current.get(track_id)
        if current != winner:
            if current is not None:
                self._members[current].discard(track_id)
            self._members.setdefault(winner, set()).add(track_id)
            self._current[track_id] = winner

    def category_of(self, track_id: int) -> str | None:
        return self._current.get(track_id)

    def counts(self) -> dict[str, int]:
        """Snapshot of category -> unique vehicle count (zero entries omitted)."""
        return {c: len(ids) for c, ids in self._members.items() if ids}

    def total(self) -> int:
        return sum(len(ids) for ids in self._members.values())
