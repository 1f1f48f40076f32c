"""Plate-read normalization and per-track consensus election.

Raw OCR reads are messy: spacing, punctuation, casing, and outright
misreads. Reads are normalized to bare uppercase alphanumerics, filtered to
plausible plate lengths (6 to 8 characters, 7 preferred), then grouped by
exact text; the winning group takes format quality first, summed confidence
second, and support third.
"""

from __future__ import annotations

import re
import string
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .ingest import PlateCandidate

MIN_LEN = 6
MAX_LEN = 8
PREFERRED_LEN = 7

# Two letters, two digits, three letters: the current standard format that a
# 7-character read "ideally" matches.
_STANDARD_7 = re.compile(r"^[A-Z]{2}[0-9]{2}[A-Z]{3}$")
_STRIP_TABLE = str.maketrans("", "", string.whitespace + string.punctuation)
_VALID_TEXT = re.compile(r"^[A-Z0-9]*$")


class RejectReason(Enum):
    TOO_SHORT = "too_short"
    TOO_LONG = "too_long"
    BAD_CHARS = "bad_chars"


class RejectedRead(Exception):
    def __init__(self, reason: RejectReason, raw: str):
        self.reason = reason
        self.raw = raw
        super().__init__(f"{reason.value}: {raw!r}")


@dataclass(frozen=True)
class NormalizedPlate:
    """Uppercase alphanumeric plate text, length 6 to 8."""

    text: str

    def __post_init__(self):
        if not MIN_LEN <= len(self.text) <= MAX_LEN:
            raise ValueError(f"plate length out of range: {self.text!r}")
        if not _VALID_TEXT.fullmatch(self.text):
            raise ValueError(f"plate has invalid characters: {self.text!r}")


class ConsensusStatus(Enum):
    CONFIRMED = "confirmed"
    LOW_SUPPORT = "low_support"
    NO_PLATE = "no_plate"


@dataclass(frozen=True)
class PlateConsensus:
    plate: NormalizedPlate | None
    score: float
    support: int
    status: ConsensusStatus

    @classmethod
    def none(cls) -> PlateConsensus:
        return cls(None, 0.0, 0, ConsensusStatus.NO_PLATE)


def normalize(raw: str) -> NormalizedPlate:
    """Uppercase and strip separators; reject implausible reads."""
    text = raw.translate(_STRIP_TABLE).upper()
    if not _VALID_TEXT.fullmatch(text):
        raise RejectedRead(RejectReason.BAD_CHARS, raw)
    if len(text) < MIN_LEN:
        raise RejectedRead(RejectReason.TOO_SHORT, raw)
    if len(text) > MAX_LEN:
        raise RejectedRead(RejectReason.TOO_LONG, raw)
    return NormalizedPlate(text)


def _format_score_text(text: str) -> int:
    if _STANDARD_7.match(text):
        return 2
    if len(text) == PREFERRED_LEN:
        return 1
    return 0


def format_score(plate: NormalizedPlate) -> int:
    """2: standard 7-char pattern; 1: any other 7-char text; 0: otherwise."""
    return _format_score_text(plate.text)


def consensus(reads: Iterable[PlateCandidate], min_support: int = 2) -> PlateConsensus:
    """Elect one plate from many per-frame reads.

    Groups reads by normalized text and picks the group maximizing
    (format_score, summed confidence, support); exact ties go to the
    lexicographically smallest text. Returns NO_PLATE when every read is
    rejected.
    """
    score_by_text: dict[str, float] = defaultdict(float)
    support_by_text: dict[str, int] = defaultdict(int)
    for read in reads:
        try:
            plate = normalize(read.text)
        except RejectedRead:
            continue
        score_by_text[plate.text] += read.confidence
        support_by_text[plate.text] += 1
    if not score_by_text:
        return PlateConsensus.none()

    def rank(text: str):
        return (-_format_score_text(text), -score_by_text[text], -support_by_text[text], text)

    winner = min(score_by_text, key=rank)
    support = support_by_text[winner]
    status = ConsensusStatus.CONFIRMED if support >= min_support else ConsensusStatus.LOW_SUPPORT
    return PlateConsensus(NormalizedPlate(winner), score_by_text[winner], support, status)
