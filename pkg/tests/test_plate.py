import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2stream.ingest import PlateCandidate
from co2stream.plate import (
    ConsensusStatus,
    NormalizedPlate,
    RejectedRead,
    RejectReason,
    consensus,
    format_score,
    normalize,
)


class TestNormalize:
    def test_spaces_and_case(self):
        assert normalize("ab12 cde").text == "AB12CDE"

    def test_too_short(self):
        with pytest.raises(RejectedRead) as exc_info:
            normalize("AB1")
        assert exc_info.value.reason == RejectReason.TOO_SHORT

    def test_punctuation_stripped_to_six(self):
        assert normalize("AB12-CD").text == "AB12CD"

    def test_too_long(self):
        with pytest.raises(RejectedRead) as exc_info:
            normalize("ABCDEFGHI")
        assert exc_info.value.reason == RejectReason.TOO_LONG

    def test_bad_characters(self):
        with pytest.raises(RejectedRead) as exc_info:
            normalize("AB12ΩDE")
        assert exc_info.value.reason == RejectReason.BAD_CHARS

    def test_lowercase_mixed_punct(self):
        assert normalize(" ab-12.cd e ").text == "AB12CDE"

    @given(st.text(max_size=20))
    @settings(max_examples=300)
    def test_normalize_never_crashes(self, raw):
        try:
            plate = normalize(raw)
        except RejectedRead:
            return
        assert 6 <= len(plate.text) <= 8
        assert plate.text == plate.text.upper()
        assert all(c.isalnum() and c.isascii() for c in plate.text)


class TestFormatScore:
    def test_standard_pattern(self):
        assert format_score(NormalizedPlate("AB12CDE")) == 2

    def test_seven_chars_nonstandard(self):
        assert format_score(NormalizedPlate("1234567")) == 1

    def test_six_chars(self):
        assert format_score(NormalizedPlate("AB12CD")) == 0


def reads(*items):
    return [PlateCandidate(text, conf) for text, conf in items]


class TestConsensus:
    def test_majority_standard_format_wins(self):
        result = consensus(
            reads(("AB12CDE", 0.9), ("AB12CDE", 0.9), ("AB12CDE", 0.9), ("AB12CD", 0.8))
        )
        assert result.plate.text == "AB12CDE"
        assert result.support == 3
        assert result.score == pytest.approx(2.7)
        assert result.status == ConsensusStatus.CONFIRMED

    def test_empty_reads(self):
        result = consensus([])
        assert result.status == ConsensusStatus.NO_PLATE
        assert result.plate is None

    def test_all_rejected(self):
        result = consensus(reads(("XY", 0.99)))
        assert result.status == ConsensusStatus.NO_PLATE

    def test_single_read_low_support(self):
        result = consensus(reads(("AB12CDE", 0.5)))
        assert result.status == ConsensusStatus.LOW_SUPPORT
        assert result.plate.text == "AB12CDE"

    def test_min_support_configurable(self):
        result = consensus(reads(("AB12CDE", 0.5)), min_support=1)
        assert result.status == ConsensusStatus.CONFIRMED

    def test_format_score_beats_confidence(self):
        # 6-char text has more summed confidence, but 7-char standard wins.
        result = consensus(reads(("AB12CD", 0.99), ("AB12CD", 0.99), ("XY34ZZA", 0.3)))
        assert result.plate.text == "XY34ZZA"

    def test_lexicographic_tie_break(self):
        result = consensus(reads(("BB11BBB", 0.5), ("AA11AAA", 0.5)))
        assert result.plate.text == "AA11AAA"

    def test_permutation_invariance(self):
        base = [
            ("AB12CDE", 0.9), ("AB12CDE", 0.7), ("AB12CDF", 0.8),
            ("AB12CD", 0.6), ("bogus", 0.5), ("AB12CDF", 0.75),
        ]
        rng = random.Random(0)
        expected = consensus(reads(*base))
        for _ in range(200):
            shuffled = base[:]
            rng.shuffle(shuffled)
            result = consensus(reads(*shuffled))
            assert result == expected

    def test_adding_winning_read_keeps_winner(self):
        base = [("AB12CDE", 0.9), ("AB12CDE", 0.8), ("XY34ZWV", 0.9)]
        winner = consensus(reads(*base)).plate.text
        extended = base + [(winner, 0.5)]
        assert consensus(reads(*extended)).plate.text == winner

    @given(
        st.lists(
            st.tuples(
                st.text(alphabet="ABC012 -", min_size=0, max_size=10),
                st.floats(0, 1),
            ),
            max_size=12,
        )
    )
    @settings(max_examples=300)
    def test_consensus_invariants(self, raw_reads):
        result = consensus(reads(*raw_reads))
        if result.status == ConsensusStatus.NO_PLATE:
            assert result.plate is None and result.support == 0
        else:
            assert result.support >= 1
            assert 6 <= len(result.plate.text) <= 8
            if result.status == ConsensusStatus.CONFIRMED:
                assert result.support >= 2
