import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convkit.core import UtteranceGroup, UtteranceSegment
from convkit.sot import SotConfig, deserialize, normalize_text, serialize_group


def group_of(*triples):
    return UtteranceGroup.from_segments(
        UtteranceSegment(spk, start, start + 0.5, text) for spk, start, text in triples
    )


class TestSerialize:
    def test_two_speakers_one_change(self):
        g = group_of(("S1", 0.0, "hello"), ("S2", 1.0, "hi"))
        assert serialize_group(g) == "hello <sc> hi"

    def test_single_speaker_no_token(self):
        g = group_of(("S1", 0.0, "one"), ("S1", 1.0, "two"))
        assert serialize_group(g) == "one two"

    def test_three_segments_two_tokens(self):
        g = group_of(("S1", 0.0, "a"), ("S2", 1.0, "b"), ("S1", 2.0, "c"))
        assert serialize_group(g) == "a <sc> b <sc> c"

    def test_ordering_by_start_time(self):
        g = group_of(("S2", 1.0, "later"), ("S1", 0.0, "first"))
        assert serialize_group(g) == "first <sc> later"

    def test_custom_token(self):
        g = group_of(("S1", 0.0, "a"), ("S2", 1.0, "b"))
        assert serialize_group(g, SotConfig(change_token="|")) == "a | b"

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            UtteranceGroup((), 0.0, 0.0)

    def test_timestamps_not_supported(self):
        with pytest.raises(ValueError):
            SotConfig(include_timestamps=True)


class TestDeserialize:
    def test_three_chunks(self):
        result = deserialize("a <sc> b <sc> c")
        assert result.chunks == ((0, "a"), (1, "b"), (2, "c"))
        assert result.empty_chunks == 0

    def test_single_chunk(self):
        assert deserialize("a").chunks == ((0, "a"),)

    def test_empty_chunk_dropped_and_counted(self):
        result = deserialize("a <sc> <sc> b")
        assert result.chunks == ((0, "a"), (2, "b"))
        assert result.empty_chunks == 1


class TestNormalize:
    def test_punctuation_and_case(self):
        assert normalize_text("Hello, World!") == "hello world"

    def test_keeps_intra_word_apostrophe(self):
        assert normalize_text("don't  stop") == "don't stop"

    def test_strips_edge_apostrophes(self):
        assert normalize_text("'quoted'") == "quoted"

    def test_expansions(self):
        assert normalize_text("Mr. Smith vs Dr. Jones") == (
            "mister smith versus doctor jones"
        )

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=40))
    def test_idempotent(self, s):
        once = normalize_text(s)
        assert normalize_text(once) == once

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=40))
    def test_no_stray_whitespace(self, s):
        out = normalize_text(s)
        assert out == out.strip()
        assert "  " not in out


speakers = st.sampled_from(["S1", "S2", "S3"])


@st.composite
def random_groups(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    segs = []
    for i in range(n):
        start = draw(st.integers(min_value=0, max_value=100)) / 10.0
        segs.append(
            UtteranceSegment(draw(speakers), start, start + 0.5, f"w{i}")
        )
    return UtteranceGroup.from_segments(segs)


@settings(max_examples=150, deadline=None)
@given(random_groups())
def test_change_token_count_matches_speaker_changes(group):
    cfg = SotConfig()
    text = serialize_group(group, cfg)
    ordered = sorted(group.segments, key=lambda s: (s.start, s.speaker, s.text))
    changes = sum(
        1 for a, b in zip(ordered, ordered[1:]) if a.speaker != b.speaker
    )
    assert text.count(cfg.change_token) == changes
