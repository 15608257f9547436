import itertools
import json
import random

import pytest

from convkit.core import ManifestRecord, UtteranceSegment
from convkit.scorer import (
    ErrorCounts,
    cp_wer,
    read_hypotheses,
    reference_streams,
    score_corpus,
    streams_from_sot,
    word_edit_distance,
)


def edit_oracle(ref, hyp):
    """Exhaustive alignment search minimizing (total, insertions+deletions)."""
    best = None

    def walk(i, j, s, ins, dele):
        nonlocal best
        if best is not None and s + ins + dele > best[0] + 2:
            return  # cheap bound; still exhaustive within it
        if i == len(ref) and j == len(hyp):
            cand = (s + ins + dele, ins + dele, s, ins, dele)
            if best is None or cand[:2] < best[:2]:
                best = cand
            return
        if i < len(ref) and j < len(hyp):
            walk(i + 1, j + 1, s + (ref[i] != hyp[j]), ins, dele)
        if i < len(ref):
            walk(i + 1, j, s, ins, dele + 1)
        if j < len(hyp):
            walk(i, j + 1, s, ins + 1, dele)

    walk(0, 0, 0, 0, 0)
    return best[2], best[3], best[4]


def brute_force_cp_total(refs, hyps):
    """Minimum total edit distance over all stream permutations, with empty
    padding to equal cardinality."""
    ref_streams = [list(v) for _, v in sorted(refs.items())]
    hyp_streams = [list(v) for _, v in sorted(hyps.items())]
    k = max(len(ref_streams), len(hyp_streams))
    ref_streams += [[] for _ in range(k - len(ref_streams))]
    hyp_streams += [[] for _ in range(k - len(hyp_streams))]
    best = None
    for perm in itertools.permutations(range(k)):
        total = 0
        for i, j in enumerate(perm):
            s, ins, dele = edit_oracle(ref_streams[i], hyp_streams[j])
            total += s + ins + dele
        best = total if best is None else min(best, total)
    return best


class TestWordEditDistance:
    def test_identity(self):
        counts = word_edit_distance("a b c".split(), "a b c".split())
        assert (counts.substitutions, counts.insertions, counts.deletions) == (0, 0, 0)
        assert counts.ref_words == 3

    def test_cat_bat_example(self):
        # fixed oracle-checked example: one substitution plus one insertion
        ref, hyp = "the cat sat".split(), "the bat sat on".split()
        assert edit_oracle(ref, hyp) == (1, 1, 0)
        counts = word_edit_distance(ref, hyp)
        assert (counts.substitutions, counts.insertions, counts.deletions) == (1, 1, 0)
        assert counts.distance == 2

    def test_empty_ref(self):
        counts = word_edit_distance([], "x y".split())
        assert counts.insertions == 2
        assert counts.distance == 2
        assert counts.ref_words == 0

    def test_empty_hyp(self):
        counts = word_edit_distance("x y z".split(), [])
        assert counts.deletions == 3

    def test_substitution_preferred_over_ins_del(self):
        # both (S=2) and (I=1,D=1) reach distance 2; S must win the tie
        counts = word_edit_distance("a b".split(), "c a".split())
        assert counts.distance == 2
        assert counts.insertions + counts.deletions == counts.distance - counts.substitutions

    def test_matches_exhaustive_oracle(self):
        rng = random.Random(0)
        for _ in range(200):
            ref = [rng.choice("abc") for _ in range(rng.randint(0, 6))]
            hyp = [rng.choice("abc") for _ in range(rng.randint(0, 6))]
            counts = word_edit_distance(ref, hyp)
            assert (
                counts.substitutions,
                counts.insertions,
                counts.deletions,
            ) == edit_oracle(ref, hyp), (ref, hyp)

    def test_counts_validation(self):
        with pytest.raises(ValueError):
            ErrorCounts(substitutions=-1)


class TestCpWer:
    def test_label_swap_invariance(self):
        refs = {"S1": "hello there".split(), "S2": "good morning".split()}
        hyps = {"A": "good morning".split(), "B": "hello there".split()}
        score = cp_wer(refs, hyps)
        assert score.counts.distance == 0
        assert dict(score.assignment) == {"S1": "B", "S2": "A"}

    def test_derived_two_speaker_example(self):
        refs = {"S1": "a b c d".split(), "S2": "e f".split()}
        hyps = {"A": "a b x d".split(), "B": "e".split()}
        score = cp_wer(refs, hyps)
        assert brute_force_cp_total(refs, hyps) == 2
        assert score.counts.distance == 2
        assert score.counts.substitutions == 1
        assert score.counts.deletions == 1
        assert score.counts.ref_words == 6
        assert score.counts.error_rate == pytest.approx(2 / 6)
        assert dict(score.assignment) == {"S1": "A", "S2": "B"}

    def test_missing_stream_padded(self):
        refs = {"S1": "a b".split(), "S2": "c d e".split()}
        hyps = {"A": "a b".split()}
        score = cp_wer(refs, hyps)
        assert brute_force_cp_total(refs, hyps) == 3
        assert score.counts.deletions == 3
        assert score.counts.distance == 3

    def test_both_empty(self):
        score = cp_wer({}, {})
        assert score.counts == ErrorCounts()
        assert score.assignment == ()

    def test_more_hyp_streams_than_refs(self):
        refs = {"S1": "a b c".split()}
        hyps = {"A": "a b c".split(), "B": "x".split()}
        score = cp_wer(refs, hyps)
        assert score.counts.insertions == 1
        assert score.counts.distance == 1

    def test_single_speaker_equals_plain_wer(self):
        rng = random.Random(4)
        for _ in range(50):
            ref = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
            hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
            plain = word_edit_distance(ref, hyp)
            score = cp_wer({"S1": ref}, {"h": hyp})
            assert score.counts.distance == plain.distance

    def test_permutation_invariance_randomized(self):
        rng = random.Random(9)
        for _ in range(50):
            n_ref = rng.randint(1, 3)
            n_hyp = rng.randint(1, 3)
            refs = {
                f"S{i}": [rng.choice("abc") for _ in range(rng.randint(0, 5))]
                for i in range(n_ref)
            }
            streams = [
                [rng.choice("abc") for _ in range(rng.randint(0, 5))]
                for _ in range(n_hyp)
            ]
            base = cp_wer(refs, {f"h{i}": s for i, s in enumerate(streams)})
            perm = list(range(n_hyp))
            rng.shuffle(perm)
            relabeled = cp_wer(refs, {f"h{i}": streams[p] for i, p in enumerate(perm)})
            assert base.counts.distance == relabeled.counts.distance

    def test_optimal_vs_brute_force_randomized(self):
        rng = random.Random(11)
        for _ in range(60):
            refs = {
                f"S{i}": [rng.choice("abc") for _ in range(rng.randint(0, 6))]
                for i in range(rng.randint(1, 4))
            }
            hyps = {
                f"h{i}": [rng.choice("abc") for _ in range(rng.randint(0, 6))]
                for i in range(rng.randint(1, 4))
            }
            assert cp_wer(refs, hyps).counts.distance == brute_force_cp_total(refs, hyps)


class TestStreamsFromSot:
    def test_two_speaker_fold(self):
        streams = streams_from_sot("a b <sc> c <sc> d")
        assert streams == {"ch0": ["a", "b", "d"], "ch1": ["c"]}

    def test_single_chunk(self):
        assert streams_from_sot("hello there") == {"ch0": ["hello", "there"]}

    def test_normalization_applied(self):
        assert streams_from_sot("Hello! <sc> WORLD.") == {
            "ch0": ["hello"],
            "ch1": ["world"],
        }


def make_record(index, segments):
    duration = max(s.end for s in segments) + 0.5
    return ManifestRecord(
        f"audio/conv_{index:06d}.wav", 16000, duration, tuple(segments),
        "", "conv_tts", index,
    )


def far_group_record(index, texts_by_speaker):
    """One record whose groups are far apart: one group per (speaker, text) pair."""
    segments = []
    t = 0.0
    for speaker, text in texts_by_speaker:
        segments.append(UtteranceSegment(speaker, t, t + 1.0, text))
        t += 100.0
    return make_record(index, segments)


class TestScoreCorpus:
    def test_hand_summed_accumulation(self):
        # group 1: refs 6 words, 2 errors; group 2: refs 4 words, 0 errors
        rec = make_record(0, [
            UtteranceSegment("S1", 0.0, 1.0, "a b c d"),
            UtteranceSegment("S2", 0.5, 1.5, "e f"),
            UtteranceSegment("S1", 200.0, 201.0, "g h i j"),
        ])
        hyps = {
            "conv_000000-g000": {"group_id": "conv_000000-g000",
                                 "streams": ["a b x d", "e"]},
            "conv_000000-g001": {"group_id": "conv_000000-g001",
                                 "streams": ["g h i j"]},
        }
        report = score_corpus([rec], hyps)
        assert report.corpus.distance == 2
        assert report.corpus.ref_words == 10
        assert report.cp_wer == pytest.approx(0.2)
        # reconstruct by hand from per-group blocks
        blocks = report.as_dict()["groups"]
        total_err = sum(b["errors"] for b in blocks)
        total_ref = sum(b["ref_words"] for b in blocks)
        assert report.cp_wer == total_err / total_ref

    def test_perfect_hypotheses_zero(self):
        rec = make_record(0, [
            UtteranceSegment("S1", 0.0, 1.0, "hello there"),
            UtteranceSegment("S2", 0.5, 1.5, "good morning"),
        ])
        hyps = {"conv_000000-g000": {"group_id": "conv_000000-g000",
                                     "sot_text": "hello there <sc> good morning"}}
        report = score_corpus([rec], hyps)
        assert report.cp_wer == 0.0

    def test_missing_group_counts_deletions(self):
        rec = far_group_record(0, [("S1", "one two three four five"),
                                   ("S2", "six seven")])
        hyps = {"conv_000000-g001": {"group_id": "conv_000000-g001",
                                     "streams": ["six seven"]}}
        report = score_corpus([rec], hyps)
        assert report.missing_groups == ["conv_000000-g000"]
        missing_block = [
            b for b in report.as_dict()["groups"] if b["missing_hypothesis"]
        ][0]
        assert missing_block["deletions"] == 5
        assert report.corpus.deletions == 5

    def test_unknown_group_id_errors(self):
        rec = far_group_record(0, [("S1", "a")])
        hyps = {"nope-g999": {"group_id": "nope-g999", "streams": ["a"]}}
        with pytest.raises(ValueError, match="unknown group ids"):
            score_corpus([rec], hyps)

    def test_normalization_applied_to_both_sides(self):
        rec = make_record(0, [UtteranceSegment("S1", 0.0, 1.0, "Hello, There!")])
        hyps = {"conv_000000-g000": {"group_id": "conv_000000-g000",
                                     "sot_text": "hello there"}}
        assert score_corpus([rec], hyps).cp_wer == 0.0

    def test_read_hypotheses(self, tmp_path):
        path = tmp_path / "hyp.jsonl"
        path.write_text(
            json.dumps({"group_id": "g1", "sot_text": "a"}) + "\n"
            + json.dumps({"group_id": "g2", "streams": ["b"]}) + "\n",
            encoding="utf-8",
        )
        hyps = read_hypotheses(path)
        assert set(hyps) == {"g1", "g2"}
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"group_id": "g"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match="sot_text or streams"):
            read_hypotheses(bad)

    def test_reference_streams_order(self):
        rec_segments = [
            UtteranceSegment("S1", 2.0, 3.0, "later words"),
            UtteranceSegment("S1", 0.0, 1.0, "first words"),
        ]
        from convkit.core import UtteranceGroup

        group = UtteranceGroup.from_segments(rec_segments)
        assert reference_streams(group)["S1"] == ["first", "words", "later", "words"]
