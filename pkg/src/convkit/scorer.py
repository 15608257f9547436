"""Word-level alignment, per-group cpWER via optimal stream assignment, and
corpus-level accumulation of error counts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import sot
from .segmenter import GroupingParams, attach_groups


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_words: int = 0

    def __post_init__(self):
        if min(self.substitutions, self.insertions, self.deletions, self.ref_words) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def error_rate(self) -> float:
        if self.ref_words > 0:
            return self.distance / self.ref_words
        return 0.0 if self.distance == 0 else math.inf

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_words + other.ref_words,
        )


def word_edit_distance(ref, hyp) -> ErrorCounts:
    """Levenshtein alignment with unit costs.

    Among minimal-distance alignments, substitutions are preferred over
    insertion+deletion pairs, which makes the S/I/D split unique.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    # cell = (total, ins+del, S, I, D); lexicographic min over the first two
    prev = [(j, j, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, i, 0, 0, i)]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            if ri == hyp[j - 1]:
                t, k, s, ins, dele = prev[j - 1]
                cur.append((t, k, s, ins, dele))
                continue
            st, sk, ss, si, sd = prev[j - 1]  # substitute
            dt, dk, ds, di, dd = prev[j]      # delete ref word
            it, ik, is_, ii, id_ = cur[j - 1]  # insert hyp word
            best = min(
                (st + 1, sk, ss + 1, si, sd),
                (dt + 1, dk + 1, ds, di, dd + 1),
                (it + 1, ik + 1, is_, ii + 1, id_),
                key=lambda c: (c[0], c[1]),
            )
            cur.append(best)
        prev = cur
    _, _, s, i_, d = prev[m]
    return ErrorCounts(s, i_, d, ref_words=n)


@dataclass(frozen=True)
class GroupScore:
    group_id: str
    assignment: tuple[tuple[str, str], ...]  # (ref speaker, hyp stream) pairs
    counts: ErrorCounts
    permutation_used: tuple[int, ...]
    missing_hypothesis: bool = False


_PAD = "<empty>"


def cp_wer(refs: dict, hyps: dict, group_id: str = "") -> GroupScore:
    """Concatenated-minimum-permutation WER for one utterance group.

    ``refs`` maps speaker -> word sequence (each speaker's utterances
    concatenated in start-time order); ``hyps`` maps stream label -> word
    sequence. The smaller side is padded with empty streams and the
    assignment minimizing total S+I+D is solved exactly.
    """
    ref_keys = sorted(refs)
    hyp_keys = sorted(hyps)
    k = max(len(ref_keys), len(hyp_keys))
    if k == 0:
        return GroupScore(group_id, (), ErrorCounts(), ())
    ref_streams = [list(refs[key]) for key in ref_keys]
    hyp_streams = [list(hyps[key]) for key in hyp_keys]
    ref_labels = ref_keys + [f"{_PAD}:r{i}" for i in range(k - len(ref_keys))]
    hyp_labels = hyp_keys + [f"{_PAD}:h{i}" for i in range(k - len(hyp_keys))]
    ref_streams += [[] for _ in range(k - len(ref_streams))]
    hyp_streams += [[] for _ in range(k - len(hyp_streams))]

    counts_matrix = [
        [word_edit_distance(r, h) for h in hyp_streams] for r in ref_streams
    ]
    # Lexicographic objective (total distance, then insertions+deletions):
    # the summed S/I/D split is then unique among optimal assignments, which
    # makes counts invariant under relabeling of hypothesis streams.
    tie_scale = 1 + sum(len(s) for s in ref_streams) + sum(len(s) for s in hyp_streams)
    cost = np.array(
        [
            [
                c.distance * tie_scale + c.insertions + c.deletions
                for c in row
            ]
            for row in counts_matrix
        ],
        dtype=np.int64,
    )
    rows, cols = linear_sum_assignment(cost)
    total = ErrorCounts()
    pairs = []
    for i, j in zip(rows, cols):
        total = total + counts_matrix[i][j]
        if ref_labels[i].startswith(_PAD) and hyp_labels[j].startswith(_PAD):
            continue
        pairs.append((ref_labels[i], hyp_labels[j]))
    return GroupScore(group_id, tuple(pairs), total, tuple(int(c) for c in cols))


def reference_streams(group, normalizer=sot.normalize_text) -> dict[str, list[str]]:
    """Per-speaker reference word sequences in serialization order."""
    streams: dict[str, list[str]] = {}
    for seg in sorted(group.segments, key=sot.segment_sort_key):
        words = normalizer(seg.text).split()
        streams.setdefault(seg.speaker, []).extend(words)
    return streams


def streams_from_sot(
    sot_text: str,
    cfg: sot.SotConfig = sot.SotConfig(),
    num_streams: int = 2,
    normalizer=sot.normalize_text,
) -> dict[str, list[str]]:
    """Fold serialized chunks round-robin into hypothesis streams.

    Change-token chunks alternate between speakers, so chunk i contributes to
    stream (i mod num_streams); stream labels follow first appearance.
    """
    result = sot.deserialize(sot_text, cfg)
    streams: dict[str, list[str]] = {}
    for channel, text in result.chunks:
        label = f"ch{channel % num_streams}"
        streams.setdefault(label, []).extend(normalizer(text).split())
    return {label: words for label, words in streams.items() if words}


@dataclass
class CorpusReport:
    corpus: ErrorCounts
    cp_wer: float
    group_scores: list[GroupScore] = field(default_factory=list)
    missing_groups: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        def finite(x: float) -> float | None:
            return x if math.isfinite(x) else None

        return {
            "corpus": {
                "cp_wer": finite(self.cp_wer),
                "substitutions": self.corpus.substitutions,
                "insertions": self.corpus.insertions,
                "deletions": self.corpus.deletions,
                "errors": self.corpus.distance,
                "ref_words": self.corpus.ref_words,
                "groups": len(self.group_scores),
                "missing_groups": len(self.missing_groups),
            },
            "groups": [
                {
                    "group_id": gs.group_id,
                    "substitutions": gs.counts.substitutions,
                    "insertions": gs.counts.insertions,
                    "deletions": gs.counts.deletions,
                    "errors": gs.counts.distance,
                    "ref_words": gs.counts.ref_words,
                    "cp_wer": finite(gs.counts.error_rate),
                    "assignment": [list(pair) for pair in gs.assignment],
                    "missing_hypothesis": gs.missing_hypothesis,
                }
                for gs in self.group_scores
            ],
        }


@dataclass(frozen=True)
class ScoreConfig:
    grouping: GroupingParams = GroupingParams()
    sot: sot.SotConfig = sot.SotConfig()
    num_streams: int = 2


def read_hypotheses(path) -> dict[str, dict]:
    """Read hypothesis JSONL: {"group_id", "sot_text"} or {"group_id", "streams"}."""
    hyps: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"hypothesis line {line_no}: invalid JSON ({exc.msg})")
            if "group_id" not in obj:
                raise ValueError(f"hypothesis line {line_no}: missing group_id")
            if "sot_text" not in obj and "streams" not in obj:
                raise ValueError(
                    f"hypothesis line {line_no}: needs sot_text or streams"
                )
            hyps[obj["group_id"]] = obj
    return hyps


def _hypothesis_streams(obj: dict, cfg: ScoreConfig) -> dict[str, list[str]]:
    if "streams" in obj:
        streams = {
            f"ch{i}": sot.normalize_text(text).split()
            for i, text in enumerate(obj["streams"])
        }
        return {k: v for k, v in streams.items() if v}
    return streams_from_sot(obj["sot_text"], cfg.sot, cfg.num_streams)


def score_corpus(records, hypotheses: dict, cfg: ScoreConfig = ScoreConfig()) -> CorpusReport:
    """Score every utterance group of the reference records.

    Hypotheses are keyed by group id. A missing hypothesis counts as all
    deletions and is flagged; an unknown group id in the hypotheses is an
    error. Corpus cpWER is the micro average: summed errors over summed
    reference words.
    """
    grouped = attach_groups(records, cfg.grouping)
    known_ids = set()
    scores: list[GroupScore] = []
    missing: list[str] = []
    total = ErrorCounts()
    for grouped_record in grouped:
        for group_id, group in grouped_record.groups:
            known_ids.add(group_id)
            refs = reference_streams(group)
            obj = hypotheses.get(group_id)
            if obj is None:
                n_ref = sum(len(words) for words in refs.values())
                score = GroupScore(
                    group_id,
                    tuple((speaker, "<missing>") for speaker in sorted(refs)),
                    ErrorCounts(0, 0, n_ref, ref_words=n_ref),
                    (),
                    missing_hypothesis=True,
                )
                missing.append(group_id)
            else:
                score = cp_wer(refs, _hypothesis_streams(obj, cfg), group_id)
            scores.append(score)
            total = total + score.counts
    unknown = set(hypotheses) - known_ids
    if unknown:
        raise ValueError(f"unknown group ids in hypotheses: {sorted(unknown)[:5]}")
    return CorpusReport(
        corpus=total,
        cp_wer=total.error_rate,
        group_scores=scores,
        missing_groups=missing,
    )
