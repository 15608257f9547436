"""Utterance-group construction: overlap chaining, span filtering, stable ids."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .core import ManifestRecord, UtteranceGroup, UtteranceSegment


@dataclass(frozen=True)
class GroupingParams:
    gap_threshold: float = 0.0  # 0 chains only overlapping/touching segments
    max_span: float = 30.0

    def __post_init__(self):
        if self.gap_threshold < 0:
            raise ValueError("gap_threshold must be >= 0")
        if self.max_span <= 0:
            raise ValueError("max_span must be positive")


def group_utterances(
    segments, params: GroupingParams = GroupingParams()
) -> tuple[list[UtteranceGroup], list[UtteranceGroup]]:
    """Chain segments whose spans overlap or sit within the gap threshold.

    Chaining over sorted intervals equals the transitive closure of the
    pairwise relation. Groups with a span above ``max_span`` land in the
    second (discarded) list; together the two lists partition the input.
    """
    segs = sorted(segments, key=lambda s: (s.start, s.end, s.speaker, s.text))
    groups: list[UtteranceGroup] = []
    discarded: list[UtteranceGroup] = []
    current: list[UtteranceSegment] = []
    chain_end = 0.0

    def finish(chain):
        group = UtteranceGroup.from_segments(chain)
        (groups if group.span <= params.max_span else discarded).append(group)

    for seg in segs:
        if current and seg.start <= chain_end + params.gap_threshold:
            current.append(seg)
            chain_end = max(chain_end, seg.end)
        else:
            if current:
                finish(current)
            current = [seg]
            chain_end = seg.end
    if current:
        finish(current)
    return groups, discarded


@dataclass(frozen=True)
class GroupedRecord:
    record: ManifestRecord
    groups: tuple[tuple[str, UtteranceGroup], ...]  # (group id, group), kept
    discarded: tuple[UtteranceGroup, ...]


def record_group_id(record: ManifestRecord, index: int) -> str:
    return f"{Path(record.audio_path).stem}-g{index:03d}"


def attach_groups(
    records, params: GroupingParams = GroupingParams()
) -> list[GroupedRecord]:
    """Group each record's segments and assign ids stable under rerun
    (audio stem + group rank by span start)."""
    out = []
    for record in records:
        groups, discarded = group_utterances(record.segments, params)
        groups.sort(key=lambda g: g.span_start)
        labeled = tuple(
            (record_group_id(record, i), group) for i, group in enumerate(groups)
        )
        out.append(GroupedRecord(record, labeled, tuple(discarded)))
    return out


def read_rttm(path) -> dict[str, list[UtteranceSegment]]:
    """Parse SPEAKER lines of an RTTM file into segments per recording id.

    RTTM carries no transcripts, so segment text is empty.
    """
    by_file: dict[str, list[UtteranceSegment]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith(("#", ";")):
                continue
            parts = line.split()
            if len(parts) < 8 or parts[0].upper() != "SPEAKER":
                continue
            try:
                start = float(parts[3])
                duration = float(parts[4])
            except ValueError:
                continue
            if duration <= 0:
                continue
            by_file.setdefault(parts[1], []).append(
                UtteranceSegment(parts[7], start, start + duration, "")
            )
    for segs in by_file.values():
        segs.sort(key=lambda s: (s.start, s.end, s.speaker))
    return by_file
