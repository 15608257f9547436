"""Shared domain types and the JSONL manifest data model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Speaker labels are opaque strings; "S1"/"S2" is a convention, not a rule.
SpeakerId = str

PROVENANCES = ("overlap_sim", "tts_stitch", "conv_tts", "real")

# Segment times are serialized at millisecond precision; durations keep full
# float precision so they stay consistent with the audio file to the sample.
TIME_DECIMALS = 3


class ManifestError(ValueError):
    """Raised for malformed manifest files; message names the offending line."""


def quantize_time(t: float) -> float:
    return round(float(t), TIME_DECIMALS)


@dataclass(frozen=True)
class Turn:
    """One speaker turn of a conversation script."""

    speaker: SpeakerId
    text: str
    index: int

    def __post_init__(self):
        if not self.speaker:
            raise ValueError("turn speaker must be non-empty")
        if self.index < 0:
            raise ValueError("turn index must be >= 0")


@dataclass(frozen=True)
class ConversationScript:
    """Ordered speaker-tagged turns; the text side of a synthetic conversation."""

    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError("script must contain at least one turn")
        for pos, turn in enumerate(self.turns):
            if turn.index != pos:
                raise ValueError(
                    f"turn indices must be consecutive from 0, got {turn.index} at position {pos}"
                )

    @classmethod
    def from_pairs(cls, pairs: list[tuple[SpeakerId, str]]) -> "ConversationScript":
        return cls(tuple(Turn(spk, text, i) for i, (spk, text) in enumerate(pairs)))

    @property
    def speakers(self) -> tuple[SpeakerId, ...]:
        seen: dict[SpeakerId, None] = {}
        for turn in self.turns:
            seen.setdefault(turn.speaker, None)
        return tuple(seen)

    @property
    def speaker_count(self) -> int:
        return len(self.speakers)


@dataclass(frozen=True)
class UtteranceSegment:
    """One speaker's utterance with absolute start/end times in seconds."""

    speaker: SpeakerId
    start: float
    end: float
    text: str

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"segment start must be >= 0, got {self.start}")
        if self.end <= self.start:
            raise ValueError(f"segment end must exceed start ({self.start}..{self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class UtteranceGroup:
    """A chain of time-linked segments evaluated as one unit."""

    segments: tuple[UtteranceSegment, ...]
    span_start: float
    span_end: float

    def __post_init__(self):
        if not self.segments:
            raise ValueError("group must contain at least one segment")
        lo = min(s.start for s in self.segments)
        hi = max(s.end for s in self.segments)
        if abs(lo - self.span_start) > 1e-9 or abs(hi - self.span_end) > 1e-9:
            raise ValueError("group span must equal the extent of its segments")

    @classmethod
    def from_segments(cls, segments) -> "UtteranceGroup":
        segs = tuple(segments)
        return cls(
            segments=segs,
            span_start=min(s.start for s in segs),
            span_end=max(s.end for s in segs),
        )

    @property
    def span(self) -> float:
        return self.span_end - self.span_start


@dataclass(frozen=True)
class AudioClip:
    """Mono sample buffer plus sample rate. Samples are read-only float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio must be mono (1-D)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0


@dataclass(frozen=True)
class ManifestRecord:
    """One dataset entry binding an audio file to its reference annotation."""

    audio_path: str
    sample_rate: int
    duration: float
    segments: tuple[UtteranceSegment, ...]
    sot_text: str
    provenance: str
    seed: int
    # transient: set by read_manifest(verify_audio=True), never serialized
    audio_missing: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for seg in self.segments:
            if seg.start < 0 or seg.end > self.duration + 1e-9:
                raise ValueError(
                    f"segment {seg.start}..{seg.end} outside [0, {self.duration}]"
                )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_script(
    script: ConversationScript,
    max_speakers: int = 2,
    allow_adjacent_repeat: bool = True,
) -> ValidationReport:
    """Check a script against the generation policy.

    Reports rather than raises: empty turns, speaker count above the cap and
    (when ``allow_adjacent_repeat`` is off) consecutive turns by one speaker.
    """
    violations: list[Violation] = []
    for turn in script.turns:
        if not turn.text.strip():
            violations.append(
                Violation("empty_turn", f"empty turn at index {turn.index}")
            )
    n_speakers = script.speaker_count
    if n_speakers > max_speakers:
        violations.append(
            Violation(
                "too_many_speakers", f"speaker_count {n_speakers} > {max_speakers}"
            )
        )
    if not allow_adjacent_repeat:
        for prev, cur in zip(script.turns, script.turns[1:]):
            if prev.speaker == cur.speaker:
                violations.append(
                    Violation(
                        "adjacent_repeat",
                        f"speaker {cur.speaker} repeats at index {cur.index}",
                    )
                )
    return ValidationReport(tuple(violations))


def _segment_to_json(seg: UtteranceSegment) -> dict:
    return {
        "speaker": seg.speaker,
        "start": quantize_time(seg.start),
        "end": quantize_time(seg.end),
        "text": seg.text,
    }


def _record_to_json(rec: ManifestRecord) -> dict:
    return {
        "audio_path": rec.audio_path,
        "sample_rate": rec.sample_rate,
        "duration": rec.duration,
        "segments": [_segment_to_json(s) for s in rec.segments],
        "sot_text": rec.sot_text,
        "provenance": rec.provenance,
        "seed": rec.seed,
    }


_RECORD_KEYS = {"audio_path", "sample_rate", "duration", "segments",
                "sot_text", "provenance", "seed"}


def _record_from_json(obj: dict, line_no: int) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {line_no}: expected a JSON object")
    missing = _RECORD_KEYS - obj.keys()
    if missing:
        raise ManifestError(f"line {line_no}: missing fields {sorted(missing)}")
    try:
        segments = tuple(
            UtteranceSegment(s["speaker"], s["start"], s["end"], s["text"])
            for s in obj["segments"]
        )
        return ManifestRecord(
            audio_path=obj["audio_path"],
            sample_rate=int(obj["sample_rate"]),
            duration=float(obj["duration"]),
            segments=segments,
            sot_text=obj["sot_text"],
            provenance=obj["provenance"],
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"line {line_no}: {exc}") from exc


def write_manifest(records, path) -> None:
    """Write records as one JSON object per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec), ensure_ascii=False))
            fh.write("\n")


def read_manifest(path, verify_audio: bool = False) -> list[ManifestRecord]:
    """Read a JSONL manifest; raises ManifestError with the offending line number.

    With ``verify_audio`` set, records whose audio file (resolved relative to
    the manifest) is absent come back flagged ``audio_missing``.
    """
    path = Path(path)
    records: list[ManifestRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            rec = _record_from_json(obj, line_no)
            if verify_audio and not (path.parent / rec.audio_path).exists():
                rec = replace(rec, audio_missing=True)
            records.append(rec)
    return records
