"""Serialized single-stream targets for multi-speaker groups, plus text normalization."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import UtteranceGroup, UtteranceSegment

DEFAULT_CHANGE_TOKEN = "<sc>"

# Small fixed expansion table applied token-wise after punctuation stripping.
# Outputs are fixed points of the normalizer, keeping it idempotent.
_EXPANSIONS = {
    "mr": "mister",
    "mrs": "missus",
    "dr": "doctor",
    "st": "saint",
    "vs": "versus",
    "etc": "etcetera",
    "ok": "okay",
}

_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})
_KEEP = re.compile(r"[^a-z0-9' ]+")


@dataclass(frozen=True)
class SotConfig:
    change_token: str = DEFAULT_CHANGE_TOKEN
    order: str = "by_start_time"
    include_timestamps: bool = False

    def __post_init__(self):
        if not self.change_token or self.change_token != self.change_token.strip():
            raise ValueError("change token must be a non-empty bare token")
        if self.order != "by_start_time":
            raise ValueError(f"unsupported segment order {self.order!r}")
        if self.include_timestamps:
            raise ValueError("timestamp tokens are not supported")


def segment_sort_key(seg: UtteranceSegment):
    """Deterministic serialization order: start time, then speaker, then text."""
    return (seg.start, seg.speaker, seg.text)


def serialize_group(group: UtteranceGroup, cfg: SotConfig = SotConfig()) -> str:
    """Join a group's texts in start-time order, marking each speaker change."""
    ordered = sorted(group.segments, key=segment_sort_key)
    parts: list[str] = []
    prev_speaker = None
    for seg in ordered:
        if prev_speaker is not None and seg.speaker != prev_speaker:
            parts.append(cfg.change_token)
        parts.append(seg.text.strip())
        prev_speaker = seg.speaker
    return " ".join(p for p in parts if p)


@dataclass(frozen=True)
class DeserializeResult:
    chunks: tuple[tuple[int, str], ...]  # (channel index, text)
    empty_chunks: int


def deserialize(sot_text: str, cfg: SotConfig = SotConfig()) -> DeserializeResult:
    """Split serialized text back into (channel, text) chunks.

    The channel index counts change tokens seen so far; empty chunks are
    dropped but keep advancing the channel numbering, and are tallied.
    """
    raw = sot_text.split(cfg.change_token)
    chunks: list[tuple[int, str]] = []
    empties = 0
    for channel, piece in enumerate(raw):
        text = " ".join(piece.split())
        if text:
            chunks.append((channel, text))
        else:
            empties += 1
    return DeserializeResult(tuple(chunks), empties)


def normalize_text(s: str) -> str:
    """Lowercase, strip punctuation (keeping intra-word apostrophes),
    expand a small abbreviation table and collapse whitespace. Idempotent."""
    s = s.lower().translate(_APOSTROPHES)
    s = _KEEP.sub(" ", s)
    out: list[str] = []
    for token in s.split():
        token = token.strip("'")
        if not token:
            continue
        out.append(_EXPANSIONS.get(token, token))
    return " ".join(out)
