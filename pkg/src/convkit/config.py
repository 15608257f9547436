"""Run configuration: strict YAML loading, defaults, and reproducible snapshots."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .services import ServicesConfig


class ConfigError(ValueError):
    pass


@dataclass
class GenTranscriptsConfig:
    pool_file: str = "seeds.txt"
    pool_format: str = "blocks"  # or "lines"
    count: int = 10
    k_shots: int = 8
    delimiter: str = "\n\n"
    instruction_header: str = ""
    max_speakers: int = 2
    allow_adjacent_repeat: bool = True
    max_attempts: int = 5
    max_tokens: int = 512
    temperature: float = 0.7


@dataclass
class SynthConfig:
    mode: str = "conv_tts"  # overlap_sim | tts_stitch | conv_tts
    count: int | None = 10
    target_hours: float | None = None
    scripts_file: str | None = None
    pool_manifest: str | None = None
    voice_refs: list[str] = field(default_factory=lambda: ["voice-a", "voice-b"])
    overlap_ratio: float = 0.2
    pause_mean: float = 0.4
    pause_max: float = 2.0
    max_duration: float = 30.0
    snr_db: float | None = None
    bandlimit: bool = False
    highpass: bool = False
    rir: str = "none"  # none | random
    sample_rate: int = 16000
    encoding: str = "float32"
    max_failure_ratio: float = 0.0


@dataclass
class SegmentSection:
    gap_threshold: float = 0.0
    max_span: float = 30.0


@dataclass
class SotSection:
    change_token: str = "<sc>"


@dataclass
class ScoreSection:
    num_streams: int = 2


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    services: ServicesConfig = field(default_factory=ServicesConfig)
    gen_transcripts: GenTranscriptsConfig = field(default_factory=GenTranscriptsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    segment: SegmentSection = field(default_factory=SegmentSection)
    sot: SotSection = field(default_factory=SotSection)
    score: ScoreSection = field(default_factory=ScoreSection)


_SECTION_TYPES = {
    "services": ServicesConfig,
    "gen_transcripts": GenTranscriptsConfig,
    "synth": SynthConfig,
    "segment": SegmentSection,
    "sot": SotSection,
    "score": ScoreSection,
}


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section '{path or 'config'}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        key = sorted(unknown)[0]
        where = f"{path}.{key}" if path else key
        raise ConfigError(f"unknown config key '{where}'")
    kwargs = {}
    for name, value in data.items():
        sub_cls = _SECTION_TYPES.get(name) if cls is RunConfig else None
        if sub_cls is not None:
            kwargs[name] = _from_dict(sub_cls, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def write_snapshot(config: RunConfig, out_dir) -> Path:
    """Echo the resolved configuration next to the outputs it produced."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_snapshot.yaml"
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=True)
    os.replace(tmp, path)
    return path
