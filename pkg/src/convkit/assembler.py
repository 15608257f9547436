"""Conversation audio assembly in three regimes: classical overlap simulation,
per-utterance TTS stitching, and conversational-TTS pass-through, plus the
dataset builder that writes WAVs and the manifest.

Placement constraints (same-speaker non-overlap, ordered starts) are enforced
on the sample grid so they survive millisecond time quantization.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import sot
from .core import (
    AudioClip,
    ConversationScript,
    ManifestRecord,
    UtteranceGroup,
    UtteranceSegment,
    quantize_time,
    write_manifest,
)
from .dsp import (
    RoomSpec,
    TELEPHONE_CUTOFF_HZ,
    TELEPHONE_STOP_DB,
    TELEPHONE_TRANSITION_HZ,
    VadParams,
    apply_fir,
    convolve,
    design_highpass,
    design_lowpass,
    generate_rir,
    mix_at_snr,
    random_room,
    resample,
    trim_silence,
    write_wav,
)
from .seeding import derive_seed
from .services import (
    ConversationTtsService,
    ConvTtsRequest,
    TtsUtteranceRequest,
    UtteranceTtsService,
)


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionParams:
    target_overlap_ratio: float = 0.2
    pause_mean: float = 0.4
    pause_max: float = 2.0
    max_duration: float = 30.0
    snr_db: float | None = None
    rir: RoomSpec | None = None
    bandlimit: bool = False
    highpass: bool = False  # optional 300 Hz high-pass, off by default
    rng_seed: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        if not 0.0 <= self.target_overlap_ratio < 1.0:
            raise ValueError("target_overlap_ratio must be in [0, 1)")
        if not self.pause_max >= self.pause_mean >= 0.0:
            raise ValueError("require pause_max >= pause_mean >= 0")
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class PoolUtterance:
    clip: AudioClip
    text: str
    speaker: str


@dataclass(frozen=True)
class CorpusPool:
    """Single-speaker utterances indexed by speaker."""

    utterances: tuple[PoolUtterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ValueError("corpus pool must not be empty")

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({u.speaker for u in self.utterances}))

    def by_speaker(self, speaker: str) -> list[int]:
        return [i for i, u in enumerate(self.utterances) if u.speaker == speaker]

    @classmethod
    def from_manifest(cls, path) -> "CorpusPool":
        """Load a plain utterance manifest: JSONL of {audio_path, text, speaker},
        audio paths relative to the manifest."""
        import json

        from .dsp import read_wav

        path = Path(path)
        utterances = []
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    clip = read_wav(path.parent / obj["audio_path"])
                    utterances.append(PoolUtterance(clip, obj["text"], obj["speaker"]))
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"pool manifest line {line_no}: {exc}") from exc
        return cls(tuple(utterances))


def _contaminate(clip: AudioClip, params: SessionParams, rng: np.random.Generator) -> AudioClip:
    """Optional reverberation, additive noise at SNR, and telephone band-limit."""
    if params.rir is not None:
        rir = generate_rir(params.rir, clip.sample_rate)
        clip = convolve(clip, rir)
    if params.snr_db is not None:
        noise = AudioClip(
            0.1 * rng.standard_normal(len(clip)), clip.sample_rate
        )
        clip = mix_at_snr(clip, noise, params.snr_db).clip
    if params.bandlimit:
        lowpass = design_lowpass(
            TELEPHONE_CUTOFF_HZ, TELEPHONE_TRANSITION_HZ, TELEPHONE_STOP_DB,
            clip.sample_rate,
        )
        clip = apply_fir(clip, lowpass)
    if params.highpass:
        highpass = design_highpass(300.0, 200.0, 40.0, clip.sample_rate)
        clip = apply_fir(clip, highpass)
    return clip


def _floor_ms(t: float) -> float:
    return math.floor(t * 1000.0) / 1000.0


def _quantized_segments(
    placements: list[tuple[str, int, int, str]], sample_rate: int, duration: float
) -> tuple[UtteranceSegment, ...]:
    """Sample-accurate placements -> millisecond-rounded segments within bounds.

    Ends clamp to the floor-to-ms of the clip duration so the rounded value
    stays on the millisecond grid and inside [0, duration].
    """
    cap = _floor_ms(duration)
    segments = []
    for speaker, start_n, end_n, text in placements:
        start = max(0.0, quantize_time(start_n / sample_rate))
        end = min(quantize_time(end_n / sample_rate), cap)
        segments.append(UtteranceSegment(speaker, start, end, text))
    return tuple(segments)


def _mix_placements(
    placements: list[tuple[str, np.ndarray, int, str]], sample_rate: int
) -> AudioClip:
    n = max(start + len(samples) for _, samples, start, _ in placements)
    buf = np.zeros(n)
    for _, samples, start, _ in placements:
        buf[start : start + len(samples)] += samples
    peak = np.max(np.abs(buf)) if n else 0.0
    if peak > 1.0:
        buf /= peak
    return AudioClip(buf, sample_rate)


def simulate_overlap(
    pool: CorpusPool, params: SessionParams
) -> tuple[AudioClip, tuple[UtteranceSegment, ...]]:
    """Overlap two alternating pool speakers into one session.

    Each utterance follows the previous one either after an exponential pause
    or with a negative offset, steering the realized overlap ratio (overlap
    time over speech time) toward the target. Same-speaker utterances never
    overlap and the session stops before exceeding max_duration.
    """
    speakers = pool.speakers
    if len(speakers) < 2:
        raise ValueError("overlap simulation needs a pool with at least 2 speakers")
    fs = params.sample_rate
    rng = np.random.default_rng(derive_seed(params.rng_seed, "overlap"))
    pair = [speakers[i] for i in rng.choice(len(speakers), size=2, replace=False)]
    indices = {spk: pool.by_speaker(spk) for spk in pair}
    resampled: dict[int, np.ndarray] = {}

    def samples_for(utt_index: int) -> np.ndarray:
        if utt_index not in resampled:
            resampled[utt_index] = resample(
                pool.utterances[utt_index].clip, fs
            ).samples
        return resampled[utt_index]

    max_samples = int(params.max_duration * fs)
    placements: list[tuple[str, np.ndarray, int, str]] = []
    overlap_time = 0.0
    speech_time = 0.0
    prev_start_n = 0
    prev_end_n = 0
    prev_dur = 0.0
    last_end_n: dict[str, int] = {}
    for turn_index in range(1000):
        speaker = pair[turn_index % 2]
        utt_index = indices[speaker][int(rng.integers(len(indices[speaker])))]
        samples = samples_for(utt_index)
        dur = len(samples) / fs
        if turn_index == 0:
            start_n = 0
        else:
            needed = params.target_overlap_ratio * (speech_time + dur) - overlap_time
            if needed > 1e-9:
                amt = min(
                    needed * rng.uniform(0.8, 1.2), 0.5 * prev_dur, 2.0, dur
                )
                start = prev_end_n / fs - max(amt, 0.0)
            else:
                pause = min(
                    rng.exponential(params.pause_mean) if params.pause_mean > 0 else 0.0,
                    params.pause_max,
                )
                start = prev_end_n / fs + pause
            start_n = max(
                int(round(start * fs)), last_end_n.get(speaker, 0), prev_start_n
            )
        end_n = start_n + len(samples)
        if end_n > max_samples:
            break
        placements.append((speaker, samples, start_n, pool.utterances[utt_index].text))
        if turn_index > 0:
            overlap_time += max(0.0, (prev_end_n - start_n) / fs)
        speech_time += dur
        prev_start_n, prev_end_n, prev_dur = start_n, end_n, dur
        last_end_n[speaker] = end_n
    if not placements:
        raise AssemblyError(
            "pool exhausted before any placement: no utterance fits max_duration"
        )
    clip = _mix_placements(placements, fs)
    clip = _contaminate(clip, params, np.random.default_rng(
        derive_seed(params.rng_seed, "contaminate")))
    segments = _quantized_segments(
        [(spk, s, s + len(x), text) for spk, x, s, text in placements],
        fs,
        clip.duration,
    )
    return clip, segments


def stitch_tts(
    script: ConversationScript,
    voices: dict[str, str],
    params: SessionParams,
    tts: UtteranceTtsService,
    vad: VadParams = VadParams(),
) -> tuple[AudioClip, tuple[UtteranceSegment, ...]]:
    """Synthesize turns independently, trim silence, and mix with ordered
    random start offsets.

    Turn starts are strictly increasing in turn order; consecutive turns may
    overlap but utterances from the same speaker never do. Offsets are
    redrawn up to a budget when the session cannot fit max_duration.
    """
    missing = [spk for spk in script.speakers if spk not in voices]
    if missing:
        raise ValueError(f"no voice mapped for speakers {missing}")
    fs = params.sample_rate
    rendered: list[np.ndarray] = []
    for turn in script.turns:
        clip = tts.synthesize_utterance(
            TtsUtteranceRequest(turn.text, voices[turn.speaker], fs)
        )
        clip = resample(clip, fs)
        rendered.append(trim_silence(clip, vad).clip.samples)

    min_step = max(int(0.002 * fs), 1)  # keeps starts strict after ms rounding
    max_samples = int(params.max_duration * fs)
    budget = 5
    for attempt in range(budget):
        rng = np.random.default_rng(derive_seed(params.rng_seed, "stitch", attempt))
        starts: list[int] = []
        last_end_n: dict[str, int] = {}
        overlap_time = 0.0
        speech_time = 0.0
        feasible = True
        for i, turn in enumerate(script.turns):
            dur = len(rendered[i]) / fs
            if i == 0:
                start_n = 0
            else:
                prev_start_n = starts[-1]
                prev_len = len(rendered[i - 1])
                prev_end_n = prev_start_n + prev_len
                needed = (
                    params.target_overlap_ratio * (speech_time + dur) - overlap_time
                )
                if needed > 1e-9:
                    amt = min(
                        needed * rng.uniform(0.8, 1.2),
                        0.5 * prev_len / fs,
                        2.0,
                        dur,
                    )
                    cand = prev_end_n / fs - max(amt, 0.0)
                else:
                    pause = min(
                        rng.exponential(params.pause_mean)
                        if params.pause_mean > 0
                        else 0.0,
                        params.pause_max,
                    )
                    cand = prev_end_n / fs + pause
                start_n = max(
                    int(round(cand * fs)),
                    last_end_n.get(turn.speaker, 0),
                    prev_start_n + min_step,
                )
                overlap_time += max(0.0, (prev_end_n - start_n) / fs)
            end_n = start_n + len(rendered[i])
            if end_n > max_samples:
                feasible = False
                break
            starts.append(start_n)
            speech_time += dur
            last_end_n[turn.speaker] = end_n
        if feasible:
            break
    else:
        raise AssemblyError(
            f"offset constraints unsatisfiable within max_duration "
            f"after {budget} attempts"
        )
    placements = [
        (turn.speaker, rendered[i], starts[i], turn.text)
        for i, turn in enumerate(script.turns)
    ]
    clip = _mix_placements(placements, fs)
    clip = _contaminate(clip, params, np.random.default_rng(
        derive_seed(params.rng_seed, "contaminate")))
    segments = _quantized_segments(
        [(spk, s, s + len(x), text) for spk, x, s, text in placements],
        fs,
        clip.duration,
    )
    return clip, segments


def conv_tts_passthrough(
    script: ConversationScript,
    params: SessionParams,
    conv_tts: ConversationTtsService,
) -> tuple[AudioClip, tuple[UtteranceSegment, ...]]:
    """Delegate synthesis to the conversational backend, then resample to the
    working rate and apply optional contamination."""
    if script.speaker_count > 2:
        raise ValueError("conversational TTS supports at most 2 speakers")
    request = ConvTtsRequest(script, max_duration=min(params.max_duration, 30.0))
    clip, segments = conv_tts.synthesize_conversation(request)
    clip = resample(clip, params.sample_rate)
    clip = _contaminate(clip, params, np.random.default_rng(
        derive_seed(params.rng_seed, "contaminate")))
    cap = _floor_ms(clip.duration)
    quantized = tuple(
        UtteranceSegment(
            s.speaker,
            max(0.0, quantize_time(s.start)),
            min(quantize_time(s.end), cap),
            s.text,
        )
        for s in segments
    )
    return clip, quantized


# --------------------------------------------------------------------------
# Dataset builder


@dataclass(frozen=True)
class DatasetSource:
    mode: str  # overlap_sim | tts_stitch | conv_tts
    pool: CorpusPool | None = None
    scripts: tuple[ConversationScript, ...] = ()
    voice_refs: tuple[str, ...] = ()
    utterance_tts: UtteranceTtsService | None = None
    conversation_tts: ConversationTtsService | None = None
    random_rir: bool = False

    def __post_init__(self):
        if self.mode == "overlap_sim":
            if self.pool is None:
                raise ValueError("overlap_sim requires a corpus pool")
        elif self.mode == "tts_stitch":
            if not self.scripts or self.utterance_tts is None or not self.voice_refs:
                raise ValueError("tts_stitch requires scripts, voice_refs and a TTS service")
        elif self.mode == "conv_tts":
            if not self.scripts or self.conversation_tts is None:
                raise ValueError("conv_tts requires scripts and a conversational TTS service")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class BuildFailure:
    index: int
    reason: str


@dataclass
class BuildResult:
    records: list[ManifestRecord]
    failures: list[BuildFailure]
    manifest_path: Path
    total_audio_seconds: float = 0.0

    @property
    def failure_ratio(self) -> float:
        total = len(self.records) + len(self.failures)
        return len(self.failures) / total if total else 0.0


def _atomic_write_wav(path: Path, clip: AudioClip, encoding: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_wav(tmp, clip, encoding)
    os.replace(tmp, path)


def _stitch_voice_map(
    script: ConversationScript, refs: tuple[str, ...], seed: int
) -> dict[str, str]:
    """Sample distinct enrollment voices per conversation, one per speaker."""
    speakers = script.speakers
    if len(refs) < len(speakers):
        raise ValueError(
            f"need at least {len(speakers)} voice refs, got {len(refs)}"
        )
    rng = np.random.default_rng(derive_seed(seed, "voices"))
    chosen = rng.choice(len(refs), size=len(speakers), replace=False)
    return {spk: refs[int(c)] for spk, c in zip(speakers, chosen)}


def _build_one(
    source: DatasetSource,
    params: SessionParams,
    out_dir: Path,
    index: int,
    encoding: str,
    sot_cfg: sot.SotConfig,
) -> ManifestRecord:
    conv_seed = derive_seed(params.rng_seed, "conv", index)
    conv_params = replace(params, rng_seed=conv_seed)
    if source.random_rir:
        room = random_room(np.random.default_rng(derive_seed(conv_seed, "room")))
        conv_params = replace(conv_params, rir=room)
    if source.mode == "overlap_sim":
        clip, segments = simulate_overlap(source.pool, conv_params)
    elif source.mode == "tts_stitch":
        script = source.scripts[index % len(source.scripts)]
        voices = _stitch_voice_map(script, source.voice_refs, conv_seed)
        clip, segments = stitch_tts(script, voices, conv_params, source.utterance_tts)
    else:
        script = source.scripts[index % len(source.scripts)]
        clip, segments = conv_tts_passthrough(
            script, conv_params, source.conversation_tts
        )
    rel_path = f"audio/conv_{index:06d}.wav"
    _atomic_write_wav(out_dir / rel_path, clip, encoding)
    sot_text = sot.serialize_group(UtteranceGroup.from_segments(segments), sot_cfg)
    return ManifestRecord(
        audio_path=rel_path,
        sample_rate=clip.sample_rate,
        duration=clip.duration,
        segments=segments,
        sot_text=sot_text,
        provenance=source.mode,
        seed=conv_seed,
    )


def build_dataset(
    source: DatasetSource,
    params: SessionParams,
    out_dir,
    n_conversations: int | None = None,
    target_hours: float | None = None,
    jobs: int = 1,
    encoding: str = "float32",
    sot_cfg: sot.SotConfig = sot.SotConfig(),
) -> BuildResult:
    """Generate conversations and write WAVs plus one JSONL manifest.

    Fully deterministic given the master seed in ``params``: per-conversation
    seeds are derived by index. Individual failures are recorded and
    generation continues. With ``target_hours`` the conversation count is
    grown until the cumulative audio duration reaches the target.
    """
    if (n_conversations is None) == (target_hours is None):
        raise ValueError("specify exactly one of n_conversations / target_hours")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)

    results: dict[int, ManifestRecord] = {}
    failures: list[BuildFailure] = []

    def run_indices(indices: list[int]) -> None:
        def work(i: int):
            try:
                return i, _build_one(source, params, out_dir, i, encoding, sot_cfg)
            except (ValueError, RuntimeError) as exc:
                return i, BuildFailure(i, f"{type(exc).__name__}: {exc}")

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as executor:
                outcomes = list(executor.map(work, indices))
        else:
            outcomes = [work(i) for i in indices]
        for i, outcome in outcomes:
            if isinstance(outcome, BuildFailure):
                failures.append(outcome)
            else:
                results[i] = outcome

    if n_conversations is not None:
        run_indices(list(range(n_conversations)))
    else:
        target_seconds = target_hours * 3600.0
        next_index = 0
        while True:
            done = sum(rec.duration for rec in results.values())
            if done >= target_seconds:
                break
            if results:
                # undershoot each estimate slightly; the tail then converges
                # one conversation at a time, bounding the overshoot
                avg = done / len(results)
                want = max(1, int((target_seconds - done) / avg * 0.9))
            else:
                want = max(jobs, 4)
            chunk = list(range(next_index, next_index + min(want, 256)))
            next_index = chunk[-1] + 1
            run_indices(chunk)
            if not results and failures:
                break  # every conversation failed; avoid spinning forever

    records = [results[i] for i in sorted(results)]
    manifest_path = out_dir / "manifest.jsonl"
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    write_manifest(records, tmp)
    os.replace(tmp, manifest_path)
    return BuildResult(
        records=records,
        failures=sorted(failures, key=lambda f: f.index),
        manifest_path=manifest_path,
        total_audio_seconds=sum(r.duration for r in records),
    )
