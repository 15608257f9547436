"""Clients for the three external neural services (text completion,
per-utterance TTS, conversational TTS) plus deterministic mock backends.

Mocks are pure functions of (request, seed): repeated calls are bit-identical,
which is what makes the whole pipeline testable without model weights.
"""

from __future__ import annotations

import abc
import base64
import os
import threading
import time
from dataclasses import dataclass

import httpx
import numpy as np

from .core import AudioClip, ConversationScript, UtteranceSegment, validate_script
from .seeding import derive_seed


class ServiceError(RuntimeError):
    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = 512
    temperature: float = 0.7
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class TtsUtteranceRequest:
    text: str
    speaker_ref: str
    target_sample_rate: int = 16000

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("utterance text must be non-empty")
        if self.target_sample_rate <= 0:
            raise ValueError("target sample rate must be positive")


@dataclass(frozen=True)
class ConvTtsRequest:
    script: ConversationScript
    max_duration: float = 30.0

    def __post_init__(self):
        if not 0 < self.max_duration <= 30.0:
            raise ValueError("max_duration must be in (0, 30] seconds")
        report = validate_script(self.script, max_speakers=2)
        if not report.ok:
            raise ValueError(
                "invalid script: " + "; ".join(v.message for v in report.violations)
            )


class CompletionService(abc.ABC):
    @abc.abstractmethod
    def complete(self, req: CompletionRequest) -> str:
        ...


class UtteranceTtsService(abc.ABC):
    @abc.abstractmethod
    def synthesize_utterance(self, req: TtsUtteranceRequest) -> AudioClip:
        ...


class ConversationTtsService(abc.ABC):
    @abc.abstractmethod
    def synthesize_conversation(
        self, req: ConvTtsRequest
    ) -> tuple[AudioClip, tuple[UtteranceSegment, ...]]:
        ...


# --------------------------------------------------------------------------
# Mock backends


_MOCK_VOCABULARY = (
    "well", "so", "yeah", "right", "maybe", "today", "really", "about",
    "think", "going", "there", "people", "because", "little", "always",
    "morning", "coffee", "weather", "weekend", "music", "garden", "train",
    "dinner", "story", "funny", "later", "never", "sometimes", "pretty",
    "actually", "probably", "together", "remember", "question", "answer",
)


@dataclass(frozen=True)
class MockTtsParams:
    """Tone-coding parameters shared by the mock TTS backends.

    Each word becomes a fixed-duration tone whose frequency is a stable hash
    of (word, voice), bracketed by lead/tail silence, so trimming and
    alignment are testable analytically.
    """

    word_duration: float = 0.30
    edge_silence: float = 0.12
    tone_low_hz: float = 200.0
    tone_high_hz: float = 2000.0
    amplitude: float = 0.5
    sample_rate: int = 16000


def _word_tone_hz(word: str, voice: str, params: MockTtsParams) -> float:
    span = int(params.tone_high_hz - params.tone_low_hz)
    return params.tone_low_hz + derive_seed(0, "tone", word, voice) % max(span, 1)


def _render_words(
    words: list[str], voice: str, params: MockTtsParams, sample_rate: int
) -> np.ndarray:
    n_word = int(round(params.word_duration * sample_rate))
    chunks = []
    for word in words:
        freq = _word_tone_hz(word, voice, params)
        t = np.arange(n_word) / sample_rate
        chunks.append(params.amplitude * np.sin(2.0 * np.pi * freq * t))
    return np.concatenate(chunks) if chunks else np.zeros(0)


class MockCompletionService(CompletionService):
    """Emits valid two-speaker tagged scripts, deterministically per prompt."""

    def __init__(
        self,
        seed: int = 0,
        turns_range: tuple[int, int] = (2, 6),
        words_range: tuple[int, int] = (3, 10),
        vocabulary: tuple[str, ...] = _MOCK_VOCABULARY,
    ):
        self.seed = seed
        self.turns_range = turns_range
        self.words_range = words_range
        self.vocabulary = vocabulary

    def complete(self, req: CompletionRequest) -> str:
        if not req.prompt.strip():
            raise ServiceError("empty prompt")
        base = self.seed if req.seed is None else req.seed
        rng = np.random.default_rng(derive_seed(base, "completion", req.prompt))
        n_turns = int(rng.integers(self.turns_range[0], self.turns_range[1] + 1))
        lines = []
        for i in range(n_turns):
            speaker = f"S{i % 2 + 1}"
            n_words = int(rng.integers(self.words_range[0], self.words_range[1] + 1))
            words = rng.choice(len(self.vocabulary), size=n_words)
            lines.append(f"[{speaker}] " + " ".join(self.vocabulary[w] for w in words))
        return " ".join(lines)


class MockUtteranceTtsService(UtteranceTtsService):
    def __init__(
        self,
        params: MockTtsParams = MockTtsParams(),
        known_refs: frozenset[str] | None = None,
    ):
        self.params = params
        self.known_refs = known_refs

    def synthesize_utterance(self, req: TtsUtteranceRequest) -> AudioClip:
        if self.known_refs is not None and req.speaker_ref not in self.known_refs:
            raise ServiceError(f"unknown speaker_ref {req.speaker_ref!r}")
        fs = req.target_sample_rate
        words = req.text.split()
        tones = _render_words(words, req.speaker_ref, self.params, fs)
        pad = np.zeros(int(round(self.params.edge_silence * fs)))
        return AudioClip(np.concatenate([pad, tones, pad]), fs)


class MockConversationTtsService(ConversationTtsService):
    """Realizes turns sequentially with a configurable cross-speaker overlap."""

    def __init__(
        self,
        params: MockTtsParams = MockTtsParams(),
        turn_overlap: float = 0.2,
        same_speaker_gap: float = 0.05,
    ):
        self.params = params
        self.turn_overlap = turn_overlap
        self.same_speaker_gap = same_speaker_gap

    def _turn_duration(self, turn_text: str) -> float:
        return len(turn_text.split()) * self.params.word_duration

    def synthesize_conversation(
        self, req: ConvTtsRequest
    ) -> tuple[AudioClip, tuple[UtteranceSegment, ...]]:
        fs = self.params.sample_rate
        script = req.script
        # placement plan (seconds)
        starts: list[float] = []
        cursor = self.params.edge_silence
        prev_speaker = None
        prev_end = cursor
        for turn in script.turns:
            dur = self._turn_duration(turn.text)
            if prev_speaker is None:
                start = cursor
            elif turn.speaker == prev_speaker:
                start = prev_end + self.same_speaker_gap
            else:
                start = max(prev_end - self.turn_overlap, starts[-1] + 1.0 / fs)
            starts.append(start)
            prev_end = start + dur
            prev_speaker = turn.speaker
        total = prev_end + self.params.edge_silence
        if total > req.max_duration:
            raise ServiceError(
                f"script too long: estimated {total:.2f}s > {req.max_duration:.2f}s"
            )
        buf = np.zeros(int(round(total * fs)))
        segments = []
        for turn, start in zip(script.turns, starts):
            tones = _render_words(turn.text.split(), turn.speaker, self.params, fs)
            i0 = int(round(start * fs))
            buf[i0 : i0 + len(tones)] += tones
            segments.append(
                UtteranceSegment(turn.speaker, start, start + len(tones) / fs, turn.text)
            )
        peak = np.max(np.abs(buf)) if len(buf) else 0.0
        if peak > 1.0:
            buf /= peak
        return AudioClip(buf, fs), tuple(segments)


# --------------------------------------------------------------------------
# HTTP backends


@dataclass
class HttpClientConfig:
    endpoint: str
    auth_token_env: str = "CONVKIT_API_TOKEN"
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    concurrency: int = 4


class _HttpChannel:
    """JSON-over-HTTP transport with bounded concurrency and retry/backoff."""

    def __init__(self, config: HttpClientConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        token = os.environ.get(config.auth_token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            timeout=config.timeout, headers=headers, transport=transport
        )
        self._semaphore = threading.Semaphore(config.concurrency)

    def post(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + path
        last_error: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ServiceError(
                    f"server error {response.status_code}", retryable=True
                )
                continue
            if response.status_code != 200:
                raise ServiceError(f"request failed with status {response.status_code}")
            try:
                return response.json()
            except ValueError as exc:
                raise ServiceError(f"malformed response: {exc}") from exc
        raise ServiceError(
            f"{url} unreachable after {self.config.max_attempts} attempts: {last_error}",
            retryable=True,
        )


def _decode_audio(obj: dict) -> AudioClip:
    rate = int(obj["sample_rate"])
    if "audio_b64" in obj:
        raw = base64.b64decode(obj["audio_b64"])
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return AudioClip(samples, rate)
    if "audio_path" in obj:
        from .dsp import read_wav

        return read_wav(obj["audio_path"])
    raise ServiceError("response carries neither audio_b64 nor audio_path")


def encode_audio(clip: AudioClip) -> dict:
    """Inverse of the wire decoding; used by tests and mock servers."""
    return {
        "sample_rate": clip.sample_rate,
        "audio_b64": base64.b64encode(
            clip.samples.astype("<f4").tobytes()
        ).decode("ascii"),
    }


class HttpCompletionService(CompletionService):
    def __init__(self, config: HttpClientConfig, transport=None):
        self._channel = _HttpChannel(config, transport)

    def complete(self, req: CompletionRequest) -> str:
        if not req.prompt.strip():
            raise ServiceError("empty prompt")
        obj = self._channel.post(
            "/complete",
            {
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "seed": req.seed,
            },
        )
        try:
            return obj["text"]
        except KeyError as exc:
            raise ServiceError("response missing 'text'") from exc


class HttpUtteranceTtsService(UtteranceTtsService):
    def __init__(self, config: HttpClientConfig, transport=None):
        self._channel = _HttpChannel(config, transport)

    def synthesize_utterance(self, req: TtsUtteranceRequest) -> AudioClip:
        obj = self._channel.post(
            "/tts/utterance",
            {
                "text": req.text,
                "speaker_ref": req.speaker_ref,
                "sample_rate": req.target_sample_rate,
            },
        )
        return _decode_audio(obj)


class HttpConversationTtsService(ConversationTtsService):
    def __init__(self, config: HttpClientConfig, transport=None):
        self._channel = _HttpChannel(config, transport)

    def synthesize_conversation(self, req: ConvTtsRequest):
        obj = self._channel.post(
            "/tts/conversation",
            {
                "turns": [
                    {"speaker": t.speaker, "text": t.text} for t in req.script.turns
                ],
                "max_duration": req.max_duration,
            },
        )
        clip = _decode_audio(obj)
        try:
            segments = tuple(
                UtteranceSegment(s["speaker"], s["start"], s["end"], s["text"])
                for s in obj["segments"]
            )
        except (KeyError, TypeError) as exc:
            raise ServiceError(f"malformed segments in response: {exc}") from exc
        return clip, segments


# --------------------------------------------------------------------------
# Config-driven construction


@dataclass
class ServicesConfig:
    backend: str = "mock"
    seed: int = 0
    endpoint: str | None = None
    auth_token_env: str = "CONVKIT_API_TOKEN"
    concurrency: int = 4
    max_attempts: int = 3
    backoff_base: float = 0.5
    mock_word_duration: float = 0.30
    mock_edge_silence: float = 0.12
    mock_tone_low_hz: float = 200.0
    mock_tone_high_hz: float = 2000.0
    mock_sample_rate: int = 16000
    mock_turn_overlap: float = 0.2

    def mock_params(self) -> MockTtsParams:
        return MockTtsParams(
            word_duration=self.mock_word_duration,
            edge_silence=self.mock_edge_silence,
            tone_low_hz=self.mock_tone_low_hz,
            tone_high_hz=self.mock_tone_high_hz,
            sample_rate=self.mock_sample_rate,
        )


@dataclass(frozen=True)
class ServiceBundle:
    completion: CompletionService
    utterance_tts: UtteranceTtsService
    conversation_tts: ConversationTtsService


def build_services(cfg: ServicesConfig, transport=None) -> ServiceBundle:
    if cfg.backend == "mock":
        params = cfg.mock_params()
        return ServiceBundle(
            completion=MockCompletionService(seed=cfg.seed),
            utterance_tts=MockUtteranceTtsService(params),
            conversation_tts=MockConversationTtsService(
                params, turn_overlap=cfg.mock_turn_overlap
            ),
        )
    if cfg.backend == "http":
        if not cfg.endpoint:
            raise ValueError("http backend requires an endpoint")
        http_cfg = HttpClientConfig(
            endpoint=cfg.endpoint,
            auth_token_env=cfg.auth_token_env,
            max_attempts=cfg.max_attempts,
            backoff_base=cfg.backoff_base,
            concurrency=cfg.concurrency,
        )
        return ServiceBundle(
            completion=HttpCompletionService(http_cfg, transport),
            utterance_tts=HttpUtteranceTtsService(http_cfg, transport),
            conversation_tts=HttpConversationTtsService(http_cfg, transport),
        )
    raise ValueError(f"unknown services backend {cfg.backend!r}")
