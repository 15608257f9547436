"""Few-shot prompt assembly, tagged-script parsing and the generation loop."""

from __future__ import annotations

import random
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConversationScript, Turn, validate_script
from .seeding import derive_seed
from .services import CompletionRequest, CompletionService, ServiceError

_TAG = re.compile(r"\[S(\d+)\]")
_SPEAKER_LABEL = re.compile(r"^S\d+$")


class ScriptParseError(ValueError):
    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class SeedPool:
    """Few-shot example pool; every example must parse as a tagged script."""

    examples: tuple[str, ...]
    source_id: str = ""

    def __post_init__(self):
        if not self.examples:
            raise ValueError("seed pool must not be empty")
        for i, example in enumerate(self.examples):
            try:
                parse_script(example)
            except ScriptParseError as exc:
                raise ValueError(f"pool example {i} is not a valid script: {exc}") from exc

    def __len__(self) -> int:
        return len(self.examples)

    @classmethod
    def load(cls, path, pool_format: str = "blocks") -> "SeedPool":
        """Read a pool file: one transcript per line, or per blank-line block."""
        text = Path(path).read_text(encoding="utf-8")
        if pool_format == "lines":
            examples = [line.strip() for line in text.splitlines() if line.strip()]
        elif pool_format == "blocks":
            examples = [
                " ".join(block.split())
                for block in re.split(r"\n\s*\n", text)
                if block.strip()
            ]
        else:
            raise ValueError(f"unknown pool format {pool_format!r}")
        return cls(tuple(examples), source_id=str(path))


@dataclass(frozen=True)
class PromptSpec:
    k_shots: int = 8
    delimiter: str = "\n\n"
    instruction_header: str = ""
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_shots < 1:
            raise ValueError("k_shots must be >= 1")


def build_prompt(pool: SeedPool, spec: PromptSpec) -> str:
    """Concatenate k_shots distinct pool examples in the sampled order."""
    if len(pool) < spec.k_shots:
        raise ValueError(
            f"pool too small: {len(pool)} examples < k_shots {spec.k_shots}"
        )
    rng = random.Random(spec.rng_seed)
    chosen = rng.sample(range(len(pool)), spec.k_shots)
    parts = [pool.examples[i] for i in chosen]
    if spec.instruction_header:
        parts.insert(0, spec.instruction_header)
    return spec.delimiter.join(parts)


def parse_script(text: str) -> ConversationScript:
    """Split tagged text on [Sk] markers into speaker turns.

    Rejects text before the first tag, empty turns and non-positive tag
    indices; surrounding whitespace is trimmed.
    """
    matches = list(_TAG.finditer(text))
    if not matches:
        raise ScriptParseError("no speaker tags found", code="no_tags")
    if text[: matches[0].start()].strip():
        raise ScriptParseError("text before first speaker tag", code="leading_text")
    turns = []
    for i, match in enumerate(matches):
        tag_index = int(match.group(1))
        if tag_index < 1:
            raise ScriptParseError(
                f"tag index must be a positive integer, got S{match.group(1)}",
                code="bad_tag_index",
            )
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        turn_text = text[match.end() : end].strip()
        if not turn_text:
            raise ScriptParseError(f"empty turn after tag [S{tag_index}]", code="empty_turn")
        turns.append(Turn(f"S{tag_index}", turn_text, i))
    return ConversationScript(tuple(turns))


def render_script(script: ConversationScript) -> str:
    """Inverse of parse_script for S-labeled scripts: "[S1] text [S2] text"."""
    for turn in script.turns:
        if not _SPEAKER_LABEL.match(turn.speaker):
            raise ValueError(f"speaker {turn.speaker!r} is not renderable as a tag")
    return " ".join(f"[{t.speaker}] {t.text}" for t in script.turns)


@dataclass(frozen=True)
class GenerationPolicy:
    max_speakers: int = 2
    allow_adjacent_repeat: bool = True
    max_attempts: int = 5
    max_tokens: int = 512
    temperature: float = 0.7


@dataclass
class GenerationStats:
    requested: int = 0
    generated: int = 0
    attempts: int = 0
    rejections: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "requested": self.requested,
            "generated": self.generated,
            "attempts": self.attempts,
            "rejections": dict(sorted(self.rejections.items())),
        }


@dataclass
class GenerationResult:
    scripts: list[ConversationScript]
    stats: GenerationStats


class TranscriptGenerationError(RuntimeError):
    """Retry budget exhausted; carries the partial result."""

    def __init__(self, message: str, result: GenerationResult):
        super().__init__(message)
        self.result = result


def _generate_one(
    pool: SeedPool,
    spec: PromptSpec,
    policy: GenerationPolicy,
    service: CompletionService,
    item: int,
) -> tuple[ConversationScript | None, int, Counter]:
    rejections: Counter = Counter()
    for attempt in range(policy.max_attempts):
        shot_seed = derive_seed(spec.rng_seed, "shots", item, attempt)
        prompt = build_prompt(
            pool,
            PromptSpec(spec.k_shots, spec.delimiter, spec.instruction_header, shot_seed),
        )
        request = CompletionRequest(
            prompt,
            max_tokens=policy.max_tokens,
            temperature=policy.temperature,
            seed=derive_seed(spec.rng_seed, "completion", item, attempt),
        )
        try:
            completion = service.complete(request)
        except ServiceError as exc:
            if exc.retryable:
                rejections["service_error"] += 1
                continue
            raise
        try:
            script = parse_script(completion)
        except ScriptParseError as exc:
            rejections[exc.code] += 1
            continue
        report = validate_script(
            script,
            max_speakers=policy.max_speakers,
            allow_adjacent_repeat=policy.allow_adjacent_repeat,
        )
        if not report.ok:
            for violation in report.violations:
                rejections[violation.code] += 1
            continue
        return script, attempt + 1, rejections
    return None, policy.max_attempts, rejections


def generate_scripts(
    pool: SeedPool,
    spec: PromptSpec,
    n: int,
    policy: GenerationPolicy = GenerationPolicy(),
    service: CompletionService | None = None,
    jobs: int = 1,
) -> GenerationResult:
    """Generate ``n`` validated scripts, resampling the few-shot subset per item.

    Invalid completions are retried up to the policy budget with rejects
    tallied by reason; an exhausted budget raises
    :class:`TranscriptGenerationError` carrying the partial result.
    """
    if service is None:
        raise ValueError("a completion service is required")
    stats = GenerationStats(requested=n)
    if n == 0:
        return GenerationResult([], stats)

    def work(item: int):
        return _generate_one(pool, spec, policy, service, item)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            outcomes = list(pool_exec.map(work, range(n)))
    else:
        outcomes = [work(i) for i in range(n)]

    scripts: list[ConversationScript] = []
    failed_items = []
    for item, (script, attempts, rejections) in enumerate(outcomes):
        stats.attempts += attempts
        stats.rejections.update(rejections)
        if script is None:
            failed_items.append(item)
        else:
            scripts.append(script)
    stats.generated = len(scripts)
    result = GenerationResult(scripts, stats)
    if failed_items:
        raise TranscriptGenerationError(
            f"retry budget exhausted for {len(failed_items)} of {n} items "
            f"(first failures: {failed_items[:5]})",
            result,
        )
    return result
