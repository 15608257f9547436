"""convkit: synthetic two-speaker conversation datasets and cpWER scoring."""

from .core import (
    AudioClip,
    ConversationScript,
    ManifestRecord,
    Turn,
    UtteranceGroup,
    UtteranceSegment,
    read_manifest,
    validate_script,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ConversationScript",
    "ManifestRecord",
    "Turn",
    "UtteranceGroup",
    "UtteranceSegment",
    "read_manifest",
    "validate_script",
    "write_manifest",
    "__version__",
]
