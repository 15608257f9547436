import pytest

from convkit.core import ConversationScript


@pytest.fixture
def two_speaker_script():
    return ConversationScript.from_pairs(
        [("S1", "hello there"), ("S2", "hi how are you"), ("S1", "pretty good")]
    )
