"""Named-stream seed derivation.

Every sampling step in the toolkit draws from a sub-seed derived from the
master seed plus a stream path (e.g. ``("conv", 17, "offsets")``), so runs
are reproducible regardless of scheduling and platform hash randomization.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 63) - 1


def derive_seed(master: int, *path: int | str) -> int:
    """Derive a stable 63-bit sub-seed from a master seed and a stream path."""
    tag = repr((int(master),) + tuple(path)).encode("utf-8")
    digest = hashlib.sha256(tag).digest()
    return int.from_bytes(digest[:8], "big") & _MASK
