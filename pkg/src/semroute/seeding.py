"""Deterministic seed derivation.

All randomness in a run flows from one master seed. Components never share a
raw RNG; instead each consumer derives its own child seed from the master seed
plus a label path. Derivation is a SHA-256 digest, so it is stable across
processes, platforms, and Python versions (``hash()`` is salted and must not
be used here).
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Derive a child seed from a label path.

    Args:
        *parts: Any mix of ints and strings identifying the consumer, for
            example ``derive_seed(master, question_id, "step", 2)``.

    Returns:
        A non-negative 63-bit integer suitable for ``random.Random``.
    """
    if not parts:
        raise ValueError("derive_seed requires at least one part")
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF
