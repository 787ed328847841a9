"""Stable seed derivation so parallel order can never change outputs."""
from __future__ import annotations

import hashlib


def derive_seed(base_seed: int, *parts) -> int:
    """Deterministic 64-bit seed from a base seed and identifying parts.

    Hash-based (not Python's salted hash), so results are stable across
    processes and runs.
    """
    key = "|".join([str(base_seed), *map(str, parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
