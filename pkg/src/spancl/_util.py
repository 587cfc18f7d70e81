"""Shared small helpers: seed derivation and stable JSON."""
from __future__ import annotations

import hashlib
import json


def derive_seed(base: int, *parts) -> int:
    """Derive a child seed from a base seed and a sequence of tags.

    Stable across platforms and Python versions (blake2b over the decimal
    rendering of the inputs). Result fits in 63 bits so it is usable with
    both random.Random and numpy Generators.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for part in parts:
        h.update(b"|")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little") & (2**63 - 1)


def stable_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
