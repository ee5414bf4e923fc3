"""Derived random streams.

Every consumer of randomness gets its own generator keyed by the run seed and
a label, so one stream never shifts another when code paths change.
"""

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def stream(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
