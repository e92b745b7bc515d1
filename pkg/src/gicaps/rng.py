"""Seed derivation.

Every random stream is derived from the run seed plus a tuple of purpose
keys, so the value drawn by a task does not depend on execution order or on
how work is split across processes.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit seed from ``seed`` and any number of str/int keys."""
    h = hashlib.sha256(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
