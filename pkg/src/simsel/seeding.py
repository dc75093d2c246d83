"""Deterministic seed derivation.

Every stochastic component takes an explicit 64-bit seed. Sub-seeds are
derived by hashing a root seed together with stable string/int labels, so
results never depend on scheduling order or Python's salted hash().
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, *parts) -> int:
    """Derive a 64-bit sub-seed from a root seed and stable labels.

    Labels may be strings or ints; the same (root, parts) always maps to
    the same seed on every platform and process.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(root & _MASK64).to_bytes(8, "little"))
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p & _MASK64).to_bytes(8, "little", signed=False))
        else:
            b = str(p).encode("utf-8")
            h.update(b"s" + len(b).to_bytes(4, "little") + b)
    return int.from_bytes(h.digest(), "little")


def rng_from(seed: int, *parts) -> np.random.Generator:
    """Generator seeded by ``derive_seed(seed, *parts)`` (PCG64)."""
    if parts:
        seed = derive_seed(seed, *parts)
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
