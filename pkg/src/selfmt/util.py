"""Small shared helpers: stable seeding, bounded shuffles, file fingerprints."""

from __future__ import annotations

import hashlib
import random


def stable_rng(*parts) -> random.Random:
    """Deterministic RNG derived from the given parts.

    Seeds via the string path (CPython hashes str seeds with sha512), so the
    stream is stable across processes regardless of PYTHONHASHSEED.
    """
    return random.Random("|".join(str(p) for p in parts))


def bounded_permutation(n: int, window: int, rng: random.Random) -> list[int]:
    """Random permutation of range(n) where no element moves more than `window`.

    Classic jittered-sort construction: sort indices by i + U[0, window].
    """
    if window <= 0:
        return list(range(n))
    keys = [(i + rng.uniform(0, window), i) for i in range(n)]
    keys.sort()
    return [i for _, i in keys]


def stable_torch_seed(*parts) -> int:
    """31-bit seed derived from the parts, stable across processes."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
