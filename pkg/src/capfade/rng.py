"""Named random sub-streams derived from one 64-bit master seed.

A stream is identified by a role string plus integer indices, e.g.
``substream(seed, "run", 3)``. The identity is hashed (BLAKE2b, 8-byte
digest) and fed with the master seed into :class:`numpy.random.SeedSequence`,
so streams never depend on the order in which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def stream_key(role: str, *indices: int) -> int:
    text = role + "".join(f"/{int(i)}" for i in indices)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def substream(master_seed: int, role: str, *indices: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(master_seed) & MASK64, stream_key(role, *indices)])
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
