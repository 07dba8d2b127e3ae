"""Seed stream derivation.

Every stochastic call gets a 64-bit seed derived from
``(master_seed, purpose, n, replicate, extra...)`` through
:class:`numpy.random.SeedSequence`, so results never depend on
scheduling or call order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed", "stream_id", "SeedLog"]


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _n_key(n) -> int:
    # n may be fractional; key on its exact float bits
    return int(np.float64(n).view(np.uint64))


def stream_id(master_seed: int, purpose: str, n=0.0, replicate: int = 0, *extra: int) -> tuple:
    return (int(master_seed), purpose, float(n), int(replicate), *map(int, extra))


def derive_seed(master_seed: int, purpose: str, n=0.0, replicate: int = 0, *extra: int) -> int:
    """Unsigned 64-bit seed for one stream."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, _tag_code(purpose), _n_key(n), int(replicate), *map(int, extra)]
    words = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(words[0]) << 32 | int(words[1])


class SeedLog:
    """Records stream ids handed out during a run and rejects reuse."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._seen: dict[tuple, int] = {}

    def seed(self, purpose: str, n=0.0, replicate: int = 0, *extra: int) -> int:
        key = stream_id(self.master_seed, purpose, n, replicate, *extra)
        if key in self._seen:
            raise RuntimeError(f"seed stream reused: {key}")
        s = derive_seed(self.master_seed, purpose, n, replicate, *extra)
        self._seen[key] = s
        return s

    @property
    def streams(self) -> dict[tuple, int]:
        return dict(self._seen)
