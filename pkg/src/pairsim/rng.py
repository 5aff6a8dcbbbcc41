"""Counter-based random streams derived from one master seed.

Every stream is addressed by a key path such as ``("single_g2", "block", 17)``.
String components map to integers through CRC-32, integer components pass
through, and the resulting tuple becomes the ``spawn_key`` of a
``SeedSequence`` rooted at the master seed that drives a Philox generator.
A stream therefore depends only on (master seed, key path), never on which
worker draws it or in what order.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

WORKERS_ENV = "PAIRSIM_WORKERS"


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"key components must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported key component {part!r}")


class SeedTree:
    def __init__(self, master_seed: int, prefix: tuple = ()):
        if not 0 <= int(master_seed) < 2**64:
            raise ValueError(f"master seed must fit in 64 bits, got {master_seed}")
        self.master_seed = int(master_seed)
        self.prefix = tuple(_key_int(p) for p in prefix)

    def child(self, *key) -> "SeedTree":
        return SeedTree(self.master_seed, self.prefix + tuple(_key_int(k) for k in key))

    def generator(self, *key) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.prefix + tuple(_key_int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"SeedTree({self.master_seed}, prefix={self.prefix})"


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
