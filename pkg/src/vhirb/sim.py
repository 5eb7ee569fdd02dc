"""Length-only vORAM simulator for stash and utilization experiments.

It tracks how many bytes of each block sit in each bucket and nothing
else, with no payloads, keys or encryption, and uses the same packing
rule as :class:`vhirb.voram.VOram`.  With ``header=0`` a bucket offers
all ``Z`` bytes to partial blocks, matching an unencrypted tree.
"""

from __future__ import annotations

import math
import random

from .voram import LEN_BYTES, plan_fill


def geometric_size(rng: random.Random, mean: float) -> int:
    """Sample from the geometric law on ``{1, 2, ...}`` with the given mean."""
    if mean <= 1:
        return 1
    u = 1.0 - rng.random()
    return 1 + int(math.log(u) / math.log1p(-1.0 / mean))


class SimVoram:
    def __init__(self, T: int, Z: int, *, gamma: int = 40, header: int = 0,
                 rng: random.Random | None = None):
        if T < 1:
            raise ValueError("T must be at least 1")
        self.T = T
        self.Z = Z
        self.meta = (2 * T + gamma + 1 + 7) // 8 + LEN_BYTES
        self.capacity = Z - header
        if self.capacity < 2 * self.meta:
            raise ValueError("bucket too small for two partial blocks")
        self.rng = rng if rng is not None else random.Random()
        self.buckets: list[dict[int, int]] = [{} for _ in range((1 << (T + 1)) - 1)]
        self.stash: dict[int, int] = {}
        self.leaf_of: dict[int, int] = {}
        self._next_id = 1
        self.max_stash = 0

    @property
    def stash_bytes(self) -> int:
        return sum(self.stash.values())

    def _path(self, leaf: int) -> list[int]:
        T = self.T
        return [(1 << t) - 1 + (leaf >> (T - t)) for t in range(T + 1)]

    def _evict(self, leaf: int) -> list[int]:
        path = self._path(leaf)
        stash = self.stash
        for i in path:
            bucket = self.buckets[i]
            for pid, n in bucket.items():
                stash[pid] = stash.get(pid, 0) + n
            bucket.clear()
        return path

    def _writeback(self, leaf: int, path: list[int]) -> int:
        T = self.T
        stash, leaf_of = self.stash, self.leaf_of
        by_depth: list[list[int]] = [[] for _ in range(T + 1)]
        for pid in stash:
            by_depth[T - (leaf_of[pid] ^ leaf).bit_length()].append(pid)
        pool: list[int] = []
        for t in range(T, -1, -1):
            pool.extend(by_depth[t])
            if not pool:
                continue
            bucket = self.buckets[path[t]]
            for pid, take in plan_fill([(p, stash[p]) for p in pool],
                                       self.capacity, self.meta):
                bucket[pid] = take
                left = stash[pid] - take
                if left:
                    stash[pid] = left
                else:
                    del stash[pid]
            pool = [p for p in pool if p in stash]
        size = self.stash_bytes
        if size > self.max_stash:
            self.max_stash = size
        return size

    def insert(self, length: int, *, bogus: int | None = None, leaf: int | None = None,
               ident: int | None = None) -> tuple[int, int]:
        """Insert a block of ``length`` bytes; returns ``(id, stash bytes)``.

        ``bogus`` (the evicted leaf), ``leaf`` and ``ident`` are drawn
        at random or by counter unless given, which lets a run be replayed
        against another implementation.
        """
        if length < 1:
            raise ValueError("blocks must be at least one byte")
        rng = self.rng
        if bogus is None:
            bogus = rng.getrandbits(self.T)
        path = self._evict(bogus)
        if ident is None:
            ident = self._next_id
            self._next_id += 1
        self.leaf_of[ident] = rng.getrandbits(self.T) if leaf is None else leaf
        self.stash[ident] = length
        return ident, self._writeback(bogus, path)

    def access(self, ident: int) -> int:
        """Read a block and remap it to a fresh random leaf; returns stash bytes."""
        leaf = self.leaf_of[ident]
        path = self._evict(leaf)
        self.leaf_of[ident] = self.rng.getrandbits(self.T)
        return self._writeback(leaf, path)

    def level_usage(self) -> list[int]:
        """Bytes in use per level, counting fragment metadata."""
        usage = [0] * (self.T + 1)
        for i, bucket in enumerate(self.buckets):
            if bucket:
                usage[(i + 1).bit_length() - 1] += sum(bucket.values()) + self.meta * len(bucket)
        return usage

    def utilization(self) -> list[float]:
        """Fraction of every level's partial-block capacity in use."""
        return [used / ((1 << t) * self.capacity)
                for t, used in enumerate(self.level_usage())]

    def total_bytes(self, ident: int) -> int:
        """Bytes of ``ident`` held anywhere (stash plus its path)."""
        n = self.stash.get(ident, 0)
        for i in self._path(self.leaf_of[ident]):
            n += self.buckets[i].get(ident, 0)
        return n
