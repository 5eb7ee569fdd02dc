"""ORAM over variable-size blocks with per-bucket key chaining.

The tree has levels ``0..T`` of ``Z``-byte buckets.  Each bucket holds the
keys of its two children followed by a packed run of partial blocks::

    child_key_left | child_key_right | { id | len u32 | data }* | zeros

Identifiers are ``2T + gamma + 1``-bit integers whose leading bit is 1, so
a zero byte where an identifier would start marks the end of the data
area.  The ``T`` bits after the leading 1 are the block's leaf.

A block's fragments along its path are ordered root first: the stash
holds the prefix, the bucket nearest the root the next piece, and so on
down to the deepest fragment.  Whenever a bucket is written it gets a
fresh key that is stored only in its parent (or, for the root, in
erasable client memory), so old ciphertexts become undecryptable.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable

from .crypto import AeadCipher, system_rng
from .errors import LevelOutOfRange, NotFound, ParseError, StashOverflow
from .store import BucketStore, bucket_count, level_of, path_indices

LEN_BYTES = 4


@dataclass(frozen=True)
class VoramConfig:
    """Geometry of a vORAM.

    ``Z`` is the plaintext bucket size in bytes and ``B`` the expected
    block size; ``R`` bounds the stash at ``R * B`` data bytes (``None``
    leaves it unbounded but still monitored).
    """

    T: int
    Z: int
    B: int = 68
    R: float | None = None
    gamma: int = 40
    key_bytes: int = 32

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.gamma < 1:
            raise ValueError("gamma must be at least 1")
        if self.capacity < 2 * self.meta_size:
            raise ValueError(
                f"Z={self.Z} leaves {self.capacity} data bytes; need at least "
                f"{2 * self.meta_size}")

    @property
    def id_bits(self) -> int:
        return 2 * self.T + self.gamma + 1

    @property
    def id_bytes(self) -> int:
        return (self.id_bits + 7) // 8

    @property
    def meta_size(self) -> int:
        return self.id_bytes + LEN_BYTES

    @property
    def header_size(self) -> int:
        return 2 * self.key_bytes

    @property
    def capacity(self) -> int:
        """Bytes available for partial blocks (and their metadata)."""
        return self.Z - self.header_size

    @property
    def stash_limit(self) -> int | None:
        return None if self.R is None else int(self.R * self.B)

    @property
    def n_buckets(self) -> int:
        return bucket_count(self.T)


# ---------------------------------------------------------------------------
# identifiers


def id_leaf(ident: int, cfg: VoramConfig) -> int:
    return (ident >> (cfg.T + cfg.gamma)) & ((1 << cfg.T) - 1)


def loc(ident: int, t: int, cfg: VoramConfig) -> int:
    """Heap index of the level-``t`` bucket on ``ident``'s path."""
    if not 0 <= t <= cfg.T:
        raise LevelOutOfRange(f"level {t} outside 0..{cfg.T}")
    return (1 << t) - 1 + (id_leaf(ident, cfg) >> (cfg.T - t))


def id_to_bytes(ident: int, cfg: VoramConfig) -> bytes:
    return (ident << (8 * cfg.id_bytes - cfg.id_bits)).to_bytes(cfg.id_bytes, "big")


def id_from_bytes(raw: bytes, cfg: VoramConfig) -> int:
    return int.from_bytes(raw, "big") >> (8 * cfg.id_bytes - cfg.id_bits)


# ---------------------------------------------------------------------------
# bucket layout


def encode_bucket(cfg: VoramConfig, keys, partials: Iterable[tuple[int, bytes]]) -> bytes:
    parts = [keys[0], keys[1]]
    shift = 8 * cfg.id_bytes - cfg.id_bits
    for ident, data in partials:
        parts.append((ident << shift).to_bytes(cfg.id_bytes, "big"))
        parts.append(len(data).to_bytes(LEN_BYTES, "big"))
        parts.append(data)
    body = b"".join(parts)
    if len(body) > cfg.Z:
        raise ParseError(f"bucket content is {len(body)} bytes, Z={cfg.Z}")
    return body + bytes(cfg.Z - len(body))


def decode_bucket(cfg: VoramConfig, plain: bytes) -> tuple[list[bytes], list[tuple[int, bytes]]]:
    if len(plain) != cfg.Z:
        raise ParseError(f"bucket plaintext is {len(plain)} bytes, expected {cfg.Z}")
    kb, ib = cfg.key_bytes, cfg.id_bytes
    keys = [plain[:kb], plain[kb:2 * kb]]
    shift = 8 * ib - cfg.id_bits
    partials = []
    pos, end = 2 * kb, cfg.Z
    meta = ib + LEN_BYTES
    while pos + meta <= end and plain[pos]:
        ident = int.from_bytes(plain[pos:pos + ib], "big") >> shift
        n = int.from_bytes(plain[pos + ib:pos + meta], "big")
        start = pos + meta
        if n == 0 or start + n > end:
            raise ParseError(f"partial block of length {n} at offset {pos} overruns bucket")
        partials.append((ident, plain[start:start + n]))
        pos = start + n
    if plain.count(0, pos) != end - pos:
        raise ParseError("non-zero bytes after the last partial block")
    return keys, partials


def plan_fill(entries: list[tuple[int, int]], free: int, meta: int) -> list[tuple[int, int]]:
    """Decide how many trailing bytes of each stash entry go into a bucket.

    ``entries`` are ``(id, remaining_length)`` pairs eligible for the
    bucket.  They are considered largest first (ties by id).  A block that
    fits is taken whole; otherwise its suffix fills the remaining space,
    but only if that suffix is at least ``meta`` bytes long.
    """
    plan = []
    for ident, length in sorted(entries, key=lambda e: (-e[1], e[0])):
        if free <= meta:
            break
        if meta + length <= free:
            plan.append((ident, length))
            free -= meta + length
        elif free - meta >= meta:
            plan.append((ident, free - meta))
            free = 0
    return plan


# ---------------------------------------------------------------------------


class VOram:
    """Client side of a vORAM bound to one bucket store.

    Persistent state lives in ``store``; ``rootkey`` and ``stash`` are the
    erasable client state.  In ``experiment`` mode a stash above the limit
    is counted in ``overflows`` instead of raising :class:`StashOverflow`.
    """

    def __init__(self, config: VoramConfig, store: BucketStore, *,
                 cipher=None, rng: random.Random | None = None,
                 experiment: bool = False, subtree_eviction: bool = False):
        self.config = config
        self.store = store
        self.rng = rng if rng is not None else system_rng()
        self.cipher = cipher if cipher is not None else AeadCipher(self.rng)
        self.experiment = experiment
        self.subtree_eviction = subtree_eviction
        self.rootkey: bytes | None = None
        self.stash: dict[int, bytes] = {}
        self.max_stash = 0
        self.overflows = 0
        self.operations = 0
        self._pending: dict[int, list] = {}
        self._subtree_counter = 0
        self._preorder_cache: list[int] | None = None
        self._zero_key = bytes(config.key_bytes)

    @property
    def ciphertext_size(self) -> int:
        return self.config.Z + self.cipher.overhead

    @property
    def stash_bytes(self) -> int:
        return sum(map(len, self.stash.values()))

    def _new_key(self) -> bytes:
        return self.rng.randbytes(self.config.key_bytes)

    # -- setup -----------------------------------------------------------

    def initialize(self) -> None:
        """Write every bucket of a fresh tree, empty and freshly keyed."""
        cfg = self.config
        n = cfg.n_buckets
        self.store.init(cfg.T, self.ciphertext_size)
        keys: list[bytes | None] = [None] * n
        zero = self._zero_key
        batch = []
        for i in reversed(range(n)):
            if 2 * i + 1 < n:
                children = (keys[2 * i + 1], keys[2 * i + 2])
                keys[2 * i + 1] = keys[2 * i + 2] = None
            else:
                children = (zero, zero)
            key = keys[i] = self._new_key()
            batch.append((i, self.cipher.encrypt(key, encode_bucket(cfg, children, ()))))
            if len(batch) >= 1024:
                self.store.put_many(batch)
                batch = []
        if batch:
            self.store.put_many(batch)
        self.rootkey = keys[0]
        self.stash.clear()
        self._pending.clear()

    # -- identifiers -----------------------------------------------------

    def idgen(self) -> int:
        bits = self.config.id_bits - 1
        return (1 << bits) | self.rng.getrandbits(bits)

    def leaf(self, ident: int) -> int:
        return id_leaf(ident, self.config)

    def loc(self, ident: int, t: int) -> int:
        return loc(ident, t, self.config)

    # -- eviction --------------------------------------------------------

    def evict(self, ident: int) -> None:
        """Read the path of ``ident`` and move its partial blocks to the stash."""
        cfg = self.config
        T = cfg.T
        leaf = self.leaf(ident)
        indices = path_indices(leaf, T)
        cts = self.store.get_many(indices)
        key = self.rootkey
        pending, stash = self._pending, self.stash
        for t, i in enumerate(indices):
            slot = pending.get(i)
            if slot is None:
                # an already-evicted bucket is still held locally; its stored
                # copy is stale, so only the fetch is repeated
                keys, partials = decode_bucket(cfg, self.cipher.decrypt(key, cts[t]))
                slot = pending[i] = [keys, 0]
                for pid, data in partials:
                    prev = stash.get(pid)
                    stash[pid] = data if prev is None else prev + data
            slot[1] += 1
            if t < T:
                key = slot[0][(leaf >> (T - t - 1)) & 1]

    def writeback(self, ident: int) -> None:
        """Repack the stash along ``ident``'s path, leaf first, and re-key it.

        When another evicted path that shares a prefix is still pending,
        the shared buckets are written empty here and filled when that
        last path is written back.
        """
        cfg = self.config
        T = cfg.T
        leaf = self.leaf(ident)
        indices = path_indices(leaf, T)
        shift, mask = T + cfg.gamma, (1 << T) - 1
        by_depth: list[list[int]] = [[] for _ in range(T + 1)]
        for pid in self.stash:
            by_depth[T - (((pid >> shift) & mask) ^ leaf).bit_length()].append(pid)
        pool: list[int] = []
        cts: list[bytes] = [b""] * (T + 1)
        pending, stash = self._pending, self.stash
        for t in range(T, -1, -1):
            pool.extend(by_depth[t])
            i = indices[t]
            slot = pending[i]
            slot[1] -= 1
            partials = []
            if slot[1] == 0:
                del pending[i]
                if pool:
                    partials, pool = self._fill(pool)
            key = self._new_key()
            cts[t] = self.cipher.encrypt(key, encode_bucket(cfg, slot[0], partials))
            if t:
                pending[indices[t - 1]][0][(leaf >> (T - t)) & 1] = key
            else:
                self.rootkey = key
        self.store.put_many(list(zip(indices, cts)))
        if not pending:
            self._finish()

    def _fill(self, pool: list[int]) -> tuple[list[tuple[int, bytes]], list[int]]:
        stash = self.stash
        plan = plan_fill([(pid, len(stash[pid])) for pid in pool],
                         self.config.capacity, self.config.meta_size)
        partials = []
        for pid, take in plan:
            data = stash[pid]
            if take == len(data):
                del stash[pid]
                partials.append((pid, data))
            else:
                stash[pid] = data[:-take]
                partials.append((pid, data[-take:]))
        return partials, [pid for pid in pool if pid in stash]

    def _finish(self) -> None:
        self.operations += 1
        if self.subtree_eviction:
            self.evict_subtree()
        size = self.stash_bytes
        self.max_stash = max(self.max_stash, size)
        limit = self.config.stash_limit
        if limit is not None and size > limit:
            self.overflows += 1
            if not self.experiment:
                raise StashOverflow(size, limit)

    # -- stash access for data structures built on top --------------------

    def take(self, ident: int) -> bytes:
        """Remove a fully reassembled block from the stash."""
        try:
            return self.stash.pop(ident)
        except KeyError:
            raise NotFound(f"block {ident:#x} is not in the stash") from None

    def place(self, ident: int, block: bytes) -> None:
        if not block:
            raise ValueError("blocks must be at least one byte")
        self.stash[ident] = bytes(block)

    # -- public operations -------------------------------------------------

    def insert(self, blk: bytes) -> int:
        if not blk:
            raise ValueError("blocks must be at least one byte")
        bogus = self.idgen()
        self.evict(bogus)
        ident = self.idgen()
        while ident in self.stash:
            ident = self.idgen()
        self.stash[ident] = bytes(blk)
        self.writeback(bogus)
        return ident

    def remove(self, ident: int) -> bytes:
        self.evict(ident)
        blk = self.stash.pop(ident, None)
        self.writeback(ident)
        if blk is None:
            raise NotFound(f"block {ident:#x} does not exist")
        return blk

    def update(self, ident: int, callback: Callable[[bytes], bytes]) -> int | None:
        """Replace a block by ``callback(block)`` under a fresh identifier.

        An empty callback result deletes the block and returns ``None``.
        """
        self.evict(ident)
        blk = self.stash.pop(ident, None)
        if blk is None:
            self.writeback(ident)
            raise NotFound(f"block {ident:#x} does not exist")
        try:
            new = callback(blk)
        except BaseException:
            self.stash[ident] = blk
            self.writeback(ident)
            raise
        fresh = None
        if new:
            fresh = self.idgen()
            self.stash[fresh] = bytes(new)
        self.writeback(ident)
        return fresh

    def peek(self, ident: int) -> bytes:
        """Reassemble a block without consuming its identifier.

        Only reads are issued, so this is for inspection and tests; it
        does not hide which path is read.
        """
        if self._pending:
            raise RuntimeError("peek is not allowed in the middle of an access")
        cfg = self.config
        leaf = self.leaf(ident)
        indices = path_indices(leaf, cfg.T)
        cts = self.store.get_many(indices)
        key = self.rootkey
        pieces = [self.stash.get(ident, b"")]
        for t, ct in enumerate(cts):
            keys, partials = decode_bucket(cfg, self.cipher.decrypt(key, ct))
            pieces.extend(d for pid, d in partials if pid == ident)
            if t < cfg.T:
                key = keys[(leaf >> (cfg.T - t - 1)) & 1]
        blk = b"".join(pieces)
        if not blk:
            raise NotFound(f"block {ident:#x} does not exist")
        return blk

    # -- dummy subtree eviction -----------------------------------------

    def _preorder(self) -> list[int]:
        if self._preorder_cache is None:
            n = self.config.n_buckets
            order, todo = [], [0]
            while todo:
                i = todo.pop()
                order.append(i)
                if 2 * i + 2 < n:
                    todo.append(2 * i + 2)
                    todo.append(2 * i + 1)
            self._preorder_cache = order
        return self._preorder_cache

    def subtree_schedule(self, counter: int) -> list[int]:
        """Buckets refreshed by the ``counter``-th dummy eviction.

        The tree is walked in pre-order and cut into chunks of ``T``
        buckets; each chunk plus the path to its first bucket is a subtree
        containing the root, so at most ``2T`` buckets are touched.
        """
        chunk = max(1, self.config.T)
        order = self._preorder()
        n_chunks = math.ceil(len(order) / chunk)
        c = counter % n_chunks
        members = set(order[c * chunk:(c + 1) * chunk])
        for i in list(members):
            while i:
                i = (i - 1) // 2
                members.add(i)
        return sorted(members)

    def evict_subtree(self) -> list[int]:
        """Read and rewrite the next scheduled subtree with fresh keys."""
        cfg = self.config
        T = cfg.T
        indices = self.subtree_schedule(self._subtree_counter)
        self._subtree_counter += 1
        cts = self.store.get_many(indices)
        keys_of: dict[int, list[bytes]] = {}
        stash = self.stash
        for i, ct in zip(indices, cts):
            key = self.rootkey if i == 0 else keys_of[(i - 1) // 2][(i - 1) % 2]
            keys, partials = decode_bucket(cfg, self.cipher.decrypt(key, ct))
            keys_of[i] = keys
            for pid, data in partials:
                prev = stash.get(pid)
                stash[pid] = data if prev is None else prev + data
        shift, mask = T + cfg.gamma, (1 << T) - 1
        out = []
        for i in reversed(indices):
            t = level_of(i)
            base = (1 << t) - 1
            pool = [pid for pid in stash
                    if base + (((pid >> shift) & mask) >> (T - t)) == i]
            partials = self._fill(pool)[0] if pool else []
            key = self._new_key()
            out.append((i, self.cipher.encrypt(key, encode_bucket(cfg, keys_of[i], partials))))
            if i:
                keys_of[(i - 1) // 2][(i - 1) % 2] = key
            else:
                self.rootkey = key
        self.store.put_many(out)
        return indices
