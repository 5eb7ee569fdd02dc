"""Fixed-size encrypted bucket storage with pluggable backends.

Buckets are addressed in heap order: the root is 0 and the children of
bucket ``i`` are ``2i + 1`` and ``2i + 2``.  A tree of height ``T`` has
``2**(T + 1) - 1`` buckets, and a leaf is named by ``T`` path bits read
from the most significant end (0 = left).
"""

from __future__ import annotations

import math
import os
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

from .errors import NotInitialized, SizeMismatch, StoreError


def bucket_count(T: int) -> int:
    return (1 << (T + 1)) - 1


def path_indices(leaf: int, T: int) -> list[int]:
    """Heap indices of the buckets from the root down to ``leaf``."""
    if not 0 <= leaf < 1 << T:
        raise ValueError(f"leaf {leaf} out of range for T={T}")
    return [(1 << t) - 1 + (leaf >> (T - t)) for t in range(T + 1)]


def level_of(index: int) -> int:
    return (index + 1).bit_length() - 1


@dataclass
class StoreStats:
    """Traffic counters, seen from the store's side of the link.

    ``bytes_out`` is what the store sent (bucket reads), ``bytes_in`` what
    it received (bucket writes).
    """

    gets: int = 0
    puts: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    round_trips: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def total_bytes(self) -> int:
        return self.bytes_in + self.bytes_out

    def copy(self) -> "StoreStats":
        return StoreStats(**asdict(self))

    def __sub__(self, other: "StoreStats") -> "StoreStats":
        return StoreStats(*(a - b for a, b in
                            zip(asdict(self).values(), asdict(other).values())))


class BucketStore:
    """Common behaviour of all backends.

    Subclasses implement ``_setup``, ``_read`` and ``_write``; validation,
    statistics and path-level parallelism live here.
    """

    def __init__(self, parallelism: int | None = None):
        self.T: int | None = None
        self.ciphertext_size: int | None = None
        self.stats = StoreStats()
        self._parallelism = parallelism
        self._pool: ThreadPoolExecutor | None = None
        self._lock = threading.Lock()

    # -- configuration ---------------------------------------------------

    @property
    def initialized(self) -> bool:
        return self.T is not None

    @property
    def parallelism(self) -> int:
        if self._parallelism is not None:
            return max(1, self._parallelism)
        return min((self.T or 0) + 1, 8)

    def init(self, T: int, ciphertext_size: int) -> None:
        if T < 0 or ciphertext_size <= 0:
            raise ValueError("invalid store geometry")
        self._setup(T, ciphertext_size)
        self.T = T
        self.ciphertext_size = ciphertext_size

    def _setup(self, T: int, ciphertext_size: int) -> None:
        pass

    def _check_index(self, i: int) -> None:
        if not self.initialized:
            raise NotInitialized("store has not been initialized")
        if not 0 <= i < bucket_count(self.T):
            raise IndexError(f"bucket {i} out of range for T={self.T}")

    def _count(self, gets=0, puts=0, trips=0) -> None:
        size = self.ciphertext_size
        with self._lock:
            self.stats.gets += gets
            self.stats.puts += puts
            self.stats.bytes_out += gets * size
            self.stats.bytes_in += puts * size
            self.stats.round_trips += trips

    # -- single buckets --------------------------------------------------

    def get_bucket(self, i: int) -> bytes:
        self._check_index(i)
        data = self._read(i)
        self._count(gets=1, trips=1)
        return data

    def put_bucket(self, i: int, c: bytes) -> None:
        self._check_index(i)
        if len(c) != self.ciphertext_size:
            raise SizeMismatch(
                f"bucket is {len(c)} bytes, store expects {self.ciphertext_size}")
        self._write(i, bytes(c))
        self._count(puts=1, trips=1)

    # -- batches ---------------------------------------------------------

    def _map(self, fn, items: Sequence):
        workers = min(self.parallelism, len(items))
        if workers <= 1:
            return [fn(x) for x in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.parallelism)
        return list(self._pool.map(fn, items))

    def get_many(self, indices: Sequence[int]) -> list[bytes]:
        for i in indices:
            self._check_index(i)
        out = self._map(self._read, indices)
        self._count(gets=len(indices), trips=self._trips(len(indices)))
        return out

    def put_many(self, items: Sequence[tuple[int, bytes]]) -> None:
        for i, c in items:
            self._check_index(i)
            if len(c) != self.ciphertext_size:
                raise SizeMismatch(
                    f"bucket is {len(c)} bytes, store expects {self.ciphertext_size}")
        self._map(lambda ic: self._write(ic[0], bytes(ic[1])), items)
        self._count(puts=len(items), trips=self._trips(len(items)))

    def _trips(self, n: int) -> int:
        return math.ceil(n / self.parallelism) if n else 0

    def get_path(self, leaf: int) -> list[bytes]:
        """Ciphertexts along the path to ``leaf``, root first."""
        self._check_index(0)
        return self.get_many(path_indices(leaf, self.T))

    def put_path(self, leaf: int, ciphertexts: Sequence[bytes]) -> None:
        self._check_index(0)
        if len(ciphertexts) != self.T + 1:
            raise ValueError(f"path needs {self.T + 1} buckets, got {len(ciphertexts)}")
        self.put_many(list(zip(path_indices(leaf, self.T), ciphertexts)))

    # -- lifecycle -------------------------------------------------------

    def flush(self) -> None:
        pass

    def close(self) -> None:
        self.flush()
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _read(self, i: int) -> bytes:
        raise NotImplementedError

    def _write(self, i: int, c: bytes) -> None:
        raise NotImplementedError


class MemoryStore(BucketStore):
    """Buckets kept in a Python list.

    Transfers always run inline; ``parallelism`` only shapes the
    round-trip count, as if the store were remote.
    """

    def __init__(self, parallelism: int | None = 1):
        super().__init__(parallelism)
        self._buckets: list[bytes | None] = []

    def _map(self, fn, items):
        return [fn(x) for x in items]

    def _setup(self, T, ciphertext_size):
        self._buckets = [None] * bucket_count(T)

    def _read(self, i):
        data = self._buckets[i]
        if data is None:
            raise StoreError(f"bucket {i} was never written")
        return data

    def _write(self, i, c):
        self._buckets[i] = c

    def snapshot(self) -> list[bytes | None]:
        return list(self._buckets)


class DirectoryStore(BucketStore):
    """One file per bucket, named by its decimal heap index."""

    META = "store.meta"

    def __init__(self, root: str | os.PathLike, durable: bool = False,
                 parallelism: int | None = None):
        super().__init__(parallelism)
        self.root = Path(root)
        self.durable = durable
        meta = self.root / self.META
        if meta.exists():
            T, size = meta.read_text().split()
            self.T, self.ciphertext_size = int(T), int(size)

    def _setup(self, T, ciphertext_size):
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / self.META).write_text(f"{T} {ciphertext_size}\n")
        except OSError as exc:
            raise StoreError(str(exc)) from exc

    def _read(self, i):
        try:
            return (self.root / str(i)).read_bytes()
        except OSError as exc:
            raise StoreError(f"cannot read bucket {i}: {exc}") from exc

    def _write(self, i, c):
        path = self.root / str(i)
        try:
            with open(path, "wb") as fh:
                fh.write(c)
                if self.durable:
                    fh.flush()
                    os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreError(f"cannot write bucket {i}: {exc}") from exc


class RecordingStore(BucketStore):
    """Wraps another store and records everything an observer could see.

    ``trace`` holds ``(op, index, size)`` tuples in issue order and
    ``history`` every ciphertext ever written to each index.
    """

    def __init__(self, inner: BucketStore):
        super().__init__(parallelism=1)
        self.inner = inner
        self.trace: list[tuple[str, int, int]] = []
        self.history: dict[int, list[bytes]] = defaultdict(list)
        if inner.initialized:
            self.T, self.ciphertext_size = inner.T, inner.ciphertext_size

    def _setup(self, T, ciphertext_size):
        self.inner.init(T, ciphertext_size)

    def get_many(self, indices):
        out = self.inner.get_many(indices)
        self.trace.extend(("get", i, len(c)) for i, c in zip(indices, out))
        self._count(gets=len(indices), trips=self.inner._trips(len(indices)))
        return out

    def put_many(self, items):
        self.inner.put_many(items)
        for i, c in items:
            self.trace.append(("put", i, len(c)))
            self.history[i].append(bytes(c))
        self._count(puts=len(items), trips=self.inner._trips(len(items)))

    def _read(self, i):
        c = self.inner.get_bucket(i)
        self.trace.append(("get", i, len(c)))
        return c

    def _write(self, i, c):
        self.inner.put_bucket(i, c)
        self.trace.append(("put", i, len(c)))
        self.history[i].append(c)

    def flush(self):
        self.inner.flush()

    def close(self):
        super().close()
        self.inner.close()


class BufferedStore(BucketStore):
    """Client-side write-back cache over the top levels of the tree.

    By default the top ``ceil(lg(2T)) + 1`` levels are cached; reads and
    writes of those buckets never reach the inner store until
    :meth:`flush`.
    """

    def __init__(self, inner: BucketStore, levels: int | None = None):
        super().__init__(parallelism=1)
        self.inner = inner
        self._levels = levels
        self._cache: dict[int, bytes] = {}
        self._dirty: set[int] = set()
        if inner.initialized:
            self.T, self.ciphertext_size = inner.T, inner.ciphertext_size

    @property
    def levels(self) -> int:
        if self._levels is not None:
            return self._levels
        return math.ceil(math.log2(2 * self.T)) + 1 if self.T else 1

    def _cached(self, i: int) -> bool:
        return level_of(i) < self.levels

    def _setup(self, T, ciphertext_size):
        self.inner.init(T, ciphertext_size)
        self._cache.clear()
        self._dirty.clear()

    def get_many(self, indices):
        for i in indices:
            self._check_index(i)
        missing = [i for i in indices if i not in self._cache]
        fetched = dict(zip(missing, self.inner.get_many(missing))) if missing else {}
        for i, c in fetched.items():
            if self._cached(i):
                self._cache[i] = c
        self._count(gets=len(indices), trips=self.inner._trips(len(missing)))
        return [self._cache[i] if i in self._cache else fetched[i] for i in indices]

    def put_many(self, items):
        for i, c in items:
            self._check_index(i)
            if len(c) != self.ciphertext_size:
                raise SizeMismatch(
                    f"bucket is {len(c)} bytes, store expects {self.ciphertext_size}")
        through = []
        for i, c in items:
            if self._cached(i):
                self._cache[i] = bytes(c)
                self._dirty.add(i)
            else:
                through.append((i, c))
        if through:
            self.inner.put_many(through)
        self._count(puts=len(items), trips=self.inner._trips(len(through)))

    def _read(self, i):
        return self.get_many([i])[0]

    def _write(self, i, c):
        self.put_many([(i, c)])

    def get_bucket(self, i):
        return self.get_many([i])[0]

    def put_bucket(self, i, c):
        self.put_many([(i, c)])

    def flush(self):
        if self._dirty:
            self.inner.put_many([(i, self._cache[i]) for i in sorted(self._dirty)])
            self._dirty.clear()
        self.inner.flush()

    def close(self):
        super().close()
        self.inner.close()


def open_backend(spec: str, parallelism: int | None = None) -> BucketStore:
    """Build a store from ``mem``, ``dir:PATH`` or ``remote:HOST:PORT``."""
    kind, _, rest = spec.partition(":")
    if kind == "mem":
        return MemoryStore(parallelism)
    if kind == "dir" and rest:
        return DirectoryStore(rest, parallelism=parallelism)
    if kind == "remote" and rest:
        from .server import RemoteStore, parse_address
        return RemoteStore(*parse_address(rest), parallelism=parallelism)
    raise ValueError(f"unknown backend {spec!r}")

