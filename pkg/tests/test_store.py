import random

import pytest
from hypothesis import given, settings, strategies as st

from vhirb.errors import NotInitialized, SizeMismatch, StoreError
from vhirb.server import BlobServer, RemoteStore
from vhirb.store import (BufferedStore, DirectoryStore, MemoryStore, RecordingStore,
                         bucket_count, level_of, open_backend, path_indices)

SIZE = 16


@pytest.fixture
def server(tmp_path):
    srv = BlobServer(("127.0.0.1", 0), tmp_path / "srv")
    srv.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def fresh(kind, tmp_path, server=None, parallelism=None):
    if kind == "mem":
        return MemoryStore(parallelism)
    if kind == "dir":
        return DirectoryStore(tmp_path / "d", parallelism=parallelism)
    return RemoteStore(*server.address, parallelism=parallelism)


KINDS = ["mem", "dir", "remote"]


@pytest.mark.parametrize("leaf,expected", [(0b00, [0, 1, 3]), (0b11, [0, 2, 6]),
                                           (0b01, [0, 1, 4]), (0b10, [0, 2, 5])])
def test_heap_paths(leaf, expected):
    assert path_indices(leaf, 2) == expected


def test_levels_and_counts():
    assert bucket_count(2) == 7
    assert [level_of(i) for i in range(7)] == [0, 1, 1, 2, 2, 2, 2]
    with pytest.raises(ValueError):
        path_indices(4, 2)


@pytest.mark.parametrize("kind", KINDS)
def test_basic_contract(kind, tmp_path, server):
    s = fresh(kind, tmp_path, server)
    with pytest.raises(NotInitialized):
        s.get_bucket(0)
    s.init(2, SIZE)
    s.put_bucket(3, b"a" * SIZE)
    assert s.get_bucket(3) == b"a" * SIZE
    s.put_bucket(3, b"b" * SIZE)
    assert s.get_bucket(3) == b"b" * SIZE
    with pytest.raises(SizeMismatch):
        s.put_bucket(1, b"short")
    with pytest.raises((IndexError, StoreError)):
        s.get_bucket(7)
    s.close()


@pytest.mark.parametrize("kind", KINDS)
def test_path_roundtrip_and_stats(kind, tmp_path, server):
    s = fresh(kind, tmp_path, server, parallelism=3)
    s.init(2, SIZE)
    cts = [bytes([i]) * SIZE for i in range(3)]
    s.put_path(0b10, cts)
    assert s.get_path(0b10) == cts
    assert [s.get_bucket(i) for i in (0, 2, 5)] == cts
    assert s.stats.bytes_out == 6 * SIZE
    assert s.stats.bytes_in == 3 * SIZE
    assert s.stats.round_trips == 1 + 1 + 3
    with pytest.raises(ValueError):
        s.put_path(0, cts[:2])
    s.close()


def test_parallel_equals_sequential(tmp_path, server):
    rng = random.Random(5)
    T = 4
    seq, par = DirectoryStore(tmp_path / "a", parallelism=1), RemoteStore(*server.address, parallelism=5)
    for s in (seq, par):
        s.init(T, SIZE)
    for i in range(bucket_count(T)):
        c = rng.randbytes(SIZE)
        seq.put_bucket(i, c)
        par.put_bucket(i, c)
    for leaf in range(1 << T):
        assert par.get_path(leaf) == seq.get_path(leaf) == [seq.get_bucket(i) for i in path_indices(leaf, T)]
    par.close()


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 14), st.binary(min_size=SIZE, max_size=SIZE)), max_size=60))
def test_memory_store_mirror(ops):
    s = MemoryStore()
    s.init(3, SIZE)
    mirror = {}
    for i, c in ops:
        s.put_bucket(i, c)
        mirror[i] = c
    for i, c in mirror.items():
        assert s.get_bucket(i) == c


def _random_workload(seed, T=3, n=1000):
    rng = random.Random(seed)
    for _ in range(n):
        i = rng.randrange(bucket_count(T))
        if rng.random() < 0.5:
            yield "put", i, rng.randbytes(SIZE)
        else:
            yield "get", i, None


def _replay(store, T=3):
    store.init(T, SIZE)
    for i in range(bucket_count(T)):
        store.put_bucket(i, bytes(SIZE))
    seen = []
    for op, i, c in _random_workload(11, T):
        if op == "put":
            store.put_bucket(i, c)
        else:
            seen.append(store.get_bucket(i))
    store.flush()
    return seen


def test_backend_equivalence(tmp_path, server):
    mem, disk, remote = MemoryStore(), DirectoryStore(tmp_path / "eq"), RemoteStore(*server.address)
    reads = [_replay(s) for s in (mem, disk, remote)]
    assert reads[0] == reads[1] == reads[2]
    final = [[s.get_bucket(i) for i in range(bucket_count(3))] for s in (mem, disk, remote)]
    assert final[0] == final[1] == final[2]
    remote.close()


def test_directory_layout_and_reopen(tmp_path):
    s = DirectoryStore(tmp_path / "x")
    s.init(1, SIZE)
    s.put_bucket(2, b"z" * SIZE)
    assert (tmp_path / "x" / "2").read_bytes() == b"z" * SIZE
    again = DirectoryStore(tmp_path / "x", durable=True)
    assert (again.T, again.ciphertext_size) == (1, SIZE)
    assert again.get_bucket(2) == b"z" * SIZE
    with pytest.raises(StoreError):
        again.get_bucket(0)


def test_buffered_transparency():
    plain, inner = MemoryStore(), MemoryStore()
    buffered = BufferedStore(inner)
    assert _replay(plain, T=4) == _replay(buffered, T=4)
    buffered.flush()
    assert inner.snapshot() == plain.snapshot()
    # top levels are absorbed by the buffer until flushed
    assert buffered.levels == 4


def test_buffered_saves_round_trips():
    inner = MemoryStore(parallelism=1)
    b = BufferedStore(inner, levels=2)
    b.init(3, SIZE)
    for i in range(bucket_count(3)):
        b.put_bucket(i, bytes(SIZE))
    b.flush()
    before = inner.stats.copy()
    b.get_path(5)
    b.get_path(5)
    assert (inner.stats - before).gets == 4   # levels 2 and 3 once per read


def test_recording_store_trace():
    r = RecordingStore(MemoryStore())
    r.init(2, SIZE)
    r.put_path(1, [b"q" * SIZE] * 3)
    r.get_path(1)
    assert r.trace[:3] == [("put", 0, SIZE), ("put", 1, SIZE), ("put", 4, SIZE)]
    assert [op for op, _, _ in r.trace[3:]] == ["get"] * 3
    assert r.history[4] == [b"q" * SIZE]


def test_open_backend(tmp_path):
    assert isinstance(open_backend("mem"), MemoryStore)
    assert isinstance(open_backend(f"dir:{tmp_path}"), DirectoryStore)
    assert isinstance(open_backend("remote:127.0.0.1:9"), RemoteStore)
    with pytest.raises(ValueError):
        open_backend("s3:bucket")
