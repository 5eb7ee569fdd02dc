import random

import pytest

from vhirb.errors import AuthError, CapacityExceeded, LabelTooLong
from vhirb.naive import NaiveMap
from vhirb.store import MemoryStore, RecordingStore


def make(capacity=8, store=None, seed=0):
    m = NaiveMap(capacity, store if store is not None else MemoryStore(),
                 rng=random.Random(seed))
    m.initialize()
    return m


def test_roundtrip():
    m = make()
    m.set("a", "1")
    assert m.get("a") == b"1"
    assert m.delete("a") and m.get("a") is None
    assert not m.delete("a")


def test_every_op_moves_two_blobs():
    rec = RecordingStore(MemoryStore())
    m = make(capacity=10, store=rec)
    size = m.ciphertext_size
    assert size == 4 + 10 * 40 + 28
    for op in (lambda: m.set("k", "v"), lambda: m.get("k"), lambda: m.get("nope"),
               lambda: m.delete("k")):
        before = rec.stats.copy()
        op()
        d = rec.stats - before
        assert d.total_bytes() == 2 * size == m.bytes_per_op()
        assert (d.gets, d.puts) == (1, 1)


def test_canonical_plaintext():
    a, b = make(seed=1), make(seed=2)
    for k in ["x", "b", "m"]:
        a.set(k, k * 2)
    for k in ["m", "zz", "x", "b"]:
        b.set(k, k * 2)
    b.delete("zz")
    pa = a.cipher.decrypt(a.key, a.store.get_bucket(0))
    pb = b.cipher.decrypt(b.key, b.store.get_bucket(0))
    assert pa == pb
    assert a.decode(pa) == ([b"b", b"m", b"x"], [b"bb", b"mm", b"xx"])


def test_fresh_key_each_op():
    m = make()
    keys = set()
    for i in range(10):
        m.get("a")
        keys.add(m.key)
    assert len(keys) == 10


def test_errors():
    m = make(capacity=2)
    m.set("a", "1")
    m.set("b", "2")
    with pytest.raises(CapacityExceeded):
        m.set("c", "3")
    m.set("a", "updated")
    with pytest.raises(LabelTooLong):
        m.get("x" * 21)
    with pytest.raises(ValueError):
        m.set("a", "x" * 17)
    with pytest.raises(ValueError):
        m.get("")
    m.key = bytes(32)
    with pytest.raises(AuthError):
        m.get("a")


def test_mirror_random_ops():
    m = make(capacity=64, seed=5)
    rng = random.Random(5)
    ref = {}
    for _ in range(1000):
        k = b"%d" % rng.randrange(80)
        r = rng.random()
        if r < 0.45 and (k in ref or len(ref) < 64):
            v = rng.randbytes(rng.randint(0, 16))
            m.set(k, v)
            ref[k] = v
        elif r < 0.75:
            assert m.get(k) == ref.get(k)
        else:
            assert m.delete(k) == (k in ref)
            ref.pop(k, None)
    assert len(m) == len(ref)
