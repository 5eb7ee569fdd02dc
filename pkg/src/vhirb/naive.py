"""Baseline map kept as one fixed-size encrypted blob.

Every operation downloads the whole blob, decrypts it, edits the table
and uploads it again under a fresh key.  The plaintext is the sorted
table zero-padded to capacity::

    count u32 | { label_len u16 | label | value_len u16 | value }* | zeros

so equal contents always give byte-identical plaintext.
"""

from __future__ import annotations

import random
import struct
from bisect import bisect_left

from .crypto import AeadCipher, system_rng
from .errors import CapacityExceeded, LabelTooLong, ParseError
from .store import BucketStore

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")


def _as_bytes(x) -> bytes:
    return x.encode() if isinstance(x, str) else bytes(x)


class NaiveMap:
    def __init__(self, capacity: int, store: BucketStore, *,
                 label_size_max: int = 20, value_size_max: int = 16,
                 rng: random.Random | None = None, cipher=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0 < label_size_max <= 0xFFFF or not 0 < value_size_max <= 0xFFFF:
            raise ValueError("label and value limits must be in 1..65535")
        self.capacity = capacity
        self.store = store
        self.label_size_max = label_size_max
        self.value_size_max = value_size_max
        self.rng = rng if rng is not None else system_rng()
        self.cipher = cipher if cipher is not None else AeadCipher(self.rng)
        self.key: bytes | None = None
        self.count = 0

    @property
    def plaintext_size(self) -> int:
        return _U32.size + self.capacity * (4 + self.label_size_max + self.value_size_max)

    @property
    def ciphertext_size(self) -> int:
        return self.plaintext_size + self.cipher.overhead

    def initialize(self) -> None:
        self.store.init(0, self.ciphertext_size)
        self._save([], [])

    # -- blob codec ------------------------------------------------------

    def encode(self, labels: list[bytes], values: list[bytes]) -> bytes:
        parts = [_U32.pack(len(labels))]
        for k, v in zip(labels, values):
            parts += [_U16.pack(len(k)), k, _U16.pack(len(v)), v]
        body = b"".join(parts)
        return body + bytes(self.plaintext_size - len(body))

    def decode(self, plain: bytes) -> tuple[list[bytes], list[bytes]]:
        try:
            (n,) = _U32.unpack_from(plain, 0)
            pos = _U32.size
            labels, values = [], []
            for _ in range(n):
                for out in (labels, values):
                    (m,) = _U16.unpack_from(plain, pos)
                    if pos + 2 + m > len(plain):
                        raise ParseError("entry overruns blob")
                    out.append(plain[pos + 2:pos + 2 + m])
                    pos += 2 + m
        except struct.error as exc:
            raise ParseError("truncated table") from exc
        return labels, values

    def _load(self) -> tuple[list[bytes], list[bytes]]:
        return self.decode(self.cipher.decrypt(self.key, self.store.get_bucket(0)))

    def _save(self, labels, values) -> None:
        self.key = self.rng.randbytes(self.cipher.key_bytes)
        self.store.put_bucket(0, self.cipher.encrypt(self.key, self.encode(labels, values)))
        self.count = len(labels)

    def _check_label(self, label: bytes) -> None:
        if not label:
            raise ValueError("label must be non-empty")
        if len(label) > self.label_size_max:
            raise LabelTooLong(f"label is {len(label)} bytes, limit {self.label_size_max}")

    # -- map operations --------------------------------------------------

    def get(self, label) -> bytes | None:
        label = _as_bytes(label)
        self._check_label(label)
        labels, values = self._load()
        i = bisect_left(labels, label)
        hit = values[i] if i < len(labels) and labels[i] == label else None
        self._save(labels, values)
        return hit

    def set(self, label, value) -> None:
        label, value = _as_bytes(label), _as_bytes(value)
        self._check_label(label)
        if len(value) > self.value_size_max:
            raise ValueError(f"value is {len(value)} bytes, limit {self.value_size_max}")
        labels, values = self._load()
        i = bisect_left(labels, label)
        if i < len(labels) and labels[i] == label:
            values[i] = value
        elif len(labels) >= self.capacity:
            self._save(labels, values)
            raise CapacityExceeded(f"table already holds {len(labels)} items")
        else:
            labels.insert(i, label)
            values.insert(i, value)
        self._save(labels, values)

    def delete(self, label) -> bool:
        label = _as_bytes(label)
        self._check_label(label)
        labels, values = self._load()
        i = bisect_left(labels, label)
        hit = i < len(labels) and labels[i] == label
        if hit:
            del labels[i], values[i]
        self._save(labels, values)
        return hit

    def __len__(self) -> int:
        return self.count

    def bytes_per_op(self) -> int:
        return 2 * self.ciphertext_size
