"""History-independent randomized B-tree stored one node per vORAM block.

Every item sits at a height chosen by pseudorandom coins derived from its
label hash, so the shape of the tree depends only on the set of stored
labels.  Levels are counted from the root (level 0) down to the leaves
(level ``H``); an item of height ``h`` lives at level ``H - h`` and
every node below it on its search path is split around its hash.

Node layout inside a block::

    k u16 | children[k] ids | hashes[k-1] | values[k-1] as (u16 len, bytes)

Leaf children are stored as all-zero identifiers.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .crypto import hash_label, height_coins, label_hash_bits, MAX_LABEL_BYTES
from .errors import ParseError
from .voram import VOram, id_from_bytes, id_to_bytes

_U16 = struct.Struct(">H")
MAX_VALUE_BYTES = 0xFFFF


def node_size(k: int, id_bytes: int, hash_bytes: int, value_bytes: int) -> int:
    """Serialized size of a node with branching factor ``k``."""
    return 2 + k * id_bytes + (k - 1) * (hash_bytes + 2 + value_bytes)


def item_height(h: bytes, H: int, beta: int) -> int:
    """Number of leading zero coins: a truncated geometric on ``0..H``."""
    height = 0
    for coin in height_coins(h, H, beta):
        if coin:
            break
        height += 1
    return height


@dataclass
class HirbNode:
    children: list = field(default_factory=lambda: [None])
    hashes: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.children)


@dataclass
class PathStep:
    """One level of a search path, handed to the caller for mutation.

    ``v1`` is ``None`` until the searched hash has been found; afterwards
    ``v0`` and ``v1`` are the two nodes on either side of it.  Setting a
    missing ``v1`` inserts a node and clearing it deletes one.
    """

    level: int
    v0: HirbNode
    v1: HirbNode | None
    cid1: int | None


class Hirb:
    def __init__(self, voram: VOram, H: int, beta: int, *,
                 value_size_max: int = 16, lam: int = 256,
                 label_max: int = MAX_LABEL_BYTES,
                 salt: bytes | None = None, root: int | None = None):
        if beta < 2:
            raise ValueError("beta must be at least 2")
        if H < 1:
            raise ValueError("H must be at least 1")
        if not 0 < value_size_max <= MAX_VALUE_BYTES:
            raise ValueError(f"value_size_max must be in 1..{MAX_VALUE_BYTES}")
        self.voram = voram
        self.H = H
        self.beta = beta
        self.value_size_max = value_size_max
        self.label_max = label_max
        self.hash_bits = label_hash_bits(H, beta, voram.config.gamma, lam)
        self.hash_bytes = (self.hash_bits + 7) // 8
        self.salt = salt
        self.root = root

    # -- setup -----------------------------------------------------------

    def init(self) -> int:
        """Create the empty tree: a chain of ``H + 1`` one-ary nodes."""
        self.salt = self.voram.rng.randbytes(32)
        root = None
        for _ in range(self.H + 1):
            root = self.voram.insert(self.encode(HirbNode(children=[root])))
        self.root = root
        return root

    # -- hashing ---------------------------------------------------------

    def hash(self, label: bytes) -> bytes:
        return hash_label(self.salt, label, self.hash_bits, self.label_max)

    def height_of_hash(self, h: bytes) -> int:
        return item_height(h, self.H, self.beta)

    def chooseheight(self, label: bytes) -> int:
        return self.height_of_hash(self.hash(label))

    # -- node codec ------------------------------------------------------

    def encode(self, node: HirbNode) -> bytes:
        cfg = self.voram.config
        nil = bytes(cfg.id_bytes)
        parts = [_U16.pack(node.k)]
        parts.extend(nil if c is None else id_to_bytes(c, cfg) for c in node.children)
        parts.extend(node.hashes)
        for v in node.values:
            parts.append(_U16.pack(len(v)))
            parts.append(v)
        return b"".join(parts)

    def decode(self, raw: bytes) -> HirbNode:
        cfg = self.voram.config
        ib, hb = cfg.id_bytes, self.hash_bytes
        try:
            (k,) = _U16.unpack_from(raw, 0)
            pos = 2
            children = []
            for _ in range(k):
                chunk = raw[pos:pos + ib]
                children.append(id_from_bytes(chunk, cfg) if any(chunk) else None)
                pos += ib
            hashes = [raw[pos + j * hb:pos + (j + 1) * hb] for j in range(k - 1)]
            pos += (k - 1) * hb
            values = []
            for _ in range(k - 1):
                (n,) = _U16.unpack_from(raw, pos)
                values.append(raw[pos + 2:pos + 2 + n])
                pos += 2 + n
        except struct.error as exc:
            raise ParseError("truncated HIRB node") from exc
        if k < 1 or pos != len(raw):
            raise ParseError("malformed HIRB node")
        return HirbNode(children, hashes, values)

    # -- traversal -------------------------------------------------------

    def path(self, h: bytes) -> Iterator[PathStep]:
        """Walk the search path of ``h``, two vORAM accesses per level.

        Child identifiers are generated before the children are fetched:
        each parent is written back pointing at ids its children will be
        re-inserted under one level later.
        """
        M = self.voram
        id0, id0_new = self.root, M.idgen()
        self.root = id0_new
        id1, id1_new = M.idgen(), M.idgen()
        found = False
        for level in range(self.H + 1):
            M.evict(id0)
            M.evict(id1)
            if level == self.H:
                c0_new = c1_new = None
            else:
                c0_new, c1_new = M.idgen(), M.idgen()
            v0 = self.decode(M.take(id0))
            if found:
                v1 = self.decode(M.take(id1))
                cid0, v0.children[-1] = v0.children[-1], c0_new
                cid1, v1.children[0] = v1.children[0], c1_new
            else:
                v1 = None
                i = bisect_left(v0.hashes, h)
                cid0, v0.children[i] = v0.children[i], c0_new
                if i < len(v0.hashes) and v0.hashes[i] == h:
                    found = True
                    cid1, v0.children[i + 1] = v0.children[i + 1], c1_new
                else:
                    cid1 = M.idgen()
            step = PathStep(level, v0, v1, c1_new)
            yield step
            M.place(id0_new, self.encode(step.v0))
            if step.v1 is not None:
                M.place(id1_new, self.encode(step.v1))
            M.writeback(id0)
            M.writeback(id1)
            id0, id0_new = cid0, c0_new
            id1, id1_new = cid1, c1_new

    # -- operations ------------------------------------------------------

    def _check_value(self, value: bytes) -> None:
        if len(value) > self.value_size_max:
            raise ValueError(
                f"value is {len(value)} bytes, limit {self.value_size_max}")

    def update(self, label: bytes, callback: Callable[[bytes], bytes]) -> bool:
        """Apply ``callback`` to the stored value; True if the label exists."""
        h = self.hash(label)
        hit = False
        for step in self.path(h):
            v0 = step.v0
            i = bisect_left(v0.hashes, h)
            if i < len(v0.hashes) and v0.hashes[i] == h:
                new = callback(v0.values[i])
                self._check_value(new)
                v0.values[i] = new
                hit = True
        return hit

    def get(self, label: bytes) -> bytes | None:
        found = []
        self.update(label, lambda v: found.append(v) or v)
        return found[0] if found else None

    def set(self, label: bytes, value: bytes, *, allow_insert: bool = True) -> bool:
        """Store ``value``; returns True if ``label`` was already present.

        With ``allow_insert=False`` a missing label is left absent, but
        the traversal is identical.
        """
        self._check_value(value)
        h = self.hash(label)
        depth = self.H - self.height_of_hash(h)
        present = False
        for step in self.path(h):
            v0 = step.v0
            i = bisect_left(v0.hashes, h)
            if i < len(v0.hashes) and v0.hashes[i] == h:
                v0.values[i] = value
                present = True
            elif present or not allow_insert:
                continue
            elif step.level == depth:
                v0.hashes.insert(i, h)
                v0.values.insert(i, value)
                v0.children.insert(i + 1, step.cid1)
            elif step.level > depth and step.v1 is None:
                step.v1 = HirbNode(children=[step.cid1] + v0.children[i + 1:],
                                   hashes=v0.hashes[i:], values=v0.values[i:])
                del v0.children[i + 1:], v0.hashes[i:], v0.values[i:]
        return present

    def delete(self, label: bytes) -> bool:
        """Remove ``label``; returns True if it was present."""
        h = self.hash(label)
        depth = self.H - self.height_of_hash(h)
        removed = False
        for step in self.path(h):
            v0, v1 = step.v0, step.v1
            i = bisect_left(v0.hashes, h)
            if i < len(v0.hashes) and v0.hashes[i] == h:
                del v0.hashes[i], v0.values[i], v0.children[i + 1]
                removed = True
            elif step.level > depth and v1 is not None:
                v0.hashes.extend(v1.hashes)
                v0.values.extend(v1.values)
                v0.children.extend(v1.children[1:])
                step.v1 = None
        return removed

    # -- inspection ------------------------------------------------------

    def walk(self) -> Iterator[tuple[int, HirbNode]]:
        """Depth-first pre-order over ``(level, node)`` using read-only peeks."""
        stack = [(0, self.root)]
        while stack:
            level, ident = stack.pop()
            node = self.decode(self.voram.peek(ident))
            yield level, node
            if level < self.H:
                stack.extend((level + 1, c) for c in reversed(node.children))

    def node_count(self) -> int:
        return sum(1 for _ in self.walk())

    def items(self) -> list[tuple[bytes, bytes]]:
        """All ``(hash, value)`` pairs in hash order."""
        out = [(h, v) for _, node in self.walk() for h, v in zip(node.hashes, node.values)]
        return sorted(out)

    def dump(self) -> bytes:
        """Canonical serialization of the tree with identifiers left out."""
        parts = []
        for level, node in self.walk():
            parts.append(bytes([level]) + _U16.pack(node.k))
            parts.extend(node.hashes)
            for v in node.values:
                parts.append(_U16.pack(len(v)) + v)
        return b"".join(parts)
