"""Oblivious, securely deleting, history-independent key/value map."""

from __future__ import annotations

import base64
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Union

from .crypto import MAX_LABEL_BYTES, label_hash_bits
from .errors import BucketTooSmall, CapacityExceeded
from .hirb import Hirb, node_size
from .store import BucketStore
from .voram import VOram, VoramConfig

Label = Union[str, bytes]

#: bucket-to-node size ratios: proven bound and the empirically sufficient one
THEORETICAL_RATIO = 20
EMPIRICAL_RATIO = 6


@dataclass(frozen=True)
class OmapConfig:
    n_max: int
    mode: str
    T: int
    Z: int
    beta: int
    H: int
    B: int
    R: float | None
    gamma: int = 40
    lam: int = 256
    value_size_max: int = 16
    label_max: int = MAX_LABEL_BYTES

    def voram_config(self) -> VoramConfig:
        return VoramConfig(T=self.T, Z=self.Z, B=self.B, R=self.R, gamma=self.gamma)

    @property
    def stash_limit(self) -> int | None:
        return None if self.R is None else int(self.R * self.B)

    def as_dict(self) -> dict:
        return asdict(self)


def _min_height(n: int, beta: int) -> int:
    H, reach = 1, beta
    while reach < n:
        H += 1
        reach *= beta
    return H


def _node_bytes(beta: int, n: int, T: int, gamma: int, lam: int, value_size_max: int) -> tuple[int, int]:
    H = _min_height(n, beta)
    id_bytes = (2 * T + gamma + 1 + 7) // 8
    hash_bytes = (label_hash_bits(H, beta, gamma, lam) + 7) // 8
    return node_size(beta, id_bytes, hash_bytes, value_size_max), H


def derive_params(n_max: int, Z: int = 4096, gamma: int = 40, lam: int = 256,
                  value_size_max: int = 16, mode: str = "empirical",
                  label_max: int = MAX_LABEL_BYTES) -> OmapConfig:
    """Choose mutually consistent vORAM and HIRB parameters.

    ``theoretical`` mode follows the proven bounds: ``T`` covers
    ``4n + lg n + gamma`` blocks, buckets hold 20 expected-size nodes and
    the stash is capped at ``gamma`` nodes.  ``empirical`` mode uses the
    measured settings: 6 nodes per bucket, ``T = ceil(lg n) - 1`` and an
    unbounded (monitored) stash.
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    if mode == "theoretical":
        T = math.ceil(math.log2(4 * n_max + math.log2(n_max) + gamma))
        ratio = THEORETICAL_RATIO
    elif mode == "empirical":
        T = max(1, math.ceil(math.log2(n_max)) - 1)
        ratio = EMPIRICAL_RATIO
    else:
        raise ValueError(f"unknown mode {mode!r}")

    best = None
    beta = 2
    while True:
        size, H = _node_bytes(beta, n_max, T, gamma, lam, value_size_max)
        # node size grows at least linearly in beta, so this terminates
        if size > Z:
            break
        if ratio * size <= Z:
            best = (beta, size, H)
        beta += 1
    if best is None:
        raise BucketTooSmall(
            f"Z={Z} cannot hold {ratio} nodes of branching factor 2 "
            f"({_node_bytes(2, n_max, T, gamma, lam, value_size_max)[0]} bytes each)")
    beta, B, H = best
    R = float(gamma) if mode == "theoretical" else None
    return OmapConfig(n_max=n_max, mode=mode, T=T, Z=Z, beta=beta, H=H, B=B, R=R,
                      gamma=gamma, lam=lam, value_size_max=value_size_max,
                      label_max=label_max)


def bound_checks(cfg: OmapConfig) -> dict[str, bool]:
    """Re-verify the parameter inequalities of theoretical mode."""
    n = cfg.n_max
    size = lambda b: _node_bytes(b, n, cfg.T, cfg.gamma, cfg.lam, cfg.value_size_max)[0]
    return {
        "height": 2 ** cfg.T >= 4 * n + math.log2(n) + cfg.gamma,
        "beta_fits": cfg.Z >= THEORETICAL_RATIO * size(cfg.beta),
        "beta_maximal": cfg.Z < THEORETICAL_RATIO * size(cfg.beta + 1),
        "stash": cfg.stash_limit is not None and cfg.stash_limit >= cfg.gamma * cfg.B,
        "hirb_height": cfg.beta ** cfg.H >= n,
    }


def _as_bytes(x: Label) -> bytes:
    return x.encode() if isinstance(x, str) else bytes(x)


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode()


class ObliviousMap:
    """Map facade over a HIRB stored in a vORAM.

    Every call to :meth:`get`, :meth:`set` and :meth:`delete` issues the
    same number of bucket reads and writes regardless of the label or
    whether it is present.
    """

    STATE_MAGIC = b"VHIRB-STATE-1\n"

    def __init__(self, config: OmapConfig, voram: VOram, hirb: Hirb, count: int = 0):
        self.config = config
        self.voram = voram
        self.hirb = hirb
        self.count = count

    @classmethod
    def create(cls, config: OmapConfig, store: BucketStore, *,
               rng: random.Random | None = None, cipher=None,
               experiment: bool = False) -> "ObliviousMap":
        voram = VOram(config.voram_config(), store, rng=rng, cipher=cipher,
                      experiment=experiment)
        voram.initialize()
        hirb = Hirb(voram, config.H, config.beta, value_size_max=config.value_size_max,
                    lam=config.lam, label_max=config.label_max)
        hirb.init()
        return cls(config, voram, hirb)

    @property
    def store(self) -> BucketStore:
        return self.voram.store

    def __len__(self) -> int:
        return self.count

    def get(self, label: Label) -> bytes | None:
        return self.hirb.get(_as_bytes(label))

    def set(self, label: Label, value: Label) -> None:
        label, value = _as_bytes(label), _as_bytes(value)
        room = self.count < self.config.n_max
        present = self.hirb.set(label, value, allow_insert=room)
        if not present:
            if not room:
                raise CapacityExceeded(f"map already holds {self.count} items")
            self.count += 1

    def delete(self, label: Label) -> bool:
        removed = self.hirb.delete(_as_bytes(label))
        if removed:
            self.count -= 1
        return removed

    def accesses_per_op(self) -> int:
        return 2 * (self.config.H + 1)

    def bytes_per_op(self) -> int:
        """Bytes moved per map operation, fixed by the access pattern."""
        return self.accesses_per_op() * 2 * (self.config.T + 1) * self.voram.ciphertext_size

    # -- erasable state --------------------------------------------------

    def export_state(self) -> bytes:
        """Serialize the erasable client state.

        Whoever holds this blob and the bucket store can read the map, and
        deleted data stays recoverable for as long as an old blob exists.
        Keep it only on storage you can truly erase.
        """
        v = self.voram
        doc = {
            "config": self.config.as_dict(),
            "rootkey": _b64(v.rootkey),
            "salt": _b64(self.hirb.salt),
            "root": self.hirb.root,
            "count": self.count,
            "stash": {str(k): _b64(d) for k, d in v.stash.items()},
            "max_stash": v.max_stash,
        }
        return self.STATE_MAGIC + json.dumps(doc, sort_keys=True).encode()

    @classmethod
    def restore(cls, blob: bytes, store: BucketStore, *,
                rng: random.Random | None = None, cipher=None) -> "ObliviousMap":
        if not blob.startswith(cls.STATE_MAGIC):
            raise ValueError("not an exported map state")
        doc = json.loads(blob[len(cls.STATE_MAGIC):])
        config = OmapConfig(**doc["config"])
        voram = VOram(config.voram_config(), store, rng=rng, cipher=cipher)
        voram.rootkey = base64.b64decode(doc["rootkey"])
        voram.stash = {int(k): base64.b64decode(d) for k, d in doc["stash"].items()}
        voram.max_stash = doc.get("max_stash", 0)
        hirb = Hirb(voram, config.H, config.beta, value_size_max=config.value_size_max,
                    lam=config.lam, label_max=config.label_max,
                    salt=base64.b64decode(doc["salt"]), root=doc["root"])
        return cls(config, voram, hirb, doc["count"])
