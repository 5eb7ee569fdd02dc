"""Command-line front end for the oblivious map and the blob server.

The erasable client state (root key, salt, stash, item count) is sealed
into the ``--state`` file between invocations.  Anyone who can read that
file and the bucket store can read the map, and deletions are only final
once every older copy of the file is gone, so keep it on storage you
trust and can erase.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
from pathlib import Path

from .errors import VhirbError
from .omap import ObliviousMap, derive_params
from .store import MemoryStore, open_backend

CLI_MAGIC = "vhirb-cli-state-1"
_MEM_HEADER = struct.Struct(">BI")


def _mem_path(state: Path) -> Path:
    return state.with_name(state.name + ".buckets")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_memory(store: MemoryStore, path: Path) -> None:
    buckets = store.snapshot()
    body = _MEM_HEADER.pack(store.T, store.ciphertext_size) + b"".join(buckets)
    _atomic_write(path, body)


def load_memory(path: Path) -> MemoryStore:
    raw = path.read_bytes()
    T, size = _MEM_HEADER.unpack_from(raw)
    store = MemoryStore()
    store.init(T, size)
    body = raw[_MEM_HEADER.size:]
    if len(body) != size * ((1 << (T + 1)) - 1):
        raise ValueError(f"{path} is truncated")
    for i in range(len(body) // size):
        store._write(i, body[i * size:(i + 1) * size])
    return store


class Session:
    """An opened map plus what is needed to seal it again."""

    def __init__(self, state_path: Path, backend: str, omap: ObliviousMap, totals: dict):
        self.state_path = state_path
        self.backend = backend
        self.omap = omap
        self.totals = totals
        self._start = omap.store.stats.copy()

    @classmethod
    def open(cls, state_path: Path) -> "Session":
        try:
            doc = json.loads(state_path.read_text())
        except FileNotFoundError:
            raise SystemExit(f"no map state at {state_path}; run 'omap init' first")
        if doc.get("magic") != CLI_MAGIC:
            raise SystemExit(f"{state_path} is not an omap state file")
        backend = doc["backend"]
        store = load_memory(_mem_path(state_path)) if backend == "mem" else open_backend(backend)
        omap = ObliviousMap.restore(doc["map"].encode(), store)
        return cls(state_path, backend, omap, doc.get("stats", {}))

    def seal(self) -> None:
        store = self.omap.store
        store.flush()
        delta = (store.stats - self._start).as_dict()
        totals = {k: self.totals.get(k, 0) + v for k, v in delta.items()}
        if self.backend == "mem":
            save_memory(store, _mem_path(self.state_path))
        doc = {"magic": CLI_MAGIC, "backend": self.backend,
               "map": self.omap.export_state().decode(), "stats": totals}
        _atomic_write(self.state_path, json.dumps(doc, sort_keys=True).encode())
        self.totals = totals
        self._start = store.stats.copy()
        store.close()


def _show(value: bytes) -> str:
    try:
        return value.decode()
    except UnicodeDecodeError:
        return "0x" + value.hex()


def cmd_init(args) -> int:
    backend = f"remote:{args.remote}" if args.remote else args.backend
    cfg = derive_params(args.n, Z=args.bucket, value_size_max=args.value_size, mode=args.mode)
    store = MemoryStore() if backend == "mem" else open_backend(backend)
    omap = ObliviousMap.create(cfg, store)
    session = Session(args.state, backend, omap, {})
    session.seal()
    print(f"initialized {cfg.mode} map: n_max={cfg.n_max} T={cfg.T} Z={cfg.Z} "
          f"beta={cfg.beta} H={cfg.H} on {backend}")
    return 0


def cmd_set(args) -> int:
    s = Session.open(args.state)
    try:
        s.omap.set(args.key, args.value)
    finally:
        s.seal()
    return 0


def cmd_get(args) -> int:
    s = Session.open(args.state)
    try:
        value = s.omap.get(args.key)
    finally:
        s.seal()
    if value is None:
        print(f"{args.key}: not found", file=sys.stderr)
        return 1
    print(_show(value))
    return 0


def cmd_del(args) -> int:
    s = Session.open(args.state)
    try:
        removed = s.omap.delete(args.key)
    finally:
        s.seal()
    if not removed:
        print(f"{args.key}: not found", file=sys.stderr)
        return 1
    return 0


def cmd_stats(args) -> int:
    s = Session.open(args.state)
    cfg = s.omap.config
    report = {"config": cfg.as_dict(), "backend": s.backend, "items": len(s.omap),
              "store": s.totals, "ciphertext_size": s.omap.voram.ciphertext_size,
              "bytes_per_op": s.omap.bytes_per_op(),
              "accesses_per_op": s.omap.accesses_per_op(),
              "max_stash_bytes": s.omap.voram.max_stash}
    s.omap.store.close()
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    serve(args.listen, args.dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omap", description="Oblivious key/value map.")
    p.add_argument("--state", type=Path, default=Path("omap.state"),
                   help="file holding the sealed client state (default: omap.state)")
    sub = p.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="create an empty map")
    init.add_argument("--n", type=int, default=65536, help="item capacity")
    init.add_argument("--bucket", type=int, default=4096, help="bucket size in bytes")
    init.add_argument("--backend", default="mem",
                      help="mem, dir:PATH or remote:HOST:PORT (default: mem)")
    init.add_argument("--remote", metavar="HOST:PORT", help="shorthand for --backend remote:HOST:PORT")
    init.add_argument("--mode", choices=("empirical", "theoretical"), default="empirical")
    init.add_argument("--value-size", type=int, default=16, help="largest value in bytes")
    init.set_defaults(func=cmd_init)

    s = sub.add_parser("set", help="store a value")
    s.add_argument("key")
    s.add_argument("value")
    s.set_defaults(func=cmd_set)

    g = sub.add_parser("get", help="print a value")
    g.add_argument("key")
    g.set_defaults(func=cmd_get)

    d = sub.add_parser("del", help="delete a key")
    d.add_argument("key")
    d.set_defaults(func=cmd_del)

    st = sub.add_parser("stats", help="print configuration and traffic counters")
    st.set_defaults(func=cmd_stats)

    srv = sub.add_parser("serve", help="run the blob server")
    srv.add_argument("--listen", default="127.0.0.1:7700", help="HOST:PORT to bind")
    srv.add_argument("--dir", required=True, help="directory holding the buckets")
    srv.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (VhirbError, ValueError, OSError) as exc:
        print(f"omap: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
