"""Seeded stash, utilization and bandwidth experiments with CSV output.

Usage::

    bench {max-stash|overflow|utilization|cost} --spec FILE.toml --out DIR

The TOML file holds the fields of :class:`ExperimentSpec`, either at the
top level or under an ``[experiment]`` table.
"""

from __future__ import annotations

import argparse
import csv
import math
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .crypto import AeadCipher
from .naive import NaiveMap
from .omap import ObliviousMap, derive_params
from .sim import SimVoram, geometric_size
from .store import BufferedStore, open_backend

KINDS = ("max-stash", "overflow", "utilization", "cost")
MAX_N = 1 << 20


@dataclass
class ExperimentSpec:
    kind: str
    n: list[int] = field(default_factory=lambda: [1 << 10])
    zb: list[float] = field(default_factory=lambda: [6.0])
    trials: int = 10
    seed: int = 0
    #: T = ceil(lg n) + offset, one run per offset
    t_offset: list[int] = field(default_factory=lambda: [0])
    block_mean: float = 68.0
    gamma: int = 40
    # overflow
    ops_factor: int = 2
    thresholds: list[int] = field(default_factory=lambda: [0, 64, 128, 256, 512, 1024])
    # cost
    bucket: int = 4096
    value_size: int = 16
    label_size: int = 20
    ops: int = 20
    backend: str = "mem"
    mode: str = "empirical"
    parallelism: int = 8
    buffered: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {', '.join(KINDS)}")
        if not self.n or any(not 2 <= n <= MAX_N for n in self.n):
            raise ValueError(f"every n must be in 2..{MAX_N}")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        doc = dict(doc.get("experiment", doc))
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {', '.join(sorted(unknown))}")
        for key in ("n", "zb", "t_offset", "thresholds"):
            if key in doc and not isinstance(doc[key], list):
                doc[key] = [doc[key]]
        return cls(**doc)

    @classmethod
    def load(cls, path, kind: str | None = None) -> "ExperimentSpec":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        doc = dict(doc.get("experiment", doc))
        if kind is not None:
            doc.setdefault("kind", kind)
            if doc["kind"] != kind:
                raise ValueError(f"spec is for {doc['kind']!r}, not {kind!r}")
        return cls.from_dict(doc)


@dataclass
class ExperimentResult:
    """Per-trial ``rows`` and per-point ``summary`` tables."""

    spec: ExperimentSpec
    rows: list[dict]
    summary: list[dict]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.spec.kind.replace("-", "_")
        paths = [out / f"{stem}.csv", out / f"{stem}_summary.csv"]
        write_csv(paths[0], self.rows)
        write_csv(paths[1], self.summary)
        return paths


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0])
        writer.writerow(cols)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in cols])


def tree_height(n: int, offset: int = 0) -> int:
    return max(1, math.ceil(math.log2(n)) + offset)


def trial_rng(spec: ExperimentSpec, *key) -> random.Random:
    return random.Random(":".join(map(str, (spec.seed, spec.kind) + key)))


def _run(fn, jobs: list[tuple], workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _bucket_bytes(spec: ExperimentSpec, zb: float) -> int:
    return int(round(zb * spec.block_mean))


# ---------------------------------------------------------------------------
# max stash


def _max_stash_trial(spec: ExperimentSpec, n: int, zb: float, offset: int, trial: int) -> dict:
    rng = trial_rng(spec, n, zb, offset, trial)
    T = tree_height(n, offset)
    sim = SimVoram(T, _bucket_bytes(spec, zb), gamma=spec.gamma, rng=rng)
    nonempty = 0
    for _ in range(n):
        _, stash = sim.insert(geometric_size(rng, spec.block_mean))
        nonempty += stash > 0
    return {"n": n, "zb": float(zb), "t": T, "trial": trial, "ops": n,
            "max_stash_bytes": sim.max_stash, "nonempty_ops": nonempty}


def run_max_stash(spec: ExperimentSpec) -> ExperimentResult:
    """Largest stash seen over ``n`` inserts, per ``(n, Z/B, T)`` point."""
    jobs = [(spec, n, zb, off, k) for n in spec.n for zb in spec.zb
            for off in spec.t_offset for k in range(spec.trials)]
    rows = _run(_max_stash_trial, jobs, spec.workers)
    summary = []
    for n in spec.n:
        for zb in spec.zb:
            for off in spec.t_offset:
                pts = [r for r in rows if r["n"] == n and r["zb"] == zb
                       and r["t"] == tree_height(n, off)]
                worst = max(r["max_stash_bytes"] for r in pts)
                ops = sum(r["ops"] for r in pts)
                lg = math.log2(n)
                summary.append({
                    "n": n, "zb": float(zb), "t": tree_height(n, off), "trials": len(pts),
                    "max_stash_bytes": worst,
                    "max_stash_per_lg_n": worst / lg,
                    "max_stash_blocks_per_lg_n": worst / spec.block_mean / lg,
                    "empty_fraction": 1 - sum(r["nonempty_ops"] for r in pts) / ops,
                })
    return ExperimentResult(spec, rows, summary)


# ---------------------------------------------------------------------------
# overflow first passage


def first_passage(trace: list[int], thresholds: list[int], window: int) -> list[tuple[float, float]]:
    """Mean ops until the stash first exceeds each threshold.

    Windows of ``window`` ops start at every offset that leaves a full
    window.  A window that never exceeds the threshold counts as
    ``window`` ops and is reported in the censored fraction.
    """
    n_windows = len(trace) - window + 1
    if n_windows < 1:
        raise ValueError("trace shorter than one window")
    out = []
    for thr in thresholds:
        total = censored = 0
        nxt = len(trace)
        # scan right to left keeping the next op at which stash > thr
        for s in range(len(trace) - 1, -1, -1):
            if trace[s] > thr:
                nxt = s
            if s < n_windows:
                gap = nxt - s
                if gap >= window:
                    gap = window
                    censored += 1
                total += gap
        out.append((total / n_windows, censored / n_windows))
    return out


def _overflow_trial(spec: ExperimentSpec, n: int, zb: float, offset: int, trial: int) -> list[dict]:
    rng = trial_rng(spec, n, zb, offset, trial)
    T = tree_height(n, offset)
    sim = SimVoram(T, _bucket_bytes(spec, zb), gamma=spec.gamma, rng=rng)
    trace, ids = [], []
    for _ in range(n):
        ident, stash = sim.insert(geometric_size(rng, spec.block_mean))
        ids.append(ident)
        trace.append(stash)
    for _ in range(max(0, spec.ops_factor - 1) * n):
        trace.append(sim.access(ids[rng.randrange(n)]))
    window = len(trace) // 2 if spec.ops_factor > 1 else len(trace)
    rows = []
    for thr, (mean, cens) in zip(spec.thresholds, first_passage(trace, spec.thresholds, window)):
        rows.append({"n": n, "zb": float(zb), "t": T, "trial": trial, "window": window,
                     "threshold_bytes": thr, "mean_first_passage": mean,
                     "censored_fraction": cens, "max_stash_bytes": max(trace)})
    return rows


def run_overflow(spec: ExperimentSpec) -> ExperimentResult:
    """Sliding-window mean ops before the stash first passes each threshold."""
    jobs = [(spec, n, zb, off, k) for n in spec.n for zb in spec.zb
            for off in spec.t_offset for k in range(spec.trials)]
    rows = [r for chunk in _run(_overflow_trial, jobs, spec.workers) for r in chunk]
    summary = []
    keys = sorted({(r["n"], r["zb"], r["t"], r["threshold_bytes"]) for r in rows})
    for n, zb, t, thr in keys:
        pts = [r for r in rows if (r["n"], r["zb"], r["t"], r["threshold_bytes"]) == (n, zb, t, thr)]
        summary.append({
            "n": n, "zb": zb, "t": t, "threshold_bytes": thr, "trials": len(pts),
            "mean_first_passage": sum(r["mean_first_passage"] for r in pts) / len(pts),
            "censored_fraction": sum(r["censored_fraction"] for r in pts) / len(pts),
            "max_stash_bytes": max(r["max_stash_bytes"] for r in pts),
        })
    return ExperimentResult(spec, rows, summary)


# ---------------------------------------------------------------------------
# utilization


def _utilization_trial(spec: ExperimentSpec, n: int, zb: float, offset: int, trial: int) -> list[dict]:
    rng = trial_rng(spec, n, zb, offset, trial)
    T = tree_height(n, offset)
    sim = SimVoram(T, _bucket_bytes(spec, zb), gamma=spec.gamma, rng=rng)
    for _ in range(n):
        sim.insert(geometric_size(rng, spec.block_mean))
    return [{"n": n, "zb": float(zb), "t": T, "trial": trial, "level": lvl, "utilization": u}
            for lvl, u in enumerate(sim.utilization())]


def run_utilization(spec: ExperimentSpec) -> ExperimentResult:
    """Per-level fill fraction after ``n`` inserts, averaged over trials."""
    jobs = [(spec, n, zb, off, k) for n in spec.n for zb in spec.zb
            for off in spec.t_offset for k in range(spec.trials)]
    rows = [r for chunk in _run(_utilization_trial, jobs, spec.workers) for r in chunk]
    acc: dict[tuple, list[float]] = {}
    for r in rows:
        acc.setdefault((r["n"], r["zb"], r["t"], r["level"]), []).append(r["utilization"])
    summary = [{"n": n, "zb": zb, "t": t, "level": lvl, "trials": len(us),
                "mean_utilization": sum(us) / len(us)}
               for (n, zb, t, lvl), us in acc.items()]
    return ExperimentResult(spec, rows, summary)


def level_profile(result: ExperimentResult, n: int, zb: float, t: int) -> list[float]:
    pts = sorted((r["level"], r["mean_utilization"]) for r in result.summary
                 if r["n"] == n and r["zb"] == zb and r["t"] == t)
    return [u for _, u in pts]


# ---------------------------------------------------------------------------
# bandwidth comparison


def _random_ops(rng: random.Random, count: int, label_size: int, value_size: int, universe: int):
    for _ in range(count):
        label = str(rng.randrange(universe)).encode().rjust(min(label_size, 8), b"0")
        r = rng.random()
        if r < 0.5:
            yield "set", label, rng.randbytes(rng.randint(1, value_size))
        elif r < 0.8:
            yield "get", label, None
        else:
            yield "del", label, None


def _apply(m, op, label, value):
    if op == "set":
        m.set(label, value)
    elif op == "get":
        m.get(label)
    else:
        m.delete(label)


def _backend(spec: ExperimentSpec, tag: str, n: int, parallelism: int):
    backend = spec.backend
    if backend.startswith("dir:"):
        backend = f"{backend}/{tag}-{n}"
    store = open_backend(backend, parallelism=parallelism)
    return BufferedStore(store) if spec.buffered and tag == "omap" else store


def run_cost_compare(spec: ExperimentSpec) -> ExperimentResult:
    """Measured bytes and round trips per operation, oblivious map vs blob."""
    rows = []
    for n in spec.n:
        rng = trial_rng(spec, n)
        ops = list(_random_ops(rng, spec.ops, spec.label_size, spec.value_size, n))
        cfg = derive_params(n, Z=spec.bucket, gamma=spec.gamma,
                            value_size_max=spec.value_size, mode=spec.mode)

        store = _backend(spec, "omap", n, spec.parallelism)
        omap = ObliviousMap.create(cfg, store, rng=trial_rng(spec, n, "omap"),
                                   cipher=AeadCipher(rng))
        # with a client-side buffer only the inner store's traffic crosses the link
        wire = store.inner if isinstance(store, BufferedStore) else store
        before = wire.stats.copy()
        for op in ops:
            _apply(omap, *op)
        store.flush()
        delta = wire.stats - before
        rows.append({"n": n, "system": "omap", "t": cfg.T, "h": cfg.H, "beta": cfg.beta,
                     "bytes_per_op": delta.total_bytes() / len(ops),
                     "round_trips_per_op": delta.round_trips / len(ops),
                     "predicted_bytes_per_op": float(omap.bytes_per_op())})
        store.close()

        store = _backend(spec, "naive", n, 1)
        naive = NaiveMap(n, store, label_size_max=spec.label_size,
                         value_size_max=spec.value_size, rng=trial_rng(spec, n, "naive"))
        naive.initialize()
        before = store.stats.copy()
        for op in ops:
            _apply(naive, *op)
        delta = store.stats - before
        rows.append({"n": n, "system": "naive", "t": 0, "h": 0, "beta": 0,
                     "bytes_per_op": delta.total_bytes() / len(ops),
                     "round_trips_per_op": delta.round_trips / len(ops),
                     "predicted_bytes_per_op": float(naive.bytes_per_op())})
        store.close()

    crossover = None
    for n in sorted(spec.n):
        o = next(r for r in rows if r["n"] == n and r["system"] == "omap")
        b = next(r for r in rows if r["n"] == n and r["system"] == "naive")
        if o["bytes_per_op"] < b["bytes_per_op"]:
            crossover = n
            break
    summary = [{"crossover_n": crossover if crossover is not None else 0,
                "found": crossover is not None,
                "n_min": min(spec.n), "n_max": max(spec.n)}]
    return ExperimentResult(spec, rows, summary)


RUNNERS = {
    "max-stash": run_max_stash,
    "overflow": run_overflow,
    "utilization": run_utilization,
    "cost": run_cost_compare,
}


def run(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.kind](spec)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--spec", required=True, help="TOML experiment description")
    parser.add_argument("--out", required=True, help="output directory for CSV files")
    args = parser.parse_args(argv)
    try:
        spec = ExperimentSpec.load(args.spec, args.kind)
    except (OSError, ValueError, TypeError, tomllib.TOMLDecodeError) as exc:
        parser.error(str(exc))
    result = run(spec)
    for path in result.write(args.out):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
