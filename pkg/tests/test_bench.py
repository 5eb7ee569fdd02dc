import csv
import math

import pytest

from vhirb.bench import (ExperimentSpec, first_passage, fmt, level_profile, main,
                         run_cost_compare, run_max_stash, run_overflow, run_utilization)


def brute_first_passage(trace, thr, window):
    out = []
    for s in range(len(trace) - window + 1):
        gap = next((j - s for j in range(s, s + window) if trace[j] > thr), window)
        out.append(gap)
    return sum(out) / len(out), sum(g == window and all(x <= thr for x in trace[s:s + window])
                                    for s, g in enumerate(out)) / len(out)


@pytest.mark.parametrize("seed", range(5))
def test_first_passage_matches_brute_force(seed):
    import random
    rng = random.Random(seed)
    trace = [rng.choice([0, 0, 0, 5, 20, 80]) for _ in range(60)]
    got = first_passage(trace, [0, 10, 50, 100], 30)
    for (mean, cens), thr in zip(got, [0, 10, 50, 100]):
        assert (mean, cens) == pytest.approx(brute_first_passage(trace, thr, 30))


def test_first_passage_monotone_in_threshold():
    spec = ExperimentSpec(kind="overflow", n=[128], trials=2, seed=3,
                          thresholds=[0, 32, 64, 128, 256, 512])
    res = run_overflow(spec)
    means = [r["mean_first_passage"] for r in sorted(res.summary, key=lambda r: r["threshold_bytes"])]
    assert means == sorted(means)


def test_overflow_golden():
    spec = ExperimentSpec(kind="overflow", n=[256], zb=[6], trials=1, seed=7, thresholds=[0, 64, 256])
    res = run_overflow(spec)
    got = [(r["mean_first_passage"], r["censored_fraction"]) for r in res.summary]
    assert got == pytest.approx([(31.43579766536965, 0.0), (31.513618677042803, 0.0),
                                 (135.86770428015564, 0.2607003891050584)])


def test_max_stash_golden():
    tiny = run_max_stash(ExperimentSpec(kind="max-stash", n=[4], zb=[6], trials=1, seed=1))
    assert tiny.rows[0]["max_stash_bytes"] == 0
    small = run_max_stash(ExperimentSpec(kind="max-stash", n=[64], zb=[2], trials=1, seed=1))
    assert (small.rows[0]["max_stash_bytes"], small.rows[0]["nonempty_ops"]) == (195, 34)


def test_max_stash_reference_point():
    res = run_max_stash(ExperimentSpec(kind="max-stash", n=[10_000], zb=[6], trials=3, seed=2))
    ratio = res.summary[0]["max_stash_per_lg_n"]
    assert 0 <= ratio <= 200 * 68


def test_small_ratio_does_not_stabilize():
    res = run_max_stash(ExperimentSpec(kind="max-stash", n=[2**6, 2**8, 2**10], zb=[1],
                                       trials=3, seed=1))
    ratios = [r["max_stash_per_lg_n"] for r in res.summary]
    assert ratios == sorted(ratios) and ratios[-1] > 4 * ratios[0]


def test_utilization_shapes():
    spec = ExperimentSpec(kind="utilization", n=[2**10], zb=[4, 6], t_offset=[0, -1],
                          trials=3, seed=1)
    res = run_utilization(spec)
    for zb in (4, 6):
        for t in (9, 10):
            prof = level_profile(res, 2**10, zb, t)
            assert len(prof) == t + 1
            assert all(0 <= u <= 1 for u in prof)
    # with small buckets the upper half of the tree is fuller than the lower half
    prof = level_profile(res, 2**10, 4, 10)
    assert sum(prof[1:5]) / 4 > sum(prof[6:10]) / 4


def test_determinism_and_csv_format(tmp_path):
    spec = ExperimentSpec(kind="max-stash", n=[32, 64], zb=[3, 6], trials=2, seed=9)
    a = run_max_stash(spec).write(tmp_path / "a")
    b = run_max_stash(spec).write(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    with open(a[1]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "zb", "t", "trials", "max_stash_bytes", "max_stash_per_lg_n",
                       "max_stash_blocks_per_lg_n", "empty_fraction"]
    assert all(c == c.lower() and " " not in c for c in rows[0])


def test_parallel_workers_match_serial():
    base = dict(kind="max-stash", n=[64], zb=[4], trials=4, seed=5)
    assert run_max_stash(ExperimentSpec(**base)).rows == \
        run_max_stash(ExperimentSpec(**base, workers=2)).rows


def test_fmt_six_significant_digits():
    assert fmt(1 / 3) == "0.333333"
    assert fmt(123456789.0) == "1.23457e+08"
    assert fmt(7) == "7" and fmt(True) == "1"


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentSpec(kind="nope")
    with pytest.raises(ValueError):
        ExperimentSpec(kind="overflow", n=[2**21])
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"kind": "cost", "bogus": 1})
    path = tmp_path / "s.toml"
    path.write_text('[experiment]\nkind = "utilization"\nn = 64\nzb = [6]\n')
    spec = ExperimentSpec.load(path)
    assert spec.n == [64] and spec.kind == "utilization"
    with pytest.raises(ValueError):
        ExperimentSpec.load(path, kind="cost")


def test_cost_compare_scaling():
    res = run_cost_compare(ExperimentSpec(kind="cost", n=[2**6, 2**8, 2**10], ops=6, seed=1))
    naive = [r for r in res.rows if r["system"] == "naive"]
    omap = [r for r in res.rows if r["system"] == "omap"]
    for r in res.rows:
        assert r["bytes_per_op"] == r["predicted_bytes_per_op"]
    # the blob grows linearly with capacity
    per_item = [(r["bytes_per_op"] - 2 * 32) / r["n"] for r in naive]
    assert max(per_item) - min(per_item) < 1e-9
    # the oblivious map moves (H + 1)(T + 1) buckets' worth per level pair
    unit = {r["bytes_per_op"] / ((r["h"] + 1) * (r["t"] + 1)) for r in omap}
    assert len(unit) == 1


def test_cli_writes_csv(tmp_path, capsys):
    spec = tmp_path / "spec.toml"
    spec.write_text('n = [32]\nzb = [6]\ntrials = 1\nthresholds = [0, 50]\n')
    assert main(["overflow", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 0
    printed = capsys.readouterr().out.split()
    assert [p.rsplit("/", 1)[-1] for p in printed] == ["overflow.csv", "overflow_summary.csv"]
    assert (tmp_path / "out" / "overflow.csv").read_text().startswith("n,zb,t,trial,window")


@pytest.mark.slow
def test_stash_stays_small_at_desk_scale():
    spec = ExperimentSpec(kind="overflow", n=[2**16], zb=[6], trials=1, seed=11,
                          thresholds=[0, 1024, 4096])
    res = run_overflow(spec)
    assert max(r["max_stash_bytes"] for r in res.summary) <= 4 * 10_000
