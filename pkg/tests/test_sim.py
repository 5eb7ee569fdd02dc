import random
import statistics

from hypothesis import given, settings, strategies as st

from vhirb.sim import SimVoram, geometric_size


def test_geometric_size_law():
    rng = random.Random(0)
    xs = [geometric_size(rng, 68) for _ in range(50000)]
    assert min(xs) >= 1
    assert abs(statistics.fmean(xs) - 68) < 1.5
    # memoryless tail: P(X > 68) = (1 - 1/68)^68
    tail = sum(x > 68 for x in xs) / len(xs)
    assert abs(tail - (1 - 1 / 68) ** 68) < 0.01
    assert geometric_size(rng, 1) == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31), st.integers(1, 80))
def test_bytes_are_conserved(T, seed, inserts):
    rng = random.Random(seed)
    sim = SimVoram(T, 200, rng=rng)
    sizes = {}
    for _ in range(inserts):
        n = geometric_size(rng, 40)
        ident, _ = sim.insert(n)
        sizes[ident] = n
    for _ in range(inserts):
        sim.access(rng.choice(list(sizes)))
    for ident, n in sizes.items():
        assert sim.total_bytes(ident) == n
    assert all(0 <= u <= 1 for u in sim.utilization())
    used = sum(sim.level_usage()) - sim.meta * sum(len(b) for b in sim.buckets)
    assert used + sim.stash_bytes == sum(sizes.values())


def test_seed_determinism():
    def run(seed):
        rng = random.Random(seed)
        sim = SimVoram(6, 408, rng=rng)
        return [sim.insert(geometric_size(rng, 68))[1] for _ in range(300)], sim.utilization()
    assert run(4) == run(4)
    assert run(4) != run(5)
