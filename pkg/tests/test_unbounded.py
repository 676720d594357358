import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpmean.core import Dataset, NoiseSource
from pdpmean.errors import BudgetOutsideDomain, EmptyShrunk, InvalidBounds
from pdpmean.mean import lower_bound
from pdpmean.unbounded import (
    count_offset,
    partition,
    pdp_mean_unbounded,
    shrink,
    shrink_from_draws,
    truncated_noisy_count,
    wor_sample,
)

LEVELS = np.array([0.1, 0.4, 1.0])


def zero():
    return NoiseSource(0, mode="zero-noise")


def test_partition_examples():
    p = partition(0.1, 1.0)
    assert p.n_buckets == 4
    assert p.intervals == pytest.approx([(0.1, 0.2), (0.2, 0.4), (0.4, 0.8), (0.8, 1.0)])
    assert partition(0.5, 0.5).intervals == [(0.5, 0.5)]
    with pytest.raises(InvalidBounds):
        partition(1.0, 0.5)


def test_partition_exact_powers_of_two():
    assert partition(0.125, 1.0).n_buckets == 4
    assert list(partition(0.125, 1.0).assign([1.0])) == [3]


@settings(max_examples=200)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 1.0), st.data())
def test_every_budget_lands_in_exactly_one_bucket(lo, frac, data):
    hi = lo + frac * (1.0 - lo)
    p = partition(lo, hi)
    assert p.lefts[0] == lo and p.lefts[-1] <= hi < 2 * p.lefts[-1]
    assert np.all(p.lefts[1:] == 2 * p.lefts[:-1])
    eps = data.draw(st.lists(st.floats(lo, hi), min_size=1, max_size=30))
    idx = p.assign(eps)
    for e, j in zip(eps, idx):
        a, b = p.intervals[j]
        assert a <= e and (e < b or (j == p.n_buckets - 1 and e <= b))
    assert np.all(p.lefts[idx] <= np.asarray(eps))


def test_assign_rejects_outside_domain():
    with pytest.raises(BudgetOutsideDomain):
        partition(0.1, 1.0).assign([0.05])


def test_truncated_count_examples():
    assert count_offset(0.5, 1, 0.1) == pytest.approx(4 * math.log(20))
    assert truncated_noisy_count(50, 0.5, 1, 0.1, zero()) == 38
    assert truncated_noisy_count(3, 0.5, 1, 0.1, zero()) == 0


def test_truncated_count_underestimates():
    beta, L, trials = 0.1, 4, 10**5
    over = sum(truncated_noisy_count(100, 0.5, L, beta, NoiseSource(3, t)) > 100 for t in range(trials))
    p = beta / (2 * L)
    assert over / trials <= p + 3 * math.sqrt(p * (1 - p) / trials)


def test_wor_sample_examples():
    rng = NoiseSource(1)
    assert sorted(wor_sample([1.0, 2.0, 3.0], 3, rng)) == [1.0, 2.0, 3.0]
    s = wor_sample([1.0, 2.0], 4, rng)
    assert sorted(s) == [0.0, 0.0, 1.0, 2.0]
    assert wor_sample([1.0, 2.0], 0, rng).size == 0


def test_wor_sample_is_uniform():
    rng = NoiseSource(2)
    counts = Counter(tuple(sorted(wor_sample([0.0, 1.0, 2.0, 3.0], 2, rng))) for _ in range(12000))
    assert len(counts) == 6
    assert all(abs(c / 12000 - 1 / 6) < 0.015 for c in counts.values())


def test_shrink_single_bucket_example():
    ds = Dataset(np.arange(100.0), np.full(100, 0.5), "unbounded")
    res = shrink(ds, 0.5, 0.5, 0.1, zero())
    assert res.deleted_count == 12 and res.padded_count == 0
    assert len(res.shrunk) == 88
    assert np.all(res.public_budgets == 0.5)


def test_empty_shrunk():
    ds = Dataset([1.0, 2.0], [0.5, 0.5], "unbounded")
    assert len(shrink(ds, 0.5, 0.5, 0.1, zero()).shrunk) == 0
    with pytest.raises(EmptyShrunk):
        pdp_mean_unbounded(ds, 0.5, 0.5, 0.1, zero())
    with pytest.raises(EmptyShrunk):
        pdp_mean_unbounded(Dataset([], [], "unbounded"), 0.5, 0.5, 0.1, NoiseSource(1))


def test_shrink_rejects_outside_domain():
    with pytest.raises(BudgetOutsideDomain):
        shrink(Dataset([1.0], [0.05], "unbounded"), 0.1, 1.0, 0.1, NoiseSource(1))


def _mixed(rng, n):
    eps = rng.choice(LEVELS, n)
    return Dataset(rng.normal(0, 1, n), eps, "unbounded"), eps


def test_no_privacy_downgrade():
    for t in range(20):
        rng = NoiseSource(4, t)
        ds, eps = _mixed(rng, 2000)
        res = shrink(ds, 0.1, 1.0, 0.1, rng)
        real = res.origin >= 0
        part = partition(0.1, 1.0)
        assert np.all(res.public_budgets[real] <= eps[res.origin[real]])
        assert np.all(res.public_budgets[real] == part.lefts[part.assign(eps[res.origin[real]])])
        assert np.all(np.diff(res.public_budgets) >= 0)
        assert len(res.shrunk) == sum(res.noisy_counts)


def test_deletion_bound():
    beta, ok = 0.1, 0
    L = partition(0.1, 1.0).n_buckets
    bound = (16 / 0.1) * math.log(2 * L / beta)
    for t in range(200):
        rng = NoiseSource(6, t)
        ds, _ = _mixed(rng, 10**4)
        ok += shrink(ds, 0.1, 1.0, beta, rng).deleted_count <= bound
    assert ok / 200 >= 0.95


def test_one_user_moves_one_bucket_count():
    rng = NoiseSource(8)
    ds, eps = _mixed(rng, 300)
    part = partition(0.1, 1.0)
    base = np.bincount(part.assign(eps), minlength=part.n_buckets)
    bigger = np.bincount(part.assign(np.append(eps, 0.4)), minlength=part.n_buckets)
    assert np.abs(bigger - base).sum() == 1


def _multiset_distance(a, b):
    ca, cb = Counter(a.tolist()), Counter(b.tolist())
    return sum(((ca - cb) + (cb - ca)).values())


def coupled_neighbor_distances(n_pool, extra_pool=2):
    """Shrink D and D + {u} under shared draws, over every permutation of u's bucket.

    Records are identified by origin index (padding is -1). The other bucket is
    identical for both datasets and uses the same permutation. For u's bucket the
    noisy count of D + {u} is either one more than that of D (shared Laplace
    draw) or equal to it (draw shifted by one), and D's permutation is the
    permutation of D + {u} with u deleted.
    """
    u = n_pool
    other = np.arange(n_pool + 1, n_pool + 1 + extra_pool)
    other_perm = np.arange(extra_pool)[::-1]
    for perm_big in itertools.permutations(range(n_pool + 1)):
        perm_big = np.array(perm_big)
        perm_small = perm_big[perm_big != u]
        for floor_small in range(-1, n_pool + 3):
            c_small = max(0, floor_small)
            for c_big in {max(0, floor_small + 1), c_small}:
                for c_other in (0, extra_pool + 1):
                    small = shrink_from_draws(
                        [np.zeros(n_pool), np.zeros(extra_pool)], [c_small, c_other],
                        [perm_small, other_perm], [0.1, 0.2], [np.arange(n_pool), other])
                    big = shrink_from_draws(
                        [np.zeros(n_pool + 1), np.zeros(extra_pool)], [c_big, c_other],
                        [perm_big, other_perm], [0.1, 0.2], [np.arange(n_pool + 1), other])
                    yield _multiset_distance(small.origin, big.origin)


@pytest.mark.parametrize("n_pool", range(0, 6))
def test_coupled_neighbor_distance_at_most_two(n_pool):
    assert max(coupled_neighbor_distances(n_pool)) <= 2


def test_unbounded_ledger_and_envelope_smoke():
    rng = NoiseSource(9)
    ds, eps = _mixed(rng, 10**4)
    rep = pdp_mean_unbounded(ds, 0.1, 1.0, 0.1, rng)
    assert np.all(rep.budget_ledger <= eps)
    part = partition(0.1, 1.0)
    assert np.array_equal(rep.budget_ledger, part.lefts[part.assign(eps)])
    assert abs(rep.estimate) <= 50 * lower_bound(eps, 1.0)
    assert rep.trace["shrunk_size"] + rep.trace["deleted"] - rep.trace["padded"] == 10**4


def test_unbounded_single_bucket():
    errs = []
    for t in range(30):
        rng = NoiseSource(10, t)
        ds = Dataset(rng.normal(0, 1, 5000), np.full(5000, 0.5), "unbounded")
        errs.append(abs(pdp_mean_unbounded(ds, 0.5, 0.5, 0.1, rng).estimate))
    assert np.median(errs) <= 50 * lower_bound(np.full(5000, 0.5), 1.0)
