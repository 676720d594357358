"""Reduction from the add/remove-one model to the change-one model.

Budgets are grouped into dyadic buckets; each bucket contributes a noisy,
downward-truncated number of records sampled without replacement, all
tagged with the bucket's left endpoint as their public budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, NoiseSource
from .errors import BudgetOutsideDomain, BudgetOverflow, EmptyShrunk, InvalidBounds, PreconditionError
from .mean import EstimationReport, pdp_mean_bounded


@dataclass(frozen=True)
class PrivacyPartition:
    """Buckets ``[2^e eps_min, 2^(e+1) eps_min)``; the last one is ``[2^(L-1) eps_min, eps_max]``."""

    eps_min: float
    eps_max: float
    lefts: np.ndarray

    @property
    def n_buckets(self) -> int:
        return self.lefts.size

    @property
    def intervals(self) -> list[tuple[float, float]]:
        rights = list(self.lefts[1:]) + [self.eps_max]
        return [(float(a), float(b)) for a, b in zip(self.lefts, rights)]

    def assign(self, budgets) -> np.ndarray:
        """Bucket index of every budget; raises if a budget leaves ``[eps_min, eps_max]``."""
        eps = np.asarray(budgets, dtype=float).ravel()
        if np.any((eps < self.eps_min) | (eps > self.eps_max)):
            raise BudgetOutsideDomain(
                f"budgets must lie in [{self.eps_min}, {self.eps_max}]", operation="shrink")
        return np.searchsorted(self.lefts, eps, side="right") - 1


def partition(eps_min: float, eps_max: float) -> PrivacyPartition:
    if not (0 < eps_min <= eps_max <= 1):
        raise InvalidBounds(f"need 0 < eps_min <= eps_max <= 1, got ({eps_min}, {eps_max})",
                            operation="partition")
    # count doublings exactly rather than trusting floor(log2(T)) on a rounded ratio
    e = 0
    while eps_min * 2.0 ** (e + 1) <= eps_max:
        e += 1
    lefts = eps_min * 2.0 ** np.arange(e + 1)
    lefts.flags.writeable = False
    return PrivacyPartition(float(eps_min), float(eps_max), lefts)


def count_offset(bucket_eps: float, n_buckets: int, beta: float) -> float:
    """``(2/bucket_eps) ln(2 n_buckets / beta)``."""
    return (2.0 / bucket_eps) * math.log(2.0 * n_buckets / beta)


def truncated_noisy_count(true_count: int, bucket_eps: float, n_buckets: int, beta: float,
                          rng: NoiseSource) -> int:
    """``max(0, floor(count + Lap(2/bucket_eps) - offset))``: an underestimate w.p. ``>= 1 - beta/(2L)``."""
    if true_count < 0 or n_buckets < 1 or not bucket_eps > 0 or not 0 < beta < 1:
        raise PreconditionError("invalid truncated count parameters", operation="truncated_noisy_count")
    noisy = true_count + rng.laplace(2.0 / bucket_eps) - count_offset(bucket_eps, n_buckets, beta)
    return max(0, math.floor(noisy))


def wor_sample(pool, m: int, rng: NoiseSource) -> np.ndarray:
    """Uniform sample of ``min(m, |pool|)`` elements without replacement, zero-padded to length ``m``."""
    if m < 0:
        raise PreconditionError(f"m must be >= 0, got {m}", operation="wor_sample")
    x = np.asarray(pool, dtype=float).ravel()
    return _take(x, rng.permutation(x.size), m)


def _take(pool: np.ndarray, perm: np.ndarray, m: int) -> np.ndarray:
    picked = pool[perm[:m]]
    if m > pool.size:
        picked = np.concatenate([picked, np.zeros(m - pool.size)])
    return picked


@dataclass(frozen=True)
class ShrinkResult:
    shrunk: Dataset
    public_budgets: np.ndarray
    deleted_count: int
    padded_count: int
    noisy_counts: tuple[int, ...] = ()
    true_counts: tuple[int, ...] = ()
    origin: np.ndarray | None = None  # source index per shrunk record, -1 for padding


def shrink_from_draws(pools, counts, perms, lefts, origins=None) -> ShrinkResult:
    """Deterministic core of :func:`shrink` given the noisy counts and one permutation per bucket.

    ``origins[j]`` optionally holds the source indices of ``pools[j]``.
    """
    if origins is None:
        origins = [np.full(np.size(p), -1) for p in pools]
    values, budgets, sources = [], [], []
    deleted = padded = 0
    for pool, c, perm, left, src in zip(pools, counts, perms, lefts, origins):
        pool = np.asarray(pool, dtype=float)
        deleted += max(0, pool.size - c)
        if c <= 0:
            continue
        padded += max(0, c - pool.size)
        perm = np.asarray(perm, dtype=int)
        values.append(_take(pool, perm, c))
        picked = np.asarray(src, dtype=int)[perm[:c]]
        sources.append(np.concatenate([picked, np.full(c - picked.size, -1)]))
        budgets.append(np.full(c, float(left)))
    v = np.concatenate(values) if values else np.zeros(0)
    b = np.concatenate(budgets) if budgets else np.zeros(0)
    o = np.concatenate(sources) if sources else np.zeros(0, dtype=int)
    shrunk = Dataset(v, b, "bounded")
    return ShrinkResult(shrunk, shrunk.budgets, deleted, padded,
                        tuple(int(c) for c in counts), tuple(int(np.size(p)) for p in pools), o)


def shrink(dataset: Dataset, eps_min: float, eps_max: float, beta: float,
           rng: NoiseSource) -> ShrinkResult:
    """Change-one dataset derived from an add/remove-one dataset.

    Each record's public budget is its bucket's left endpoint, never above its
    true budget.
    """
    part = partition(eps_min, eps_max)
    idx = part.assign(dataset.budgets)
    pools, counts, perms, origins = [], [], [], []
    for j, left in enumerate(part.lefts):
        members = np.flatnonzero(idx == j)
        c = truncated_noisy_count(members.size, float(left), part.n_buckets, beta, rng)
        pools.append(dataset.values[members])
        origins.append(members)
        counts.append(c)
        perms.append(rng.permutation(members.size) if c > 0 else np.zeros(0, dtype=int))
    return shrink_from_draws(pools, counts, perms, part.lefts, origins)


def pdp_mean_unbounded(dataset: Dataset, eps_min: float, eps_max: float, beta: float,
                       rng: NoiseSource) -> EstimationReport:
    """Mean estimate when the dataset size and budgets are themselves private.

    Shrinks with ``beta/2`` and runs the bounded estimator on the shrunk data
    with a quarter of each public budget. ``budget_ledger[i]`` is user ``i``'s
    spend: half its bucket budget for the count plus twice the quarter budget
    granted to bounded records of that bucket (a user moves the shrunk data by
    at most two records).
    """
    part = partition(eps_min, eps_max)
    res = shrink(dataset, eps_min, eps_max, beta / 2.0, rng)
    if len(res.shrunk) == 0:
        raise EmptyShrunk("every bucket count truncated to zero", operation="pdp_mean_unbounded")
    inner = pdp_mean_bounded(res.shrunk, res.public_budgets / 4.0, beta / 2.0, rng)
    if np.any(inner.budget_ledger > res.public_budgets / 4.0):
        raise BudgetOverflow("bounded stage overspent its grant", operation="pdp_mean_unbounded")
    left = part.lefts[part.assign(dataset.budgets)]
    ledger = left / 2.0 + 2.0 * (left / 4.0)
    ledger.flags.writeable = False
    trace = dict(inner.trace)
    trace.update(
        shrunk_size=len(res.shrunk),
        deleted=res.deleted_count,
        padded=res.padded_count,
        noisy_counts=res.noisy_counts,
        true_counts=res.true_counts,
        n_buckets=part.n_buckets,
    )
    return EstimationReport(
        estimate=inner.estimate,
        noise_scale=inner.noise_scale,
        budget_ledger=ledger,
        range_used=inner.range_used,
        warnings=inner.warnings,
        trace=trace,
    )
