"""Personalized-DP range estimation for (sub)Gaussian data.

The pipeline diffuses the data, picks a power-of-two bucket size from the
pairwise differences, finds a coarse radius around 0, a private median on the
bucket grid inside that radius, and finally a radius centred on the median.
Every SVT scan uses 0-based exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, NoiseSource
from .diffusion import DiffusionPlan, RateMode, SaturationProfile, diffuse, plan_rates, saturate
from .errors import (
    GridTooLarge,
    LengthMismatch,
    PreconditionError,
    ScanExhausted,
    TooFewElements,
)
from .mech import QueryStream, inverse_sensitivity_quantile, quantile_rank_margin, svt

MAX_EXPONENTS = 128
MAX_GRID = 2**24


@dataclass(frozen=True)
class RangeEstimate:
    lo: float
    hi: float
    bucket: float
    median: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (v >= self.lo) & (v <= self.hi)


def differential_dataset(values, rng: NoiseSource) -> np.ndarray:
    """Absolute differences of disjoint random pairs; ``floor(n/2)`` entries."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise TooFewElements(f"need at least 2 values, got {x.size}",
                             operation="differential_dataset")
    x = x[rng.permutation(x.size)]
    m = x.size // 2
    return np.abs(x[0:2 * m:2] - x[1:2 * m:2])


def _count_le(sorted_values: np.ndarray, r: float) -> int:
    return int(np.searchsorted(sorted_values, r, side="right"))


def discretize(nonzero_values, epsilon: float, beta: float, rng: NoiseSource,
               max_steps: int = MAX_EXPONENTS, trace: dict | None = None) -> tuple[np.ndarray, float]:
    """Quantize the kept values to a private power-of-two bucket size ``b``.

    Two SVT scans (budget ``epsilon/2`` each) locate the median of the pairwise
    differences: upward over ``Count(G, 2^e) - |G|/2`` and, when that stops at
    ``e = 0``, downward over ``|G|/2 - Count(G, 2^-e)``. ``beta`` is accepted
    for interface symmetry; the scans run without a margin.
    """
    x = np.asarray(nonzero_values, dtype=float).ravel()
    g = np.sort(differential_dataset(x, rng))
    half = g.size / 2.0
    eps_half = epsilon / 2.0
    try:
        up = svt(QueryStream(lambda e: _count_le(g, 2.0**e) - half, max_steps), 0.0, eps_half, rng)
        if up >= 1:
            b0 = 2.0 ** (up - 1)
            down = None
        else:
            down = svt(QueryStream(lambda e: half - _count_le(g, 2.0**-e), max_steps),
                       0.0, eps_half, rng)
            b0 = 2.0 ** (-down - 1)
    except ScanExhausted as exc:
        raise ScanExhausted(str(exc), operation="discretize") from None
    b = b0 / 2.0
    if trace is not None:
        trace.update(up_exponent=up, down_exponent=down, pairs=int(g.size))
    return b * np.floor(x / b), b


def radius_margin(epsilon: float, beta: float) -> float:
    """``(6/epsilon) log(2/beta)``."""
    return (6.0 / epsilon) * math.log(2.0 / beta)


def estimate_radius(values, epsilon: float, b: float, beta: float, rng: NoiseSource,
                    margin: float | None = None, max_steps: int = MAX_EXPONENTS,
                    crossing: bool = False, trace: dict | None = None) -> float:
    """Coarse private bound on ``max |x|``: ``2^(e*-1) * b``.

    ``e*`` is the SVT stopping exponent for ``Count(V, 2^e b) - |V|`` against
    the threshold ``-margin`` (default ``radius_margin(epsilon, beta)``), where
    ``Count(V, r)`` counts values with ``|x| <= r``. With ``crossing=True`` the
    radius at which the scan stopped, ``2^e* * b``, is returned instead.
    """
    if not b > 0:
        raise PreconditionError(f"bucket size must be > 0, got {b}", operation="estimate_radius")
    v = np.sort(np.abs(np.asarray(values, dtype=float).ravel()))
    if v.size == 0:
        raise ScanExhausted("no values to bound", operation="estimate_radius")
    if margin is None:
        margin = radius_margin(epsilon, beta)
    n = v.size
    try:
        e = svt(QueryStream(lambda i: _count_le(v, 2.0**i * b) - n, max_steps), -margin, epsilon, rng)
    except ScanExhausted as exc:
        raise ScanExhausted(str(exc), operation="estimate_radius") from None
    if trace is not None:
        trace["exponent"] = e
    return 2.0 ** (e if crossing else e - 1) * b


def bucket_grid(radius: float, b: float) -> np.ndarray:
    """``[-radius, radius]`` intersected with ``b * Z``."""
    half = math.floor(radius / b)
    if 2 * half + 1 > MAX_GRID:
        raise GridTooLarge(f"grid would have {2 * half + 1} points", operation="bucket_grid")
    return np.arange(-half, half + 1, dtype=float) * b


def estimate_range(dataset: Dataset, budgets, beta: float, rng: NoiseSource,
                   rate_mode: RateMode = "capped", strict: bool = True) -> RangeEstimate:
    """Private interval covering most of ``dataset``.

    ``budgets`` are the per-record budgets aligned with ``dataset`` (they need
    not be sorted; records are reordered jointly). Each of the four
    sub-mechanisms runs at ``tau/4`` on the diffused data with failure
    probability ``beta/4``. ``strict=False`` lets the median step run below
    its sample-size requirement (recorded as ``diagnostics["median_feasible"]``)
    instead of raising :class:`InsufficientData`.
    """
    eps = np.asarray(budgets, dtype=float).ravel()
    if eps.size != len(dataset):
        raise LengthMismatch(f"{eps.size} budgets for {len(dataset)} records",
                             operation="estimate_range")
    if not 0 < beta < 1:
        raise PreconditionError(f"beta must lie in (0, 1), got {beta}", operation="estimate_range")
    profile = saturate(eps)
    plan = plan_rates(profile.budgets, profile, rate_mode)
    ordered = Dataset(dataset.values[profile.order], profile.budgets, "bounded")
    return _estimate_range_planned(ordered, profile, plan, beta, rng, strict)


def _estimate_range_planned(ordered: Dataset, profile: SaturationProfile, plan: DiffusionPlan,
                            beta: float, rng: NoiseSource, strict: bool = True) -> RangeEstimate:
    tau = profile.tau
    eps_sub = tau / 4.0
    beta_sub = beta / 4.0
    diffused = diffuse(ordered, plan, rng)
    kept = diffused.kept_values
    disc_trace: dict = {}
    coarse_trace: dict = {}
    centred_trace: dict = {}
    quantized, b = discretize(kept, eps_sub, beta_sub, rng, trace=disc_trace)
    # the crossing radius: one binary scale lower loses the median whenever |mu| >> sigma
    coarse = estimate_radius(quantized, eps_sub, b, beta_sub, rng, crossing=True,
                             trace=coarse_trace)
    # candidates are restricted to the grid; scores still count every kept value
    grid = bucket_grid(coarse, b)
    # half the expected kept size targets the median of the diffused data
    rank = plan.expected_kept / 2.0
    feasible = grid.size == 1 or quantized.size > 2.0 * quantile_rank_margin(eps_sub, grid.size, beta_sub)
    # below the SVT margin the very first radius query already clears the threshold
    radius_feasible = quantized.size > radius_margin(eps_sub, beta_sub)
    median = inverse_sensitivity_quantile(quantized, rank, eps_sub, grid, beta_sub, rng, strict=strict)
    centred = quantized - median
    radius = estimate_radius(centred, eps_sub, b, beta_sub, rng, crossing=True,
                             trace=centred_trace)
    return RangeEstimate(
        lo=median - radius,
        hi=median + radius,
        bucket=b,
        median=median,
        diagnostics={
            "kept": int(kept.size),
            "pairs": disc_trace["pairs"],
            "up_exponent": disc_trace["up_exponent"],
            "down_exponent": disc_trace["down_exponent"],
            "coarse_exponent": coarse_trace["exponent"],
            "radius_exponent": centred_trace["exponent"],
            "coarse_radius": coarse,
            "radius": radius,
            "grid_size": int(grid.size),
            "tau": tau,
            "k": profile.k,
            "median_rank": rank,
            "median_feasible": bool(feasible),
            "radius_feasible": bool(radius_feasible),
        },
    )
