"""Saturated-budget weighted mean, the bounded-model Gaussian mean estimator and lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, NoiseSource, clip
from .diffusion import RateMode, SaturationProfile, effective_budget, plan_rates, saturate
from .errors import (
    BudgetOutOfRange,
    EmptyBudgets,
    LengthMismatch,
    NonPositiveWidth,
    PreconditionError,
    TooFewElements,
)
from .mech import noisy_weighted_mean
from .range import RangeEstimate, _estimate_range_planned

SQRT2 = math.sqrt(2.0)
SAMPLE_SIZE_CONSTANT = 32.0
SAMPLE_SIZE_WARNING = "SampleSizeWarning"
UNCAPPED_RATE_WARNING = "UncappedRateOverspend"
MEDIAN_WARNING = "InsufficientDataForMedian"
RADIUS_WARNING = "InsufficientDataForRadius"


@dataclass(frozen=True)
class EstimationReport:
    """Output of an end-to-end estimator.

    ``budget_ledger[i]`` is the budget spent on the caller's record ``i`` and
    never exceeds its declared budget (except under uncapped rates, which are
    flagged in ``warnings``).
    """

    estimate: float
    noise_scale: float
    budget_ledger: np.ndarray
    range_used: RangeEstimate | None = None
    warnings: tuple[str, ...] = ()
    trace: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _AdpmResult:
    estimate: float
    noise_scale: float
    profile: SaturationProfile
    spend: np.ndarray  # caller order


def _adpm(values, budgets, width: float, rng: NoiseSource) -> _AdpmResult:
    x = np.asarray(values, dtype=float).ravel()
    eps = np.asarray(budgets, dtype=float).ravel()
    if x.shape != eps.shape:
        raise LengthMismatch(f"{x.size} values but {eps.size} budgets", operation="adpm")
    if not (width > 0 and math.isfinite(width)):
        raise NonPositiveWidth(f"width must be positive and finite, got {width}", operation="adpm")
    # saturate sorts by budget; carry the values along so each weight stays with its record
    profile = saturate(eps)
    total = profile.effective_size
    weights = profile.eps_tilde / total
    scale = width / total
    estimate = noisy_weighted_mean(x[profile.order], weights, scale, rng)
    spend = np.empty(eps.size)
    spend[profile.order] = profile.eps_tilde
    return _AdpmResult(estimate, scale, profile, spend)


def adpm(values, budgets, width: float, rng: NoiseSource) -> float:
    """Weighted mean with weights ``eps_tilde / sum(eps_tilde)`` plus Laplace(width / sum(eps_tilde)).

    ``values`` must already lie in an interval of length ``width``.
    """
    return _adpm(values, budgets, width, rng).estimate


def adpm_weights(budgets) -> np.ndarray:
    """The weights ``adpm`` attaches to each record, in the caller's order."""
    profile = saturate(budgets)
    w = np.empty(profile.n)
    w[profile.order] = profile.eps_tilde / profile.effective_size
    return w


def sample_size_threshold(budgets, beta: float) -> float:
    """``(C/eps_min) log(1/beta) max(1, log log(S/beta))`` with ``S = sum(eps_tilde)``."""
    profile = saturate(budgets)
    ratio = profile.effective_size / beta
    loglog = math.log(math.log(ratio)) if ratio > math.e else 0.0
    return SAMPLE_SIZE_CONSTANT / float(profile.budgets[0]) * math.log(1.0 / beta) * max(1.0, loglog)


def pdp_mean_bounded(dataset: Dataset, budgets, beta: float, rng: NoiseSource,
                     rate_mode: RateMode = "capped") -> EstimationReport:
    """Mean of Gaussian-like data with per-record budgets in (0, 1].

    Half of every budget goes to range estimation (failure probability
    ``beta/6``), the other half to the weighted mean of the clipped data.
    Small samples produce warnings, not errors; only a failed SVT scan or an
    impossible budget plan aborts.
    """
    eps = np.asarray(budgets, dtype=float).ravel()
    n = len(dataset)
    if eps.size != n:
        raise LengthMismatch(f"{eps.size} budgets for {n} records", operation="pdp_mean_bounded")
    if n < 2:
        raise TooFewElements(f"need at least 2 records, got {n}", operation="pdp_mean_bounded")
    if np.any(~((eps > 0) & (eps <= 1))):
        raise BudgetOutOfRange("every budget must lie in (0, 1]", operation="pdp_mean_bounded")
    if not 0 < beta < 1:
        raise PreconditionError(f"beta must lie in (0, 1), got {beta}", operation="pdp_mean_bounded")

    half = eps / 2.0
    warnings: list[str] = []
    if n < sample_size_threshold(eps, beta):
        warnings.append(SAMPLE_SIZE_WARNING)

    profile = saturate(half)
    plan = plan_rates(profile.budgets, profile, rate_mode)
    ordered = Dataset(dataset.values[profile.order], profile.budgets, "bounded")
    interval = _estimate_range_planned(ordered, profile, plan, beta / 6.0, rng, strict=False)
    if not interval.diagnostics["median_feasible"]:
        warnings.append(MEDIAN_WARNING)
    if not interval.diagnostics["radius_feasible"]:
        warnings.append(RADIUS_WARNING)
    range_spend = np.empty(n)
    range_spend[profile.order] = effective_budget(plan.rates, np.full(n, profile.tau))
    if np.any(range_spend > half):
        warnings.append(UNCAPPED_RATE_WARNING)

    clipped = clip(dataset.values, interval.lo, interval.hi)
    mean = _adpm(clipped, half, interval.width, rng)
    ledger = range_spend + mean.spend
    ledger.flags.writeable = False
    return EstimationReport(
        estimate=mean.estimate,
        noise_scale=mean.noise_scale,
        budget_ledger=ledger,
        range_used=interval,
        warnings=tuple(warnings),
        trace={
            "range": interval.diagnostics,
            "range_tau": profile.tau,
            "range_k": profile.k,
            "tau": mean.profile.tau,
            "k": mean.profile.k,
            "clipped": int(np.count_nonzero(clipped != dataset.values)),
        },
    )


def lower_bound_argmax(budgets, sigma: float) -> tuple[float, int]:
    """``max_k sigma / (sqrt(2) (sum_{i<=k} eps_i + 2 sqrt(n-k)))`` and its first maximizer ``k``.

    Budgets are sorted ascending before the prefix sums are taken.
    """
    eps = np.sort(np.asarray(budgets, dtype=float).ravel())
    if eps.size == 0:
        raise EmptyBudgets("budget vector is empty", operation="lower_bound")
    if not sigma >= 0:
        raise PreconditionError(f"sigma must be >= 0, got {sigma}", operation="lower_bound")
    n = eps.size
    k = np.arange(1, n + 1)
    terms = sigma / (SQRT2 * (np.cumsum(eps) + 2.0 * np.sqrt(n - k)))
    j = int(np.argmax(terms))
    return float(terms[j]), j + 1


def lower_bound(budgets, sigma: float) -> float:
    """Minimax lower bound on the mean-estimation error for the given budgets."""
    return lower_bound_argmax(budgets, sigma)[0]
