"""Diffusion and its budget machinery.

Diffusion keeps record ``i`` with probability ``p_i`` and otherwise replaces it
by a tagged placeholder. Running an ``eps``-DP mechanism on the diffused data
spends ``ln(1 + p_i (e^eps - 1))`` of record ``i``'s budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import Dataset, NoiseSource
from .errors import (
    BudgetOverflow,
    EmptyBudgets,
    LengthMismatch,
    NonPositiveBudget,
    PreconditionError,
    RateOverflow,
)

RateMode = Literal["uncapped", "capped"]

SATURATION_OFFSET = 8.0


@dataclass(frozen=True)
class SaturationProfile:
    """Saturation of an ascending budget vector.

    ``k`` is the length of the non-saturated prefix, ``tau`` the saturation
    threshold ``(sum eps_i^2 + 8) / sum eps_i`` over that prefix and
    ``eps_tilde`` the budgets with every entry past ``k`` replaced by ``tau``.
    ``order`` maps sorted positions back to the caller's positions.
    """

    k: int
    tau: float
    eps_tilde: np.ndarray
    budgets: np.ndarray
    order: np.ndarray

    @property
    def n(self) -> int:
        return self.budgets.size

    @property
    def effective_size(self) -> float:
        """``sum_{i<=k} eps_i + (n - k) * tau``, i.e. ``sum(eps_tilde)``."""
        return float(np.sum(self.eps_tilde))


@dataclass(frozen=True)
class DiffusionPlan:
    rates: np.ndarray
    tau: float
    mode: RateMode

    def __len__(self) -> int:
        return self.rates.size

    @property
    def expected_kept(self) -> float:
        return float(np.sum(self.rates))


@dataclass(frozen=True)
class DiffusedDataset:
    """Diffusion outcome: ``kept[i]`` tags slot ``i``; ``values[i]`` is only
    meaningful where ``kept[i]`` is true (placeholders hold NaN)."""

    kept: np.ndarray
    values: np.ndarray
    origin_budgets: np.ndarray

    def __len__(self) -> int:
        return self.kept.size

    @property
    def kept_values(self) -> np.ndarray:
        return self.values[self.kept]

    def materialize(self, placeholder: float = 0.0) -> np.ndarray:
        """Values with placeholders replaced by ``placeholder``."""
        return np.where(self.kept, self.values, placeholder)


def _check_budgets(budgets, operation: str) -> np.ndarray:
    eps = np.asarray(budgets, dtype=float).ravel()
    if eps.size == 0:
        raise EmptyBudgets("budget vector is empty", operation=operation)
    if np.any(~(eps > 0)) or np.any(~np.isfinite(eps)):
        raise NonPositiveBudget("budgets must be positive and finite", operation=operation)
    return eps


def saturate(budgets) -> SaturationProfile:
    """Find the smallest ``k`` with ``eps_{k+1} >= (sum_{i<=k} eps_i^2 + 8) / sum_{i<=k} eps_i``.

    Budgets are sorted defensively (stable); ``profile.order`` records the
    permutation. When no successor saturates, ``k = n`` and ``eps_tilde = eps``.
    """
    raw = _check_budgets(budgets, "saturate")
    order = np.argsort(raw, kind="stable")
    eps = raw[order]
    n = eps.size
    s1 = np.cumsum(eps)
    s2 = np.cumsum(eps * eps)
    thresholds = (s2 + SATURATION_OFFSET) / s1  # thresholds[j-1] is the prefix-j value
    hits = np.nonzero(eps[1:] >= thresholds[:-1])[0]
    k = int(hits[0]) + 1 if hits.size else n
    tau = float(thresholds[k - 1])
    eps_tilde = eps.copy()
    eps_tilde[k:] = tau
    for arr in (eps, eps_tilde, order):
        arr.flags.writeable = False
    return SaturationProfile(k=k, tau=tau, eps_tilde=eps_tilde, budgets=eps, order=order)


_LARGE = 700.0  # beyond this expm1 is close to overflow; use eps + ln(p + (1-p) e^-eps)


def effective_budget(p, eps):
    """``ln(1 + p (e^eps - 1))``: the budget an eps-DP run on diffused data spends."""
    if np.ndim(p) == 0 and np.ndim(eps) == 0:
        if eps <= _LARGE:
            return math.log1p(p * math.expm1(eps))
        return 0.0 if p == 0 else eps + math.log(p + (1.0 - p) * math.exp(-eps))
    p = np.asarray(p, dtype=float)
    eps = np.asarray(eps, dtype=float)
    small = eps <= _LARGE
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        direct = np.log1p(p * np.expm1(np.where(small, eps, 0.0)))
        tail = np.where(p == 0, 0.0, eps + np.log(p + (1.0 - p) * np.exp(-eps)))
    return np.where(small, direct, tail)


def _exceeds(p: float, tau: float, eps_i: float) -> bool:
    # scalar (libm) and vectorized (numpy) paths may round differently; both must comply
    return (effective_budget(p, tau) > eps_i
            or float(effective_budget(np.array([p]), np.array([tau]))[0]) > eps_i)


def _compliant_cap(eps_i: float, tau: float) -> float:
    """Largest float ``p <= (e^eps_i - 1) / (e^tau - 1)`` with effective_budget(p, tau) <= eps_i."""
    if tau <= _LARGE:
        p = min(math.expm1(eps_i) / math.expm1(tau), 1.0)
    else:
        p = min(math.exp(math.log(math.expm1(eps_i)) - tau), 1.0)
    while p > 0 and _exceeds(p, tau, eps_i):
        p = math.nextafter(p, 0.0)
    return p


def plan_rates(budgets, profile: SaturationProfile, mode: RateMode = "capped") -> DiffusionPlan:
    """Per-record keep rates for the ascending ``budgets``.

    uncapped: ``eps_i / (2 tau)`` on the non-saturated prefix and ``1/2`` after it.
    capped: the uncapped rate lowered where needed so that
    ``effective_budget(rate_i, tau) <= eps_i`` holds exactly in floating point.
    """
    eps = _check_budgets(budgets, "plan_rates")
    if eps.size != profile.n:
        raise LengthMismatch("budgets and profile differ in length", operation="plan_rates")
    if np.any(np.diff(eps) < 0):
        raise PreconditionError("budgets must be sorted ascending", operation="plan_rates")
    if mode not in ("uncapped", "capped"):
        raise PreconditionError(f"unknown rate mode {mode!r}", operation="plan_rates")
    tau = profile.tau
    k = profile.k
    rates = np.full(eps.size, 0.5)
    rates[:k] = eps[:k] / (2.0 * tau)
    if np.any(rates > 1.0):
        raise RateOverflow("an uncapped rate exceeds 1", operation="plan_rates")
    if mode == "capped":
        suspects = np.nonzero(effective_budget(rates, np.full(eps.size, tau)) >= eps * (1 - 1e-12))[0]
        for i in suspects:
            if _exceeds(float(rates[i]), tau, float(eps[i])):
                rates[i] = min(rates[i], _compliant_cap(float(eps[i]), tau))
        if not np.any(rates > 0):
            raise BudgetOverflow(f"no record can be kept at tau={tau}", operation="plan_rates")
    rates.flags.writeable = False
    return DiffusionPlan(rates=rates, tau=tau, mode=mode)


def diffuse(dataset: Dataset, plan: DiffusionPlan, rng: NoiseSource) -> DiffusedDataset:
    """Keep slot ``i`` with probability ``plan.rates[i]``, independently."""
    if len(dataset) != len(plan):
        raise LengthMismatch(f"dataset has {len(dataset)} records, plan has {len(plan)} rates",
                             operation="diffuse")
    kept = np.asarray(rng.keep(plan.rates), dtype=bool).reshape(-1)
    values = np.where(kept, dataset.values, np.nan)
    return DiffusedDataset(kept=kept, values=values, origin_budgets=dataset.budgets)
