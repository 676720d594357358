"""Generic DP building blocks: sparse vector, inverse-sensitivity quantile, noisy weighted mean.

Indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import NoiseSource, as_nonempty_array
from .errors import (
    EmptyInput,
    InsufficientData,
    LengthMismatch,
    PreconditionError,
    ScanExhausted,
)


@dataclass(frozen=True)
class QueryStream:
    """Lazily evaluated query sequence; each query must have sensitivity <= 1."""

    evaluator: Callable[[int], float]
    max_steps: int = 128

    def __post_init__(self):
        if self.max_steps < 1:
            raise PreconditionError("max_steps must be positive")


@dataclass(frozen=True)
class ScoredGrid:
    candidates: np.ndarray
    scores: np.ndarray


def svt(queries: QueryStream, threshold: float, epsilon: float, rng: NoiseSource) -> int:
    """Index of the first query whose noisy value exceeds the noisy threshold.

    The threshold is perturbed once with Laplace(2/epsilon) and every query with
    Laplace(4/epsilon). Raises :class:`ScanExhausted` after ``max_steps``
    queries without a crossing.
    """
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}", operation="svt")
    noisy_threshold = threshold + rng.laplace(2.0 / epsilon)
    query_scale = 4.0 / epsilon
    for i in range(queries.max_steps):
        if queries.evaluator(i) + rng.laplace(query_scale) > noisy_threshold:
            return i
    raise ScanExhausted(f"no crossing within {queries.max_steps} queries", operation="svt")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def quantile_scores(sorted_values, rank: int, grid) -> ScoredGrid:
    """Inverse-sensitivity scores for the ``rank``-th order statistic (1-based).

    The score of candidate ``y`` is minus the fewest element changes after which
    the ``rank``-th smallest element equals ``y``. With ``L``, ``E``, ``G`` the
    counts of elements below, equal to and above ``y`` that distance is
    ``max(0, rank - L - E, n - rank + 1 - E - G)``.
    """
    x = as_nonempty_array(sorted_values, "quantile_scores")
    y = as_nonempty_array(grid, "quantile_scores")
    n = x.size
    if not 1 <= rank <= n:
        raise PreconditionError(f"rank {rank} outside [1, {n}]", operation="quantile_scores")
    below = np.searchsorted(x, y, side="left")
    below_or_equal = np.searchsorted(x, y, side="right")
    # below_or_equal = L + E, n - below = E + G
    dist = np.maximum(0, np.maximum(rank - below_or_equal, (n - rank + 1) - (n - below)))
    return ScoredGrid(candidates=y, scores=-dist.astype(np.int64))


def quantile_rank_margin(epsilon: float, grid_size: int, beta: float) -> float:
    """``(2/epsilon) * log(|grid| / beta)``, the clamping margin of FindQuantile."""
    return (2.0 / epsilon) * math.log(grid_size / beta)


def inverse_sensitivity_quantile(values, rank: float, epsilon: float, grid, beta: float,
                                 rng: NoiseSource, strict: bool = True) -> float:
    """Private estimate of the ``rank``-th smallest value, restricted to ``grid``.

    ``rank`` is rounded half-up and clamped away from both ends of the data by
    the margin ``(2/epsilon) log(|grid|/beta)``; a grid candidate is then drawn
    with probability proportional to ``exp(epsilon * score / 2)``.

    When ``n <= 2 * margin`` the accuracy guarantee is void: ``strict`` raises
    :class:`InsufficientData`, otherwise the margin clamp is skipped and the
    draw proceeds (privacy does not depend on ``n``).
    """
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be > 0, got {epsilon}",
                                operation="inverse_sensitivity_quantile")
    if not 0 < beta < 1:
        raise PreconditionError(f"beta must lie in (0, 1), got {beta}",
                                operation="inverse_sensitivity_quantile")
    x = np.sort(as_nonempty_array(values, "inverse_sensitivity_quantile"))
    y = np.asarray(grid, dtype=float).ravel()
    if y.size == 0:
        raise EmptyInput("grid is empty", operation="inverse_sensitivity_quantile")
    if y.size == 1:
        return float(y[0])
    n = x.size
    margin = quantile_rank_margin(epsilon, y.size, beta)
    feasible = n > 2.0 * margin
    if not feasible and strict:
        raise InsufficientData(
            f"n={n} must exceed (4/eps)log(|grid|/beta)={2 * margin:.3f}",
            operation="inverse_sensitivity_quantile")
    r = round_half_up(rank)
    if not feasible:
        pass
    elif r < margin:
        r = math.ceil(margin)
    elif r > n - margin:
        r = math.floor(n - margin)
    r = min(max(r, 1), n)
    scored = quantile_scores(x, r, y)
    return float(y[rng.gumbel_argmax(0.5 * epsilon * scored.scores)])


def laplace_weighted_mean_scale(range_width: float, weights, epsilon: float) -> float:
    """Noise scale ``|Range| * max(w) / epsilon`` for an epsilon-DP weighted mean."""
    return range_width * float(np.max(weights)) / epsilon


def noisy_weighted_mean(values, weights, noise_scale: float, rng: NoiseSource) -> float:
    """``sum(w * x) + Laplace(noise_scale)``; ``noise_scale == 0`` adds nothing."""
    x = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if x.shape != w.shape:
        raise LengthMismatch(f"{x.size} values but {w.size} weights",
                             operation="noisy_weighted_mean")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise PreconditionError("weights must be finite and nonnegative",
                                operation="noisy_weighted_mean")
    if noise_scale < 0:
        raise PreconditionError("noise_scale must be >= 0", operation="noisy_weighted_mean")
    total = float(np.dot(w, x))
    if noise_scale == 0:
        return total
    return total + rng.laplace(noise_scale)
