"""Empirical privacy auditing and concentration-bound evaluators with Monte Carlo oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, NoiseSource
from .errors import DegenerateBinning, InconsistentParams, PreconditionError, ScaleTooLarge

INFINITE = math.inf
MIN_REPORTED_TRIALS = 10**4
MAX_MC_POPULATION = 64
CHUNK = 2**17

# mechanism(dataset, trials, rng) -> 1-d array of `trials` outputs
Mechanism = Callable[[Dataset, int, NoiseSource], np.ndarray]


@dataclass(frozen=True)
class AuditConfig:
    """``bins`` is a bin count (quantile edges of the pooled sample, or one bin
    per distinct value when there are few) or an explicit ascending edge list."""

    trials: int = 10**6
    bins: int | Sequence[float] = 10
    smoothing: float = 1.0
    slack: float = 0.05

    def __post_init__(self):
        if self.trials < 1:
            raise PreconditionError("trials must be positive")
        if self.smoothing < 0 or self.slack < 0:
            raise PreconditionError("smoothing and slack must be >= 0")
        if np.ndim(self.bins) == 0:
            if int(self.bins) < 2:
                raise PreconditionError("need at least 2 bins")
        elif len(self.bins) < 3:
            raise PreconditionError("need at least 3 edges")


def _draw(mechanism: Mechanism, dataset: Dataset, trials: int, rng: NoiseSource) -> np.ndarray:
    parts, left = [], trials
    while left > 0:
        m = min(CHUNK, left)
        parts.append(np.asarray(mechanism(dataset, m, rng), dtype=float).ravel())
        left -= m
    return np.concatenate(parts)


def histogram_pair(a: np.ndarray, b: np.ndarray, bins) -> tuple[np.ndarray, np.ndarray]:
    """Counts of two samples over a shared binning (see :class:`AuditConfig`)."""
    if np.ndim(bins) == 0:
        pooled = np.concatenate([a, b])
        distinct = np.unique(pooled)
        if distinct.size <= int(bins):
            return (np.bincount(np.searchsorted(distinct, a), minlength=distinct.size),
                    np.bincount(np.searchsorted(distinct, b), minlength=distinct.size))
        inner = np.unique(np.quantile(pooled, np.linspace(0, 1, int(bins) + 1)[1:-1]))
    else:
        inner = np.asarray(bins, dtype=float)[1:-1]
    # bin j collects (inner[j-1], inner[j]]; the outer bins are unbounded
    ha = np.bincount(np.searchsorted(inner, a, side="left"), minlength=inner.size + 1)
    hb = np.bincount(np.searchsorted(inner, b, side="left"), minlength=inner.size + 1)
    return ha, hb


def epsilon_hat_from_counts(ha, hb, smoothing: float = 1.0) -> float:
    """``max_b |ln((h_b + lam) / (h'_b + lam))|`` after rescaling to equal totals.

    Returns ``inf`` when some bin is empty on one side while the other side
    holds more than ``10 * lam * sqrt(trials)`` draws there.
    """
    ha = np.asarray(ha, dtype=float)
    hb = np.asarray(hb, dtype=float)
    na, nb = ha.sum(), hb.sum()
    occupied = (ha > 0) | (hb > 0)
    if np.count_nonzero(occupied) <= 1:
        raise DegenerateBinning("all mass fell into a single bin for both inputs",
                                operation="estimate_epsilon_hat")
    cutoff = 10.0 * smoothing * math.sqrt(max(na, nb))
    if np.any(((ha == 0) & (hb > cutoff)) | ((hb == 0) & (ha > cutoff))):
        return INFINITE
    pa = (ha + smoothing) / (na + smoothing * ha.size)
    pb = (hb + smoothing) / (nb + smoothing * hb.size)
    keep = occupied if smoothing == 0 else np.ones_like(occupied)
    with np.errstate(divide="ignore"):
        return float(np.max(np.abs(np.log(pa[keep]) - np.log(pb[keep]))))


def estimate_epsilon_hat(mechanism: Mechanism, D: Dataset, D_prime: Dataset, cfg: AuditConfig,
                         rng: NoiseSource) -> float:
    """Plug-in estimate of the privacy loss between two neighboring inputs."""
    a = _draw(mechanism, D, cfg.trials, rng)
    b = _draw(mechanism, D_prime, cfg.trials, rng)
    ha, hb = histogram_pair(a, b, cfg.bins)
    return epsilon_hat_from_counts(ha, hb, cfg.smoothing)


# -- reference mechanisms ------------------------------------------------------

def laplace_count_mechanism(epsilon: float, predicate: Callable[[np.ndarray], np.ndarray] | None = None
                            ) -> Mechanism:
    """``#{x : predicate(x)} + Lap(1/epsilon)``; the predicate defaults to ``x > 0``."""
    pred = predicate or (lambda v: v > 0)

    def mech(ds: Dataset, trials: int, rng: NoiseSource) -> np.ndarray:
        count = float(np.count_nonzero(pred(ds.values)))
        return count + rng.laplace(1.0 / epsilon, size=trials)

    return mech


def size_mechanism(ds: Dataset, trials: int, rng: NoiseSource) -> np.ndarray:
    """Deterministically reports ``|D|``."""
    return np.full(trials, float(len(ds)))


def diffused_randomized_response(bits, rates, tau: float, trials: int, rng: NoiseSource) -> np.ndarray:
    """``trials x n`` outputs of per-slot randomized response at budget ``tau`` on diffused bits.

    A diffused-away slot reports randomized response on 0.
    """
    x = np.asarray(bits, dtype=float).ravel()
    p = np.broadcast_to(np.asarray(rates, dtype=float), x.shape)
    kept = rng.keep(np.broadcast_to(p, (trials, x.size)))
    truth = np.where(kept, x, 0.0)
    honest = rng.keep(np.full((trials, x.size), math.exp(tau) / (1.0 + math.exp(tau))))
    return np.where(honest, truth, 1.0 - truth)


def diffusion_audit(bits, index: int, rates, tau: float, cfg: AuditConfig,
                    rng: NoiseSource) -> float:
    """Audited loss of slot ``index`` when its bit flips, for diffused randomized response."""
    x = np.asarray(bits, dtype=float).ravel()
    y = x.copy()
    y[index] = 1.0 - y[index]

    def column(ds: Dataset, trials: int, r: NoiseSource) -> np.ndarray:
        return diffused_randomized_response(ds.values, rates, tau, trials, r)[:, index]

    ones = np.ones(x.size)
    return estimate_epsilon_hat(column, Dataset(x, ones), Dataset(y, ones), cfg, rng)


# -- concentration bounds ------------------------------------------------------

@dataclass(frozen=True)
class TwoStageParams:
    """Poisson rates ``p``, population ``A`` in [0, 1] and subsample size ``m``."""

    p: tuple[float, ...]
    A: tuple[float, ...]
    m: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        a = np.asarray(self.A, dtype=float)
        if p.ndim != 1 or p.shape != a.shape or p.size == 0:
            raise InconsistentParams("p and A must be nonempty and equally long")
        if np.any(~((p > 0) & (p <= 1))):
            raise InconsistentParams("every p_i must lie in (0, 1]")
        if np.any(~((a >= 0) & (a <= 1))):
            raise InconsistentParams("every a_i must lie in [0, 1]")
        if int(self.m) != self.m or self.m < 1:
            raise InconsistentParams("m must be a positive integer")
        object.__setattr__(self, "p", tuple(map(float, p)))
        object.__setattr__(self, "A", tuple(map(float, a)))
        object.__setattr__(self, "m", int(self.m))

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def gamma(self) -> float:
        return max(self.A) - min(self.A)

    @property
    def var_A(self) -> float:
        return float(np.var(np.asarray(self.A)))

    @property
    def mu_N(self) -> float:
        return float(np.sum(self.p))

    @property
    def mu_T(self) -> float:
        return float(np.dot(self.p, self.A)) / self.mu_N

    @property
    def eta(self) -> float:
        return self.n * max(self.p) / self.mu_N

    @property
    def w_max(self) -> float:
        return max(self.p) / self.mu_N


def _exp_ratio(num: float, den: float) -> float:
    # exp(-num/den); a zero denominator with positive numerator is a zero term
    if den == 0:
        return 0.0 if num > 0 else 1.0
    return math.exp(-num / den)


def two_stage_terms(params: TwoStageParams, t: float) -> tuple[float, float, float]:
    """The three summands of :func:`two_stage_bound`."""
    if not t > 0:
        raise InconsistentParams(f"t must be > 0, got {t}")
    n, m, s2, g, mu = params.n, params.m, params.var_A, params.gamma, params.mu_N
    first = _exp_ratio(t * t, 16.0 * m * n * s2 / mu + (8.0 / 3.0) * g * t)
    second = _exp_ratio(t * t * mu, 32.0 * m * m * params.eta * s2 + (16.0 / 3.0) * g * m * t)
    return first, second, math.exp(-mu / 4.0)


def two_stage_bound(params: TwoStageParams, t: float) -> float:
    """Upper bound on ``Pr(T - m mu_T >= t)`` for Poisson-then-without-replacement sampling."""
    return float(min(3.0, max(0.0, sum(two_stage_terms(params, t)))))


def ratio_terms(params: TwoStageParams, t: float, M: float | None = None) -> tuple[float, float]:
    if not t > 0:
        raise InconsistentParams(f"t must be > 0, got {t}")
    M = params.gamma if M is None else M
    if M < 0:
        raise InconsistentParams("M must be >= 0")
    n, m, mu = params.n, params.m, params.mu_N
    first = _exp_ratio(t * t * mu, 8.0 * m * m * n * params.w_max * params.var_A + (4.0 / 3.0) * M * m * t)
    return first, math.exp(-mu / 8.0)


def ratio_bound(params: TwoStageParams, t: float, M: float | None = None) -> float:
    """Upper bound on ``Pr(m (mu_S - mu_T) >= t)`` for the Poisson-sample mean ``mu_S``.

    ``M`` is the width of the population's range and defaults to ``gamma``.
    """
    return float(sum(ratio_terms(params, t, M)))


def chernoff_upper_tail(mean: float, eta: float) -> float:
    """``Pr(S >= (1 + eta) mean) <= exp(-eta^2 mean / (2 + eta))`` for Bernoulli sums."""
    return math.exp(-eta * eta * mean / (2.0 + eta))


def chernoff_lower_tail(mean: float, eta: float) -> float:
    """``Pr(S <= (1 - eta) mean) <= exp(-eta^2 mean / 2)``."""
    return math.exp(-eta * eta * mean / 2.0)


def _check_mc_scale(params: TwoStageParams, trials: int) -> None:
    if params.n > MAX_MC_POPULATION:
        raise ScaleTooLarge(f"population {params.n} exceeds {MAX_MC_POPULATION}", operation="mc_tail")
    if trials < MIN_REPORTED_TRIALS:
        raise ScaleTooLarge(f"need at least {MIN_REPORTED_TRIALS} trials, got {trials}",
                            operation="mc_tail")


def _poisson_draws(params: TwoStageParams, trials: int, rng: NoiseSource) -> np.ndarray:
    p = np.asarray(params.p)
    return rng.uniform((trials, params.n)) < p


def two_stage_deviations(params: TwoStageParams, trials: int, rng: NoiseSource) -> np.ndarray:
    """Simulated ``T - m mu_T`` per trial; ``+inf`` where fewer than ``m`` units were sampled."""
    a = np.asarray(params.A)
    m = params.m
    out = np.empty(trials)
    for start in range(0, trials, CHUNK // 8):
        size = min(CHUNK // 8, trials - start)
        sel = _poisson_draws(params, size, rng)
        # uniform keys on the selected units; the m smallest form a uniform WOR subsample
        keys = np.where(sel, rng.uniform((size, params.n)), np.inf)
        idx = np.argpartition(keys, m - 1, axis=1)[:, :m] if m < params.n else np.argsort(keys, axis=1)
        total = a[idx].sum(axis=1)
        ok = sel.sum(axis=1) >= m
        out[start:start + size] = np.where(ok, total - m * params.mu_T, np.inf)
    return out


def ratio_deviations(params: TwoStageParams, trials: int, rng: NoiseSource) -> np.ndarray:
    """Simulated ``m (mu_S - mu_T)``; ``+inf`` where nothing was sampled."""
    a = np.asarray(params.A)
    out = np.empty(trials)
    for start in range(0, trials, CHUNK // 8):
        size = min(CHUNK // 8, trials - start)
        sel = _poisson_draws(params, size, rng)
        count = sel.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (sel * a).sum(axis=1) / count
        out[start:start + size] = np.where(count > 0, params.m * (mean - params.mu_T), np.inf)
    return out


def _tail(dev: np.ndarray, t):
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    frac = (dev[None, :] >= ts[:, None]).mean(axis=1)
    return float(frac[0]) if np.ndim(t) == 0 else frac


def mc_tail(params: TwoStageParams, t, trials: int, rng: NoiseSource):
    """Empirical ``Pr(T - m mu_T >= t)``; draws with fewer than ``m`` sampled units count as exceedances.

    ``t`` may be a scalar or an array (all thresholds share one simulation).
    """
    _check_mc_scale(params, trials)
    return _tail(two_stage_deviations(params, trials, rng), t)


def mc_ratio_tail(params: TwoStageParams, t, trials: int, rng: NoiseSource):
    """Empirical ``Pr(m (mu_S - mu_T) >= t)``; empty samples count as exceedances."""
    _check_mc_scale(params, trials)
    return _tail(ratio_deviations(params, trials, rng), t)


def mc_standard_error(prob, trials: int):
    """Binomial standard error, floored at ``1/trials`` so a zero estimate keeps some slack."""
    pr = np.asarray(prob, dtype=float)
    return np.maximum(np.sqrt(pr * (1.0 - pr) / trials), 1.0 / trials)


def random_instance(rng: NoiseSource, max_n: int = 30, max_m: int = 10) -> TwoStageParams:
    """A random small instance with ``m <= max(1, floor(mu_N / 2))``."""
    n = int(rng.choice(np.arange(2, max_n + 1), 1)[0])
    p = 0.05 + 0.95 * rng.uniform(n)
    kind = int(rng.choice(np.arange(3), 1)[0])
    if kind == 0:
        a = rng.uniform(n)
    elif kind == 1:
        a = (rng.uniform(n) < 0.5).astype(float)
    else:
        a = np.round(rng.uniform(n) * 4) / 4
    cap = max(1, min(max_m, int(math.floor(float(p.sum()) / 2))))
    m = int(rng.choice(np.arange(1, cap + 1), 1)[0])
    return TwoStageParams(tuple(p), tuple(a), m)
