import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pdpmean.audit import (
    INFINITE,
    AuditConfig,
    TwoStageParams,
    chernoff_lower_tail,
    chernoff_upper_tail,
    diffusion_audit,
    epsilon_hat_from_counts,
    estimate_epsilon_hat,
    histogram_pair,
    laplace_count_mechanism,
    mc_ratio_tail,
    mc_standard_error,
    mc_tail,
    random_instance,
    ratio_bound,
    ratio_terms,
    size_mechanism,
    two_stage_bound,
    two_stage_terms,
)
from pdpmean.core import Dataset, NoiseSource
from pdpmean.diffusion import effective_budget
from pdpmean.errors import DegenerateBinning, InconsistentParams, PreconditionError, ScaleTooLarge

D = Dataset([1.0, 2.0, -1.0, 3.0], np.ones(4))
D_CHANGED = Dataset([1.0, 2.0, -1.0, -3.0], np.ones(4))
D_REMOVED = Dataset([1.0, 2.0, -1.0], np.ones(3))


def test_audit_config_validation():
    with pytest.raises(PreconditionError):
        AuditConfig(bins=1)
    with pytest.raises(PreconditionError):
        AuditConfig(smoothing=-1.0)


def test_identical_inputs_give_small_loss():
    cfg = AuditConfig(trials=10**6)
    assert estimate_epsilon_hat(laplace_count_mechanism(0.5), D, D, cfg, NoiseSource(1)) <= 0.02


def test_laplace_count_within_guarantee():
    cfg = AuditConfig(trials=10**6)
    eps_hat = estimate_epsilon_hat(laplace_count_mechanism(0.5), D, D_CHANGED, cfg, NoiseSource(2))
    assert 0.3 <= eps_hat <= 0.5 + cfg.slack


def test_size_mechanism_is_infinite():
    cfg = AuditConfig(trials=10**5)
    assert estimate_epsilon_hat(size_mechanism, D, D_REMOVED, cfg, NoiseSource(3)) == INFINITE


def test_degenerate_binning():
    with pytest.raises(DegenerateBinning):
        estimate_epsilon_hat(size_mechanism, D, D, AuditConfig(trials=10**4), NoiseSource(4))


def test_histogram_pair_explicit_edges_and_categories():
    ha, hb = histogram_pair(np.array([0.0, 0.5, 2.0]), np.array([3.0]), [0.0, 1.0, 2.5, 4.0])
    assert list(ha) == [2, 1, 0] and list(hb) == [0, 0, 1]
    ha, hb = histogram_pair(np.array([0.0, 1.0, 1.0]), np.array([1.0]), 10)
    assert list(ha) == [1, 2] and list(hb) == [0, 1]


def test_epsilon_hat_from_counts():
    assert epsilon_hat_from_counts([50, 50], [50, 50]) == 0.0
    assert epsilon_hat_from_counts([99, 1], [1, 99], smoothing=0.0) == pytest.approx(math.log(99))
    assert epsilon_hat_from_counts([10**6, 0], [5 * 10**5, 5 * 10**5]) == INFINITE


def test_histogram_merge_by_sum():
    rng = NoiseSource(5)
    a, b = rng.normal(0, 1, 1000), rng.normal(0, 1, 1000)
    edges = [-10.0, -1.0, 0.0, 1.0, 10.0]
    whole = histogram_pair(a, b, edges)
    half1 = histogram_pair(a[:400], b[:400], edges)
    half2 = histogram_pair(a[400:], b[400:], edges)
    assert np.array_equal(whole[0], half1[0] + half2[0])
    assert np.array_equal(whole[1], half1[1] + half2[1])


@pytest.mark.parametrize("tau", [0.5, 1.0])
def test_diffusion_audit_respects_effective_budget(tau):
    cfg = AuditConfig(trials=10**6)
    rates = [0.1, 0.25, 0.5, 0.8, 1.0]
    for i in range(5):
        got = diffusion_audit([1, 0, 1, 1, 0], i, rates, tau, cfg, NoiseSource(6, i))
        assert got <= effective_budget(rates[i], tau) + cfg.slack


def params(p, a, m):
    return TwoStageParams(tuple(p), tuple(a), m)


def test_params_derived_fields():
    P = params([0.5, 0.5, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0], 2)
    assert P.mu_N == 3.0 and P.mu_T == pytest.approx(0.5)
    assert P.gamma == 1.0 and P.var_A == 0.25
    assert P.eta == pytest.approx(4 / 3) and P.w_max == pytest.approx(1 / 3)


@pytest.mark.parametrize("p,a,m", [([0.0], [0.5], 1), ([0.5], [1.5], 1), ([0.5, 0.5], [0.5], 1),
                                   ([0.5], [0.5], 0)])
def test_params_inconsistent(p, a, m):
    with pytest.raises(InconsistentParams):
        params(p, a, m)


def test_two_stage_limits():
    P = params([0.5] * 8, [0.0, 1.0] * 4, 2)
    assert P.mu_N == 4.0
    assert two_stage_bound(P, 1e12) == pytest.approx(math.exp(-1))
    assert sum(two_stage_terms(P, 1e-12)) >= 2 + math.exp(-1) - 1e-9
    with pytest.raises(InconsistentParams):
        two_stage_bound(P, 0.0)


def test_two_stage_strictly_decreasing():
    P = params([0.5] * 20, [0.0, 1.0] * 10, 5)
    vals = [sum(two_stage_terms(P, t)) for t in np.linspace(0.1, 10, 50)]
    assert np.all(np.diff(vals) < 0)


def test_ratio_limit_and_monotone():
    P = params([0.5] * 10, [0.3] * 10, 3)
    assert ratio_bound(P, 1.0, M=0.0) == pytest.approx(math.exp(-P.mu_N / 8))
    Q = params([0.3, 0.7, 0.9, 0.5], [0.0, 0.2, 1.0, 0.6], 2)
    for t in np.linspace(0.05, 5, 30):
        assert ratio_bound(Q, 2 * t) <= ratio_bound(Q, t)


def test_ratio_matches_two_stage_second_term():
    rng = NoiseSource(7)
    for _ in range(10):
        P = random_instance(rng)
        t = float(0.1 + 5 * rng.uniform(1)[0])
        # with eta = n * w_max the second two-stage term is the ratio term at t/2 and M = 2 gamma
        assert P.eta == pytest.approx(P.n * P.w_max)
        assert ratio_terms(P, t / 2, M=2 * P.gamma)[0] == pytest.approx(two_stage_terms(P, t)[1], rel=1e-12)


@settings(max_examples=100)
@given(st.integers(1, 200), st.floats(0.01, 0.99), st.floats(0.01, 3.0))
def test_chernoff_dominates_exact_binomial(n, q, eta):
    mean = n * q
    upper = stats.binom.sf(math.ceil((1 + eta) * mean) - 1, n, q)
    assert upper <= chernoff_upper_tail(mean, eta) + 1e-12
    if eta < 1:
        lower = stats.binom.cdf(math.floor((1 - eta) * mean), n, q)
        assert lower <= chernoff_lower_tail(mean, eta) + 1e-12


def test_mc_tail_constant_population():
    P = params([1.0] * 6, [0.4] * 6, 3)
    assert mc_tail(P, 1e-9, 10**4, NoiseSource(8)) == 0.0


def test_mc_tail_alternating_example():
    P = params([0.5] * 20, [0.0, 1.0] * 10, 5)
    ts = np.linspace(0.25, 5, 10)
    emp = mc_tail(P, ts, 10**5, NoiseSource(9))
    assert np.all(emp <= [two_stage_bound(P, t) for t in ts])


def test_mc_tail_scale_guard():
    P = params([0.5] * 4, [0.0, 1.0] * 2, 1)
    with pytest.raises(ScaleTooLarge):
        mc_tail(P, 0.5, 10**3, NoiseSource(1))
    with pytest.raises(ScaleTooLarge):
        mc_tail(params([0.5] * 65, [0.5] * 65, 1), 0.5, 10**4, NoiseSource(1))


def test_mc_tail_counts_failed_draws():
    # m = n with p < 1: a full subsample is rare, and the failures count as exceedances
    P = params([0.1] * 4, [0.0, 1.0] * 2, 4)
    assert mc_tail(P, 100.0, 10**4, NoiseSource(10)) > 0.99


def test_mc_tail_scalar_and_array_agree():
    P = params([0.6] * 10, [0.0, 1.0] * 5, 3)
    arr = mc_tail(P, np.array([0.5, 1.0]), 10**4, NoiseSource(11))
    assert mc_tail(P, 1.0, 10**4, NoiseSource(11)) == arr[1]


def test_standard_error_floor():
    assert mc_standard_error(0.0, 10**5) == 1e-5
    assert mc_standard_error(0.5, 100) == pytest.approx(0.05)


def test_random_instance_shape():
    rng = NoiseSource(12)
    for _ in range(50):
        P = random_instance(rng)
        assert 2 <= P.n <= 30 and 1 <= P.m <= 10
        assert P.m <= max(1, P.mu_N // 2)


def test_bounds_are_sound_on_random_instances():
    rng = NoiseSource(13)
    for i in range(20):
        P = random_instance(rng)
        ts = np.linspace(P.m * max(P.gamma, 1e-9) / 10, P.m * max(P.gamma, 1e-9), 10)
        for tail, bound in ((mc_tail, two_stage_bound), (mc_ratio_tail, ratio_bound)):
            emp = tail(P, ts, 10**4, rng.spawn(100 + i))
            b = np.array([bound(P, t) for t in ts])
            assert np.all(emp <= b + 3 * mc_standard_error(emp, 10**4))
