"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools
import math


def change_distance(values, rank, y):
    """Fewest elements to overwrite so the rank-th smallest equals y (exhaustive search)."""
    n = len(values)
    lo, hi = min(min(values), y) - 1.0, max(max(values), y) + 1.0
    for d in range(n + 1):
        for subset in itertools.combinations(range(n), d):
            for repl in itertools.product((lo, y, hi), repeat=d):
                trial = list(values)
                for i, v in zip(subset, repl):
                    trial[i] = v
                if sorted(trial)[rank - 1] == y:
                    return d
    raise AssertionError("unreachable")


def saturation_loop(eps):
    """(k, tau) by scanning every prefix with running sums."""
    n = len(eps)
    s1 = s2 = 0.0
    for j in range(1, n + 1):
        s1 += eps[j - 1]
        s2 += eps[j - 1] * eps[j - 1]
        tau = (s2 + 8.0) / s1
        if j < n and eps[j] >= tau:
            return j, tau
    return n, tau


def lower_bound_loop(eps, sigma):
    """max over k of sigma / (sqrt(2) (prefix sum + 2 sqrt(n - k))), first maximizer."""
    n = len(eps)
    best, arg, s = -1.0, 0, 0.0
    for k in range(1, n + 1):
        s += eps[k - 1]
        term = sigma / (math.sqrt(2.0) * (s + 2.0 * math.sqrt(n - k)))
        if term > best:
            best, arg = term, k
    return best, arg
