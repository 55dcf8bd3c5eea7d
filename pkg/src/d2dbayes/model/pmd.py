"""Poisson-multinomial distribution: moments, exact pmf (small N), and the
moment-matched multinomial used in the anonymised hierarchical likelihood."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

MAX_ENUMERATION_N = 10


def _probs(probs) -> np.ndarray:
    P = np.atleast_2d(np.asarray(probs, dtype=float))
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("each probability vector must be nonnegative and sum to 1")
    return P


def pmd_moments(probs):
    """Mean and covariance of the sum of independent categorical indicators."""
    P = _probs(probs)
    mean = P.sum(axis=0)
    cov = np.diag(mean) - P.T @ P
    return mean, cov


def multinomial_moments(n: int, p):
    p = np.asarray(p, dtype=float)
    return n * p, n * (np.diag(p) - np.outer(p, p))


def pmd_approx_moments(probs):
    """Moments of Multinomial(N, mean of the N probability vectors)."""
    P = _probs(probs)
    return multinomial_moments(P.shape[0], P.mean(axis=0))


def pmd_exact_pmf(probs, outcome, max_n: int = MAX_ENUMERATION_N) -> float:
    """Exact P(counts == outcome), by convolving commuters one at a time.

    The dynamic programme sums over the same assignments a brute-force
    enumeration would, grouped by partial count vector.
    """
    P = _probs(probs)
    N, K = P.shape
    if N > max_n:
        raise ValueError(f"exact PMD limited to N <= {max_n}, got {N}")
    outcome = tuple(int(x) for x in outcome)
    if len(outcome) != K:
        raise ValueError(f"outcome must have {K} entries")
    if min(outcome) < 0 or sum(outcome) != N:
        return 0.0
    dist = {tuple([0] * K): 1.0}
    for n in range(N):
        nxt = defaultdict(float)
        for state, pr in dist.items():
            for k in range(K):
                if P[n, k] == 0.0 or state[k] >= outcome[k]:
                    continue
                s = list(state)
                s[k] += 1
                nxt[tuple(s)] += pr * P[n, k]
        dist = nxt
    return float(dist.get(outcome, 0.0))
