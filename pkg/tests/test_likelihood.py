import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln
from scipy.stats import multinomial

from d2dbayes.dynamics import ChoiceTrajectory, CountSeries, anonymize, choice_probabilities, simulate_pooled
from d2dbayes.model import (
    loglik_hier,
    loglik_hier_counts_approx,
    loglik_pooled,
    loglik_pooled_counts,
    multinomial_log_coef,
)
from d2dbayes.network import CostSequence
from d2dbayes.params import IndividualParams, PooledParams

from conftest import random_costs


def _oracle_one(eta, theta, rho, v1, costs, choices):
    """Step-by-step product of per-day probabilities for one commuter."""
    v = np.array(v1, dtype=float)
    ll = 0.0
    for t, x in enumerate(choices):
        p = np.empty(len(v) + 1)
        p[0] = rho
        w = np.exp(-theta * v)
        p[1:] = (1 - rho) * w / w.sum()
        ll += math.log(p[x])
        v = (1 - eta) * v + eta * costs[t]
    return ll


def test_pooled_single_term():
    costs = CostSequence([[4.0, 9.0]])
    p = PooledParams(0.3, 1.0, 0.5)
    assert loglik_pooled(p, ChoiceTrajectory([[0]], 2), costs) == pytest.approx(math.log(0.5), abs=1e-15)
    assert loglik_pooled(p, ChoiceTrajectory([[1]], 2), costs) == pytest.approx(math.log(0.25), abs=1e-15)


def test_pooled_matches_product_oracle(rng):
    costs = random_costs(rng, 3, 3)
    x = np.array([[1, 0, 3], [2, 2, 1]])
    got = loglik_pooled(PooledParams(0.3, 1.0, 0.1), ChoiceTrajectory(x, 3), costs)
    want = sum(_oracle_one(0.3, 1.0, 0.1, np.zeros(3), costs.costs, row) for row in x)
    assert got == pytest.approx(want, abs=1e-10)


def test_pooled_delta_sets_initial_values(rng):
    costs = random_costs(rng, 6, 3)
    x = rng.integers(0, 4, size=(4, 6))
    d = np.array([1.5, -2.0])
    got = loglik_pooled(PooledParams(0.2, 0.7, 0.15, d), ChoiceTrajectory(x, 3), costs)
    want = sum(_oracle_one(0.2, 0.7, 0.15, [0.0, 1.5, -2.0], costs.costs, row) for row in x)
    assert got == pytest.approx(want, abs=1e-10)


def test_counts_example():
    costs = CostSequence([[5.0, 5.0]])
    # rho -> 0 is outside the open interval; the non-travel count is zero so log rho never enters
    ll = loglik_pooled_counts(PooledParams(0.3, 1.0, 1e-300), CountSeries([[0, 2, 1]]), costs)
    assert ll == pytest.approx(math.log(3) - 3 * math.log(2), abs=1e-12)


def test_counts_equal_trajectory_plus_coefficient(rng):
    costs = random_costs(rng, 7, 3)
    x = simulate_pooled(PooledParams(0.3, 0.9, 0.2), np.zeros(3), costs, 6, rng_seed=1)
    o = anonymize(x)
    for _ in range(10):
        p = PooledParams(rng.uniform(0.05, 0.95), rng.uniform(0.1, 3), rng.uniform(0.05, 0.6))
        lhs = loglik_pooled_counts(p, o, costs)
        rhs = loglik_pooled(p, x, costs) + multinomial_log_coef(o.counts)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_counts_vs_multinomial_pmf(rng):
    costs = random_costs(rng, 2, 2)
    p = PooledParams(0.4, 0.6, 0.2)
    o = np.array([[1, 2, 1], [0, 1, 3]])
    want = 0.0
    v = np.zeros(2)
    for t in range(2):
        want += multinomial.logpmf(o[t], 4, choice_probabilities(v, 0.6, 0.2))
        v = 0.6 * v + 0.4 * costs.costs[t]
    assert loglik_pooled_counts(p, CountSeries(o), costs) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("N,M", [(1, 2), (3, 2), (4, 3), (2, 3)])
def test_counts_pmf_normalises(N, M, rng):
    costs = random_costs(rng, 1, M)
    p = PooledParams(0.3, rng.uniform(0.1, 2), rng.uniform(0.05, 0.5))
    total = 0.0
    for o in itertools.product(range(N + 1), repeat=M + 1):
        if sum(o) == N:
            total += math.exp(loglik_pooled_counts(p, CountSeries([list(o)]), costs))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_multinomial_log_coef():
    o = np.array([[1, 2, 3], [0, 0, 6]])
    assert multinomial_log_coef(o) == pytest.approx(
        gammaln(7) - gammaln(2) - gammaln(3) - gammaln(4), abs=1e-12
    )


def test_hier_degenerate_and_single(rng):
    costs = random_costs(rng, 8, 3)
    x = ChoiceTrajectory(rng.integers(0, 4, size=(5, 8)), 3)
    shared = IndividualParams.repeat(0.25, 0.8, 0.1, 5)
    assert loglik_hier(shared, x, costs) == pytest.approx(loglik_pooled(PooledParams(0.25, 0.8, 0.1), x, costs), abs=1e-10)
    one = ChoiceTrajectory(x.choices[:1], 3)
    ind = IndividualParams(np.array([0.6]), np.array([1.7]), np.array([0.3]))
    assert loglik_hier(ind, one, costs) == pytest.approx(loglik_pooled(PooledParams(0.6, 1.7, 0.3), one, costs), abs=1e-10)


def test_hier_matches_per_commuter_oracle(rng):
    costs = random_costs(rng, 6, 3)
    x = rng.integers(0, 4, size=(3, 6))
    eta, theta, rho = np.array([0.1, 0.5, 0.8]), np.array([0.3, 1.0, 2.2]), np.array([0.05, 0.2, 0.4])
    got = loglik_hier(IndividualParams(eta, theta, rho), ChoiceTrajectory(x, 3), costs)
    want = sum(_oracle_one(eta[n], theta[n], rho[n], np.zeros(3), costs.costs, x[n]) for n in range(3))
    assert got == pytest.approx(want, abs=1e-10)


def test_hier_counts_homogeneous_equals_pooled_counts(rng):
    costs = random_costs(rng, 5, 3)
    o = CountSeries(rng.multinomial(7, [0.1, 0.3, 0.3, 0.3], size=5))
    shared = IndividualParams.repeat(0.4, 1.3, 0.2, 7)
    a = loglik_hier_counts_approx(shared, o, costs)
    b = loglik_pooled_counts(PooledParams(0.4, 1.3, 0.2), o, costs)
    assert a == pytest.approx(b, abs=1e-10)


def test_hier_counts_uses_mean_probabilities(rng):
    costs = random_costs(rng, 4, 2)
    o = rng.multinomial(3, [0.2, 0.4, 0.4], size=4)
    eta, theta, rho = np.array([0.2, 0.5, 0.7]), np.array([0.4, 0.9, 1.5]), np.array([0.1, 0.2, 0.3])
    want = 0.0
    V = np.zeros((3, 2))
    for t in range(4):
        pbar = np.mean([choice_probabilities(V[n], theta[n], rho[n]) for n in range(3)], axis=0)
        want += multinomial.logpmf(o[t], 3, pbar)
        V = (1 - eta[:, None]) * V + eta[:, None] * costs.costs[t]
    got = loglik_hier_counts_approx(IndividualParams(eta, theta, rho), CountSeries(o), costs)
    assert got == pytest.approx(want, abs=1e-10)


@given(st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_trajectory_minus_counts_loglik_is_constant(seed):
    rng = np.random.default_rng(seed)
    costs = random_costs(rng, 10, 3)
    x = simulate_pooled(PooledParams(0.3, 1.0, 0.2), np.zeros(3), costs, 5, rng_seed=seed)
    o = anonymize(x)
    diffs = []
    for _ in range(8):
        p = PooledParams(rng.uniform(0.01, 0.99), rng.uniform(0.05, 5), rng.uniform(0.01, 0.9))
        diffs.append(loglik_pooled(p, x, costs) - loglik_pooled_counts(p, o, costs))
    assert np.ptp(diffs) < 1e-9


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.1, 3), st.floats(0.05, 0.9), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_eta_unidentified_without_richness(e1, e2, theta, rho, seed):
    rng = np.random.default_rng(seed)
    T = 6
    level = rng.uniform(5, 20, size=(T, 1))
    costs = CostSequence(np.repeat(level, 3, axis=1))
    x = ChoiceTrajectory(rng.integers(0, 4, size=(4, T)), 3)
    a = loglik_pooled(PooledParams(e1, theta, rho), x, costs)
    b = loglik_pooled(PooledParams(e2, theta, rho), x, costs)
    assert abs(a - b) < 1e-12


@given(st.floats(-50, 50), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_common_shift_of_initial_values(K, seed):
    rng = np.random.default_rng(seed)
    costs = random_costs(rng, 8, 3)
    x = ChoiceTrajectory(rng.integers(0, 4, size=(3, 8)), 3)
    p = PooledParams(0.3, 0.8, 0.2)
    v1 = rng.uniform(0, 5, 3)
    a = loglik_pooled(p, x, costs, v1=v1)
    b = loglik_pooled(p, x, costs, v1=v1 + K)
    assert abs(a - b) < 1e-12 * max(1.0, abs(a)) * 10


def test_expected_loglik_peaks_at_truth(bg_costs):
    truth = PooledParams(0.3, 0.8, 0.15)
    x = simulate_pooled(truth, np.zeros(3), bg_costs, 20_000, rng_seed=3)
    o = anonymize(x)
    base = loglik_pooled_counts(truth, o, bg_costs)
    for alt in [(0.5, 0.8, 0.15), (0.3, 1.2, 0.15), (0.3, 0.8, 0.25), (0.1, 0.5, 0.15)]:
        assert loglik_pooled_counts(PooledParams(*alt), o, bg_costs) < base


def test_dimension_mismatch_rejected(rng):
    costs = random_costs(rng, 4, 3)
    with pytest.raises(ValueError):
        loglik_pooled(PooledParams(0.3, 1, 0.1), ChoiceTrajectory(np.zeros((2, 5), int), 3), costs)
    with pytest.raises(ValueError):
        loglik_pooled(PooledParams(0.3, 1, 0.1), ChoiceTrajectory(np.zeros((2, 4), int), 2), costs)
    with pytest.raises(ValueError):
        PooledParams(1.0, 1, 0.1)
