import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dbayes.dynamics import simulate_pooled
from d2dbayes.model import DataBlock, PosteriorModel
from d2dbayes.params import PooledParams
from d2dbayes.sampler import (
    SamplerConfig,
    SamplerError,
    diagnose,
    ess,
    nuts_sample,
    rank_of_truth,
    sample_posterior,
    split_rhat,
)

from conftest import random_costs


def std_normal(q):
    return -0.5 * float(q @ q), -q


def test_config_validation():
    for bad in (dict(chains=0), dict(warmup=50), dict(draws=0), dict(target_accept=0.5),
                dict(target_accept=1.0), dict(max_tree_depth=13)):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)


def test_conjugate_normal_mean():
    # y_i ~ N(mu, 1), mu ~ N(0, 10^2)
    rng = np.random.default_rng(0)
    y = rng.normal(1.7, 1.0, 25)
    prec = 1 / 100 + y.size
    post_mean, post_sd = y.sum() / prec, prec ** -0.5

    def f(q):
        mu = q[0]
        return -0.5 * mu * mu / 100 - 0.5 * float(np.sum((y - mu) ** 2)), np.array([-mu / 100 + np.sum(y - mu)])

    d = nuts_sample(f, 1, SamplerConfig(chains=4, warmup=500, draws=1000, seed=3))
    e = ess(d.by_chain())[0]
    assert abs(d.samples[:, 0].mean() - post_mean) < 3 * post_sd / np.sqrt(e)
    assert d.samples[:, 0].std() == pytest.approx(post_sd, rel=0.1)


def test_determinism():
    cfg = SamplerConfig(chains=2, warmup=150, draws=100, seed=42)
    a = nuts_sample(std_normal, 3, cfg)
    b = nuts_sample(std_normal, 3, cfg)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.step_size, b.step_size)
    c = nuts_sample(std_normal, 3, SamplerConfig(chains=2, warmup=150, draws=100, seed=43))
    assert not np.array_equal(a.samples, c.samples)


def test_correlated_gaussian_covariance():
    S = np.array([[1.0, 0.8], [0.8, 2.0]])
    P = np.linalg.inv(S)

    def f(q):
        g = -P @ q
        return 0.5 * float(q @ g), g

    d = nuts_sample(f, 2, SamplerConfig(chains=4, warmup=500, draws=2000, seed=1))
    C = np.cov(d.samples.T)
    assert np.linalg.norm(C - S) / np.linalg.norm(S) < 0.15


def test_draw_layout_and_metadata():
    d = nuts_sample(std_normal, 2, SamplerConfig(chains=3, warmup=100, draws=50, seed=0), names=["a", "b"])
    assert d.samples.shape == (150, 2)
    np.testing.assert_array_equal(d.chain_id, np.repeat([0, 1, 2], 50))
    assert d.by_chain().shape == (3, 50, 2)
    assert d.step_size.shape == (3,) and d.inv_mass.shape == (3, 2)
    np.testing.assert_array_equal(d.column("b"), d.samples[:, 1])


def test_initialisation_failure():
    def bad(q):
        return -np.inf, np.zeros_like(q)

    with pytest.raises(SamplerError):
        nuts_sample(bad, 2, SamplerConfig(chains=1, warmup=100, draws=10))


def test_pooled_posterior_draws_in_range(rng):
    costs = random_costs(rng, 12, 3)
    x = simulate_pooled(PooledParams(0.3, 1.0, 0.2), np.zeros(3), costs, 6, rng_seed=0)
    m = PosteriorModel(DataBlock(x, costs))
    d = sample_posterior(m, SamplerConfig(chains=2, warmup=200, draws=200, seed=5))
    assert d.names == ["eta", "theta", "rho"]
    assert np.all((d.samples[:, 0] > 0) & (d.samples[:, 0] < 1))
    assert np.all(d.samples[:, 1] > 0)
    assert np.all((d.samples[:, 2] > 0) & (d.samples[:, 2] < 1))
    dg = diagnose(d)
    # the split statistic is bounded below by sqrt((n-1)/n), n = half-chain length
    assert np.all(dg.split_rhat >= np.sqrt(99 / 100)) and np.all(dg.ess <= d.samples.shape[0] * 1.5)


# --- diagnostics -----------------------------------------------------------------------

def test_rhat_iid_and_constant_chains():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert 0.99 <= split_rhat(x)[0] <= 1.01
    assert split_rhat(np.array([np.zeros(10), np.ones(10)]))[0] == np.inf
    with pytest.raises(ValueError):
        split_rhat(np.zeros((2, 10)))
    with pytest.raises(ValueError):
        split_rhat(np.zeros((1, 10)))


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_rhat_within_chain_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 40)) + rng.normal(size=(3, 1))
    # permuting within each split half leaves every half's mean and variance unchanged
    y = x.copy()
    for c in range(3):
        y[c, :20] = rng.permutation(y[c, :20])
        y[c, 20:] = rng.permutation(y[c, 20:])
    np.testing.assert_allclose(split_rhat(x), split_rhat(y), rtol=1e-12)


def test_ess_iid_ar1_constant():
    rng = np.random.default_rng(1)
    assert ess(rng.standard_normal((4, 1000)))[0] >= 0.8 * 4000
    phi, n = 0.9, 5000
    x = np.empty((4, n))
    for c in range(4):
        e = rng.standard_normal(n)
        x[c, 0] = e[0] / np.sqrt(1 - phi**2)
        for t in range(1, n):
            x[c, t] = phi * x[c, t - 1] + e[t]
    want = 4 * n * (1 - phi) / (1 + phi)
    assert want / 1.5 < ess(x)[0] < want * 1.5
    with pytest.raises(ValueError):
        ess(np.ones((2, 10)))


def test_rank_of_truth():
    d = np.array([1.0, 2.0, 3.0, 3.0])
    assert rank_of_truth(d, 0.0) == 0.0
    assert rank_of_truth(d, 9.0) == 1.0
    assert rank_of_truth(d, 3.0) == pytest.approx((2 + 0.5 * 2) / 4)
