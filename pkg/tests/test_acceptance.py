"""Acceptance gate: thirteen criteria at their stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v`` (about an hour on one
core; criterion 9 dominates) or ``python tests/test_acceptance.py``.  Each
criterion prints a single PASS/FAIL line in the terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import kstest

from d2dbayes.dynamics import ChoiceTrajectory, anonymize, horowitz_shares, simulate_hierarchical, simulate_horowitz, simulate_pooled
from d2dbayes.experiments import RecoveryConfig, background_costs, run_anonymized_comparison, run_hier_recovery, run_pooled_recovery
from d2dbayes.inference import hdi, logit_contrast, rope_test
from d2dbayes.model import (
    DataBlock,
    PosteriorModel,
    grad_log_posterior,
    log_posterior,
    loglik_pooled,
    loglik_pooled_counts,
    pmd_approx_moments,
    pmd_exact_pmf,
    pmd_moments,
)
from d2dbayes.network import CostSequence, check_richness
from d2dbayes.params import HyperParams, PooledParams
from d2dbayes.sampler import SamplerConfig, ess, nuts_sample, sample_posterior, split_rhat

from conftest import ACCEPTANCE

SIGMAS = ("sigma_eta", "sigma_theta", "sigma_rho")


def report(k, ok, detail):
    ACCEPTANCE[k] = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[k])
    assert ok, detail


@pytest.fixture(scope="module")
def costs50():
    return background_costs(50, 0)


# 1 -------------------------------------------------------------------------------------
def test_c01_counts_and_trajectory_likelihoods_differ_by_a_constant():
    rng = np.random.default_rng(1)
    costs = CostSequence(rng.uniform(5, 30, size=(20, 3)))
    x = simulate_pooled(PooledParams(0.3, 1.0, 0.2), np.zeros(3), costs, 5, rng_seed=1)
    o = anonymize(x)
    t0 = time.perf_counter()
    diffs = []
    for _ in range(100):
        p = PooledParams(rng.uniform(0.01, 0.99), float(np.exp(rng.normal(0, 1))), rng.uniform(0.01, 0.95))
        diffs.append(loglik_pooled(p, x, costs) - loglik_pooled_counts(p, o, costs))
    dt = time.perf_counter() - t0
    spread = float(np.ptp(diffs))
    report(1, spread < 1e-9 and dt < 5, f"max-min difference {spread:.2e} (< 1e-9), {dt:.2f} s (< 5 s)")


# 2 -------------------------------------------------------------------------------------
def _fd(f, u, h=1e-6):
    out = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        out[i] = (f(u + e) - f(u - e)) / (2 * h)
    return out


def test_c02_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(25):
        rng = np.random.default_rng(100 + s)
        costs = CostSequence(rng.uniform(5, 30, size=(int(rng.integers(5, 20)), 3)))
        if s < 20:
            obs = simulate_pooled(PooledParams(0.3, 1.0, 0.2), np.zeros(3), costs, int(rng.integers(2, 8)), rng_seed=s)
            regime = ("pooled-complete", "pooled-counts")[s % 2]
            obs = anonymize(obs) if regime == "pooled-counts" else obs
            m = PosteriorModel(DataBlock(obs, costs), regime, init_values="delta" if s % 3 == 0 else "zeros")
        else:
            _, obs = simulate_hierarchical(HyperParams(-1.5, 0.5, 0, 0.5, -2, 1), 5, np.zeros(3), costs, rng_seed=s)
            regime = ("hier-complete", "hier-counts")[s % 2]
            obs = anonymize(obs) if regime == "hier-counts" else obs
            m = PosteriorModel(DataBlock(obs, costs), regime)
        u = rng.normal(0, 0.8, m.dim)
        g = grad_log_posterior(u, m)
        fd = _fd(lambda v: log_posterior(v, m), u)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    dt = time.perf_counter() - t0
    report(2, worst < 1e-5 and dt < 30, f"worst relative error {worst:.2e} (< 1e-5), {dt:.1f} s (< 30 s)")


# 3 -------------------------------------------------------------------------------------
def test_c03_eta_unidentified_without_richness():
    rng = np.random.default_rng(3)
    level = rng.uniform(5, 25, size=(15, 1))
    costs = CostSequence(np.repeat(level, 3, axis=1))
    assert not check_richness(costs, np.zeros(3)).dynamic_richness
    x = ChoiceTrajectory(rng.integers(0, 4, size=(6, 15)), 3)
    a = loglik_pooled(PooledParams(0.1, 0.8, 0.2), x, costs)
    b = loglik_pooled(PooledParams(0.9, 0.8, 0.2), x, costs)
    report(3, abs(a - b) < 1e-12, f"|ll(eta=0.1) - ll(eta=0.9)| = {abs(a - b):.1e} (< 1e-12)")


# 4 -------------------------------------------------------------------------------------
def test_c04_empirical_shares_follow_horowitz():
    t0 = time.perf_counter()
    costs = background_costs(10, 4)
    eta, theta = 0.3, 0.5
    x = simulate_horowitz(eta, theta, np.zeros(3), costs, 10_000, rng_seed=4)
    emp = np.stack([np.bincount(x.choices[:, t], minlength=4)[1:] for t in range(10)]) / 10_000
    gap = np.max(np.abs(emp - horowitz_shares(eta, theta, np.zeros(3), costs)), axis=1)
    dt = time.perf_counter() - t0
    report(4, bool(np.all(gap < 0.02)) and dt < 10, f"max daily sup-gap {gap.max():.4f} (< 0.02), {dt:.2f} s (< 10 s)")


# 5 -------------------------------------------------------------------------------------
def test_c05_pmd_versus_multinomial_approximation():
    rng = np.random.default_rng(5)
    mean_err, min_eig, mass_err = 0.0, np.inf, 0.0
    for _ in range(50):
        N, M = int(rng.integers(1, 7)), int(rng.integers(2, 4))
        P = rng.dirichlet(np.ones(M + 1), size=N)
        m, c = pmd_moments(P)
        am, ac = pmd_approx_moments(P)
        mean_err = max(mean_err, float(np.max(np.abs(am - m))))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(ac - c))))
        total = sum(pmd_exact_pmf(P, o) for o in itertools.product(range(N + 1), repeat=M + 1) if sum(o) == N)
        mass_err = max(mass_err, abs(total - 1))
    ok = mean_err <= 1e-12 and min_eig >= -1e-10 and mass_err <= 1e-10
    report(5, ok, f"mean gap {mean_err:.1e}, min eigenvalue {min_eig:.2e}, pmf mass error {mass_err:.1e}")


# 6 -------------------------------------------------------------------------------------
def test_c06_hdi_equals_exhaustive_search():
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(200):
        S = int(rng.integers(2, 501))
        alpha = float(rng.uniform(0.05, 0.99))
        x = rng.standard_t(3, size=S)
        if rng.random() < 0.3:
            x = np.round(x, 1)
        k = int(math.floor(alpha * S + 1e-9))
        if not 1 <= k < S:
            alpha, k = 0.5, S // 2
            if k < 1:
                x, S, k = np.append(x, 0.0), S + 1, 1
        xs = np.sort(x)
        widths = [xs[i + k] - xs[i] for i in range(S - k)]
        i_best = min(range(S - k), key=lambda i: (widths[i], i))
        r = hdi(x, alpha)
        bad += (r.start, r.lower, r.upper) != (i_best, xs[i_best], xs[i_best + k])
    report(6, bad == 0, f"{bad} of 200 draw sets differ from the exhaustive window search")


# 7 -------------------------------------------------------------------------------------
def test_c07_sampler_calibration_on_standard_normal():
    t0 = time.perf_counter()
    d = nuts_sample(lambda q: (-0.5 * float(q @ q), -q), 1, SamplerConfig(chains=4, warmup=1000, draws=1000, seed=7))
    dt = time.perf_counter() - t0
    x = d.samples[:, 0]
    e = float(ess(d.by_chain())[0])
    rh = float(split_rhat(d.by_chain())[0])
    iid = float(ess(np.random.default_rng(7).standard_normal((4, 1000)))[0])
    ok = (abs(x.mean()) < 4 / math.sqrt(e) and abs(x.var() - 1) < 0.1 and 0.99 <= rh <= 1.01
          and iid >= 0.8 * 4000 and dt < 30)
    report(7, ok, f"mean {x.mean():+.4f} (bound {4 / math.sqrt(e):.4f}), var {x.var():.3f}, R-hat {rh:.4f}, "
                  f"ESS {e:.0f}, i.i.d. ESS {iid:.0f}/4000, {dt:.1f} s")


# 8 -------------------------------------------------------------------------------------
def test_c08_pooled_recovery():
    t0 = time.perf_counter()
    grid = ((10, 30), (3, 10), (3, 50), (1, 30), (5, 30), (20, 30))
    tab = run_pooled_recovery(RecoveryConfig(replications=50, grid=grid, seed=8))
    dt = time.perf_counter() - t0
    params = ("eta", "theta", "rho")
    cov = {p: tab.get(10, 30, p)["coverage"] for p in params}
    bias = {p: (tab.mean_abs_bias(3, 10, p), tab.mean_abs_bias(3, 50, p)) for p in params}
    width = {p: [tab.get(N, 30, p)["width"] for N in (1, 5, 20)] for p in params}
    ok = (all(0.86 <= c <= 1.0 for c in cov.values())
          and all(b50 < b10 for b10, b50 in bias.values())
          and all(w[0] > w[1] > w[2] for w in width.values())
          and dt < 1800)
    report(8, ok, "coverage " + ", ".join(f"{p} {c:.2f}" for p, c in cov.items())
           + "; |bias| T=10->50 " + ", ".join(f"{p} {a:.3f}->{b:.3f}" for p, (a, b) in bias.items())
           + "; width N=1,5,20 " + ", ".join(f"{p} " + "/".join(f"{v:.2f}" for v in w) for p, w in width.items())
           + f"; {dt / 60:.1f} min")


# 9 -------------------------------------------------------------------------------------
def test_c09_hierarchical_recovery():
    t0 = time.perf_counter()
    grid = ((30, 30), (10, 30), (50, 30), (30, 50))
    tab = run_hier_recovery(RecoveryConfig(replications=20, grid=grid, regime="hier-complete", seed=9))
    dt = time.perf_counter() - t0
    b = {c: {p: tab.mean_abs_bias(*c, p) for p in SIGMAS} for c in grid}
    gain_n = float(np.mean([b[(10, 30)][p] - b[(50, 30)][p] for p in SIGMAS]))
    gain_t = float(np.mean([b[(30, 30)][p] - b[(30, 50)][p] for p in SIGMAS]))
    ok = all(b[(30, 30)][p] < 0.3 for p in SIGMAS) and gain_n > gain_t and dt < 3600
    report(9, ok, "|bias| at N=30,T=30 " + ", ".join(f"{p} {b[(30, 30)][p]:.3f}" for p in SIGMAS)
           + f"; mean reduction N 10->50 {gain_n:+.3f} vs T 30->50 {gain_t:+.3f}; {dt / 60:.1f} min")


# 10 ------------------------------------------------------------------------------------
def test_c10_anonymized_data_shrink_heterogeneity():
    r = run_anonymized_comparison(N=50, T=50, seed=10)
    s_c, s_a = r.complete["sigma_eta"], r.anonymized["sigma_eta"]
    ok = s_a < s_c and r.eta_spread_anonymized < r.eta_spread_complete
    report(10, ok, f"sigma_eta complete {s_c:.3f} vs anonymized {s_a:.3f}; "
                   f"eta-hat spread {r.eta_spread_complete:.3f} vs {r.eta_spread_anonymized:.3f}")


# 11 ------------------------------------------------------------------------------------
def test_c11_noncentered_has_fewer_divergences():
    costs = background_costs(15, 11)
    _, x = simulate_hierarchical(HyperParams(-1.5, 0.3, 0.0, 0.3, -2.0, 0.3), 20, np.zeros(3), costs, rng_seed=11)
    totals = {}
    for par in ("noncentered", "centered"):
        m = PosteriorModel(DataBlock(x, costs), "hier-complete", parameterization=par)
        totals[par] = sum(int(sample_posterior(m, SamplerConfig(chains=2, warmup=300, draws=300, seed=s)).divergent.sum())
                          for s in range(5))
    ok = totals["noncentered"] < totals["centered"]
    report(11, ok, f"divergences over 5 seeds: non-centered {totals['noncentered']}, centered {totals['centered']}")


# 12 ------------------------------------------------------------------------------------
def test_c12_simulation_based_calibration():
    tab = run_pooled_recovery(RecoveryConfig(replications=200, grid=((5, 20),), seed=12))
    p = {q: float(kstest(tab.ranks(q), "uniform").pvalue) for q in ("eta", "theta", "rho")}
    report(12, all(v > 0.01 for v in p.values()), "KS p-values " + ", ".join(f"{q} {v:.3f}" for q, v in p.items()))


# 13 ------------------------------------------------------------------------------------
def test_c13_rope_mechanics():
    below = np.concatenate([np.full(970, -0.3), np.linspace(-0.1, 0.2, 30)])
    r1 = rope_test(below, (-0.1, 0.1))
    r2 = rope_test(np.linspace(-0.1, 0.1, 101), (-0.1, 0.1))
    a, b = 0.37, 0.29
    phi = logit_contrast(np.full(10, a), np.full(10, b))
    odds = (a / (1 - a)) / (b / (1 - b))
    ident = float(np.max(np.abs(np.exp(phi) - odds)))
    band = (math.exp(-0.1), math.exp(0.1))
    ok = (r1.verdict == "rejected-below" and r2.verdict == "equivalent" and ident < 1e-12
          and abs(band[0] - 0.905) < 5e-4 and abs(band[1] - 1.105) < 5e-4)
    report(13, ok, f"97% below -> {r1.verdict}; inside -> {r2.verdict}; odds identity error {ident:.1e}; "
                   f"band [{band[0]:.3f}, {band[1]:.3f}]")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
