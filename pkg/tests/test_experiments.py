import numpy as np
import pytest

from d2dbayes.experiments import (
    COMPARISON_HYPER,
    ExperimentError,
    MetricsTable,
    RecoveryConfig,
    _aggregate,
    _collect,
    draw_hyper_truth,
    run_hier_recovery,
    run_misspecification,
    run_pooled_recovery,
)
from d2dbayes.model import PriorSpec
from d2dbayes.sampler import SamplerConfig

QUICK = SamplerConfig(chains=2, warmup=200, draws=200)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        RecoveryConfig(replications=0)
    with pytest.raises(ValueError):
        RecoveryConfig(grid=((0, 5),))
    c = RecoveryConfig(replications=3, grid=((2, 5), (4, 6)), sampler=QUICK, seed=9)
    assert RecoveryConfig.from_dict(c.to_dict()) == c


def test_pooled_recovery_reproducible_and_sane():
    cfg = RecoveryConfig(replications=3, grid=((5, 15),), sampler=QUICK, seed=4)
    a = run_pooled_recovery(cfg)
    b = run_pooled_recovery(cfg)
    assert a.rows == b.rows
    for r in a.rows:
        assert 0 <= r["coverage"] <= 1 and r["width"] >= 0 and r["reps"] == 3
    assert set(MetricsTable.COLUMNS) == set(a.rows[0])


def test_aggregation_permutation_invariant():
    cfg = RecoveryConfig(replications=4, grid=((3, 10),), sampler=QUICK, seed=2)
    t = run_pooled_recovery(cfg)
    recs = list(t.records)
    rng = np.random.default_rng(0)
    shuffled = [recs[i] for i in rng.permutation(len(recs))]
    assert _aggregate(shuffled, cfg.grid, ("eta", "theta", "rho"), {}) == t.rows


def test_failure_threshold():
    ok = [((3, 10, r), []) for r in range(9)] + [((3, 10, 9), "SamplerError: boom")]
    t = _collect(ok, ((3, 10),), ("eta",))
    assert t.failures == {(3, 10): [9]} and t.rows[0]["failures"] == 1
    bad = ok[:8] + [((3, 10, 8), "SamplerError: x"), ((3, 10, 9), "SamplerError: y")]
    with pytest.raises(ExperimentError, match="replications failed"):
        _collect(bad, ((3, 10),), ("eta",))


def test_hier_truths_follow_generating_table():
    pr = PriorSpec()
    assert (pr["mu_eta"].mu, pr["mu_eta"].sigma) == (-1.5, 0.5)
    assert (pr["sigma_theta"].family, pr["sigma_theta"].sigma) == ("halfnormal", 0.5)
    assert (pr["mu_rho"].mu, pr["sigma_rho"].sigma) == (-2.0, 1.0)
    draws = np.array([draw_hyper_truth(pr, np.random.SeedSequence(k)).as_array() for k in range(2000)])
    assert np.all(draws[:, 1::2] > 0)
    assert abs(draws[:, 0].mean() + 1.5) < 4 * 0.5 / np.sqrt(2000)
    assert abs(draws[:, 5].mean() - np.sqrt(2 / np.pi)) < 0.05


def test_hier_recovery_smoke():
    cfg = RecoveryConfig(replications=1, grid=((4, 8),), regime="hier-complete",
                         sampler=SamplerConfig(chains=2, warmup=150, draws=50), seed=1)
    t = run_hier_recovery(cfg)
    assert {r["param"] for r in t.rows} == {"mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho"}
    for r in t.records:
        if r.param.startswith("sigma"):
            assert r.estimate > 0


def test_misspecification_extrapolation():
    cfg = RecoveryConfig(replications=3, grid=((10, 30),), sampler=QUICK, seed=3)
    het = run_misspecification("heterogeneous-pooled", cfg)
    smith = run_misspecification("smith", cfg)
    assert het.mean_error(10, 30) < 0.05
    assert smith.mean_error(10, 30) > het.mean_error(10, 30)
    rows = het.rows()
    assert rows[0]["param"] == "extrapolation_mae" and rows[0]["reps"] == 3


def test_heterogeneous_pooled_long_window():
    cfg = RecoveryConfig(replications=2, grid=((20, 80),), sampler=QUICK, seed=5)
    assert run_misspecification("heterogeneous-pooled", cfg).mean_error(20, 80) < 0.05


def test_shifted_prior_and_alt_family():
    cfg = RecoveryConfig(replications=8, grid=((10, 30),), sampler=QUICK, seed=6)
    shifted = run_misspecification("shifted-prior", cfg)
    for p in ("eta", "theta", "rho"):
        assert shifted.metrics.get(10, 30, p)["coverage"] >= 0.7
    alt = run_misspecification("alt-family", RecoveryConfig(replications=2, grid=((10, 30),), sampler=QUICK))
    assert len(alt.rows()) == 3
    with pytest.raises(ValueError):
        run_misspecification("nope", cfg)


def test_comparison_truth():
    assert COMPARISON_HYPER.sigma_eta == 0.5
