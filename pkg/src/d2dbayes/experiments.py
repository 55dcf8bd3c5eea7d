"""Simulation studies: parameter recovery, misspecification, anonymised
versus complete observability."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .dynamics import (
    SmithParams,
    anonymize,
    probability_paths,
    simulate_background,
    simulate_hierarchical,
    simulate_individuals,
    simulate_pooled,
    simulate_smith,
    smith_probabilities,
    commuter_streams,
)
from .inference import extrapolate, hdi, posterior_mean
from .model import DataBlock, PosteriorModel, PriorSpec
from .model.priors import Prior
from .network import CostSequence, build_nd_network
from .params import HYPER_NAMES, HyperParams, IndividualParams
from .sampler import SamplerConfig, SamplerError, rank_of_truth, sample_posterior

log = logging.getLogger(__name__)

POOLED_PARAMS = ("eta", "theta", "rho")
SCENARIOS = ("shifted-prior", "alt-family", "heterogeneous-pooled", "smith")
MAX_FAILURE_RATE = 0.10
TEST_DAYS = 20
# anonymised-vs-complete comparison truth
COMPARISON_HYPER = HyperParams(-1.5, 0.5, 0.0, 1.0, -2.0, 1.0)


class ExperimentError(RuntimeError):
    pass


def _fast_sampler() -> SamplerConfig:
    return SamplerConfig(chains=2, warmup=500, draws=500)


@dataclass(frozen=True)
class RecoveryConfig:
    """One simulation study.

    ``grid`` lists (N, T) cells.  Truths are drawn from ``truth_priors``
    (pooled: eta/theta/rho entries; hierarchical: the six hyperparameter
    entries) and fitted under ``fit_priors``.
    """

    replications: int = 50
    grid: tuple = ((10, 30),)
    regime: str = "pooled-complete"
    sampler: SamplerConfig = field(default_factory=_fast_sampler)
    seed: int = 0
    cost_seed: int = 0
    truth_priors: PriorSpec = field(default_factory=PriorSpec)
    fit_priors: PriorSpec = field(default_factory=PriorSpec)
    alpha: float = 0.95
    workers: int = 1
    parameterization: str = "noncentered"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        grid = tuple((int(n), int(t)) for n, t in self.grid)
        if not grid or any(n < 1 or t < 1 for n, t in grid):
            raise ValueError("every grid cell needs N >= 1 and T >= 1")
        object.__setattr__(self, "grid", grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampler"] = asdict(self.sampler)
        d["truth_priors"] = self.truth_priors.to_dict()
        d["fit_priors"] = self.fit_priors.to_dict()
        d["grid"] = [list(c) for c in self.grid]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveryConfig":
        d = dict(d)
        if "sampler" in d:
            d["sampler"] = SamplerConfig(**d["sampler"])
        for k in ("truth_priors", "fit_priors"):
            if k in d:
                d[k] = PriorSpec.from_dict(d[k])
        if "grid" in d:
            d["grid"] = tuple(tuple(c) for c in d["grid"])
        return cls(**d)


@dataclass(frozen=True)
class Record:
    N: int
    T: int
    rep: int
    param: str
    truth: float
    estimate: float
    lower: float
    upper: float
    rank: float

    @property
    def covered(self) -> bool:
        return self.lower <= self.truth <= self.upper


@dataclass
class MetricsTable:
    rows: list
    records: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)  # (N, T) -> [rep ids]

    COLUMNS = ("N", "T", "param", "bias", "coverage", "width", "reps", "failures")

    def get(self, N, T, param) -> dict:
        for r in self.rows:
            if r["N"] == N and r["T"] == T and r["param"] == param:
                return r
        raise KeyError((N, T, param))

    def cell_records(self, N, T, param) -> list:
        return [r for r in self.records if r.N == N and r.T == T and r.param == param]

    def mean_abs_bias(self, N, T, param) -> float:
        recs = self.cell_records(N, T, param)
        return float(np.mean([abs(r.estimate - r.truth) for r in recs]))

    def ranks(self, param, N=None, T=None) -> np.ndarray:
        return np.array([r.rank for r in self.records if r.param == param
                         and (N is None or r.N == N) and (T is None or r.T == T)])


def _aggregate(records: list, grid, params, failures: dict) -> list:
    rows = []
    for N, T in grid:
        for p in params:
            recs = sorted((r for r in records if r.N == N and r.T == T and r.param == p), key=lambda r: r.rep)
            nf = len(failures.get((N, T), []))
            if recs:
                bias = float(np.mean([r.estimate - r.truth for r in recs]))
                cov = float(np.mean([r.covered for r in recs]))
                width = float(np.mean([r.upper - r.lower for r in recs]))
            else:
                bias = cov = width = float("nan")
            rows.append({"N": N, "T": T, "param": p, "bias": bias, "coverage": cov, "width": width,
                         "reps": len(recs), "failures": nf})
    return rows


# --- shared helpers -------------------------------------------------------------

def background_costs(T: int, seed: int = 0) -> CostSequence:
    """Study-OD path costs on the Nguyen-Dupuis network for T days."""
    return simulate_background(build_nd_network(), T + 20, rng_seed=seed)


def _rep_seeds(seed, N, T, r):
    """Truth depends on (seed, r) only, so cells are compared on matched
    truths; data and sampler streams are cell specific."""
    truth = np.random.SeedSequence([int(seed), int(r)])
    data, fit = np.random.SeedSequence([int(seed), int(N), int(T), int(r)]).spawn(2)
    return truth, data, int(fit.generate_state(1)[0])


def _draw_pooled_truth(priors: PriorSpec, ss) -> tuple:
    rng = np.random.default_rng(ss)
    out = []
    for name in POOLED_PARAMS:
        out.append(_draw_from(priors[name], rng))
    return tuple(out)


def _draw_from(p: Prior, rng) -> float:
    z = rng.normal(p.mu, p.sigma)
    if p.family == "logitnormal":
        return float(expit(z))
    if p.family == "lognormal":
        return float(np.exp(z))
    if p.family == "halfnormal":
        return float(abs(z))  # mu is 0 for half-normal priors
    return float(z)


def _records_from(draws, names, truth, N, T, r, alpha):
    recs = []
    for name, tv in zip(names, truth):
        x = draws.column(name)
        h = hdi(x, alpha)
        recs.append(Record(N, T, r, name, float(tv), float(np.mean(x)), h.lower, h.upper,
                           float(rank_of_truth(x, tv)[0])))
    return recs


def _run_jobs(fn, jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _collect(results, grid, params, fail_limit=MAX_FAILURE_RATE):
    records, failures = [], {}
    for (N, T, r), res in results:
        if isinstance(res, str):
            failures.setdefault((N, T), []).append(r)
            log.warning("replication %d in cell N=%d T=%d failed: %s", r, N, T, res)
        else:
            records.extend(res)
    total = {}
    for (N, T, r), _ in results:
        total[(N, T)] = total.get((N, T), 0) + 1
    for cell, reps in failures.items():
        if len(reps) > fail_limit * total[cell]:
            raise ExperimentError(f"cell N={cell[0]} T={cell[1]}: {len(reps)} of {total[cell]} "
                                  f"replications failed (ids {sorted(reps)})")
    return MetricsTable(_aggregate(records, grid, params, failures), records, failures)


_FAILURES = (SamplerError, FloatingPointError, ValueError, np.linalg.LinAlgError)


# --- pooled recovery ------------------------------------------------------------

def _pooled_job(args):
    config, N, T, r, costs = args
    s_truth, s_data, s_fit = _rep_seeds(config.seed, N, T, r)
    truth = _draw_pooled_truth(config.truth_priors, s_truth)
    c = costs.window(0, T)
    try:
        traj = simulate_pooled(truth, np.zeros(c.M), c, N, s_data)
        obs = traj if config.regime == "pooled-complete" else anonymize(traj)
        model = PosteriorModel(DataBlock(obs, c), config.regime, config.fit_priors)
        draws = sample_posterior(model, replace(config.sampler, seed=s_fit))
    except _FAILURES as exc:
        return (N, T, r), f"{type(exc).__name__}: {exc}"
    return (N, T, r), _records_from(draws, POOLED_PARAMS, truth, N, T, r, config.alpha)


def run_pooled_recovery(config: RecoveryConfig, costs: Optional[CostSequence] = None) -> MetricsTable:
    """Draw truth, simulate, fit, score; repeated per replication and cell."""
    if not config.regime.startswith("pooled"):
        raise ValueError("pooled recovery needs a pooled regime")
    Tmax = max(T for _, T in config.grid)
    costs = costs if costs is not None else background_costs(Tmax, config.cost_seed)
    jobs = [(config, N, T, r, costs) for N, T in config.grid for r in range(config.replications)]
    return _collect(_run_jobs(_pooled_job, jobs, config.workers), config.grid, POOLED_PARAMS)


# --- hierarchical recovery --------------------------------------------------------

def draw_hyper_truth(priors: PriorSpec, ss) -> HyperParams:
    rng = np.random.default_rng(ss)
    return HyperParams(*[_draw_from(priors[k], rng) for k in HYPER_NAMES])


def _hier_job(args):
    config, N, T, r, costs = args
    s_truth, s_data, s_fit = _rep_seeds(config.seed, N, T, r)
    hyper = draw_hyper_truth(config.truth_priors, s_truth)
    c = costs.window(0, T)
    try:
        _, traj = simulate_hierarchical(hyper, N, np.zeros(c.M), c, s_data)
        obs = traj if config.regime == "hier-complete" else anonymize(traj)
        model = PosteriorModel(DataBlock(obs, c), config.regime, config.fit_priors,
                               parameterization=config.parameterization)
        draws = sample_posterior(model, replace(config.sampler, seed=s_fit))
    except _FAILURES as exc:
        return (N, T, r), f"{type(exc).__name__}: {exc}"
    return (N, T, r), _records_from(draws, HYPER_NAMES, hyper.as_array(), N, T, r, config.alpha)


def run_hier_recovery(config: RecoveryConfig, costs: Optional[CostSequence] = None) -> MetricsTable:
    """Hyperparameter recovery with truths drawn from ``config.truth_priors``."""
    if not config.regime.startswith("hier"):
        raise ValueError("hierarchical recovery needs a hierarchical regime")
    Tmax = max(T for _, T in config.grid)
    costs = costs if costs is not None else background_costs(Tmax, config.cost_seed)
    jobs = [(config, N, T, r, costs) for N, T in config.grid for r in range(config.replications)]
    return _collect(_run_jobs(_hier_job, jobs, config.workers), config.grid, HYPER_NAMES)


# --- misspecification ----------------------------------------------------------------

SHIFTED_PRIORS = PriorSpec({
    "eta": Prior("logitnormal", -0.85, 0.5),
    "theta": Prior("lognormal", 1.1, 0.6),
    "rho": Prior("logitnormal", -1.5, 0.7),
})


def draw_alt_family(rng, n=None):
    """eta ~ Beta(2, 5), theta ~ Gamma(2, 1), rho ~ Beta(2, 8)."""
    return rng.beta(2.0, 5.0, n), rng.gamma(2.0, 1.0, n), rng.beta(2.0, 8.0, n)


@dataclass
class MisspecReport:
    scenario: str
    metrics: Optional[MetricsTable] = None
    errors: dict = field(default_factory=dict)  # (N, T_train) -> list of per-rep mean abs errors
    failures: dict = field(default_factory=dict)

    def mean_error(self, N, T) -> float:
        return float(np.mean(self.errors[(N, T)]))

    def rows(self) -> list:
        if self.metrics is not None:
            return self.metrics.rows
        return [{"N": N, "T": T, "param": "extrapolation_mae", "bias": float(np.mean(v)), "coverage": float("nan"),
                 "width": float("nan"), "reps": len(v), "failures": len(self.failures.get((N, T), []))}
                for (N, T), v in sorted(self.errors.items())]


def _route_shares(P: np.ndarray) -> np.ndarray:
    """Travel-conditional route shares from (.., M+1) probabilities."""
    r = P[..., 1:]
    return r / r.sum(axis=-1, keepdims=True)


def _alt_job(args):
    config, N, T, r, costs = args
    s_truth, s_data, s_fit = _rep_seeds(config.seed, N, T, r)
    eta, theta, rho = draw_alt_family(np.random.default_rng(s_truth))
    truth = (float(eta), float(theta), float(rho))
    c = costs.window(0, T)
    try:
        traj = simulate_pooled(truth, np.zeros(c.M), c, N, s_data)
        model = PosteriorModel(DataBlock(traj, c), "pooled-complete", config.fit_priors)
        draws = sample_posterior(model, replace(config.sampler, seed=s_fit))
    except _FAILURES as exc:
        return (N, T, r), f"{type(exc).__name__}: {exc}"
    return (N, T, r), _records_from(draws, POOLED_PARAMS, truth, N, T, r, config.alpha)


def _extrap_job(args):
    scenario, config, N, T, r, costs = args
    s_truth, s_data, s_fit = _rep_seeds(config.seed, N, T, r)
    c_train = costs.window(0, T)
    c_test = costs.window(T, T + TEST_DAYS)
    M = costs.M
    try:
        if scenario == "heterogeneous-pooled":
            eta, theta, _ = draw_alt_family(np.random.default_rng(s_truth), N)
            ip = IndividualParams(eta, theta, np.full(N, 1e-12))
            traj = simulate_individuals(ip, np.zeros(M), c_train, commuter_streams(s_data, N))
            full = CostSequence(costs.costs[: T + TEST_DAYS], costs.od_id)
            truth = probability_paths(ip, np.zeros(M), full).mean(axis=0)[T:]
        else:
            smith = SmithParams()
            traj = simulate_smith(smith, c_train, N, s_data)
            truth = smith_probabilities(smith, costs.window(0, T + TEST_DAYS))[T:]
        model = PosteriorModel(DataBlock(traj, c_train), "pooled-complete", config.fit_priors)
        draws = sample_posterior(model, replace(config.sampler, seed=s_fit))
        ex = extrapolate(draws, c_test, costs_history=c_train, max_draws=400)
    except _FAILURES as exc:
        return (N, T, r), f"{type(exc).__name__}: {exc}"
    return (N, T, r), float(np.mean(np.abs(_route_shares(ex.mean) - _route_shares(truth))))


def run_misspecification(scenario: str, config: RecoveryConfig, costs: Optional[CostSequence] = None) -> MisspecReport:
    """Fit the pooled model to data generated off-model.

    ``shifted-prior`` and ``alt-family`` report recovery metrics;
    ``heterogeneous-pooled`` and ``smith`` report the mean absolute error of
    extrapolated route shares over the next ``TEST_DAYS`` days (grid T is
    the training length).  In the behavioural scenarios nobody opts out of
    travel, so errors compare travel-conditional shares.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    Tmax = max(T for _, T in config.grid)
    costs = costs if costs is not None else background_costs(Tmax + TEST_DAYS, config.cost_seed)
    cells = [(N, T, r) for N, T in config.grid for r in range(config.replications)]
    if scenario == "shifted-prior":
        cfg = replace(config, truth_priors=SHIFTED_PRIORS, regime="pooled-complete")
        table = _collect(_run_jobs(_pooled_job, [(cfg, N, T, r, costs) for N, T, r in cells], config.workers),
                         config.grid, POOLED_PARAMS)
        return MisspecReport(scenario, table, failures=table.failures)
    if scenario == "alt-family":
        table = _collect(_run_jobs(_alt_job, [(config, N, T, r, costs) for N, T, r in cells], config.workers),
                         config.grid, POOLED_PARAMS)
        return MisspecReport(scenario, table, failures=table.failures)
    results = _run_jobs(_extrap_job, [(scenario, config, N, T, r, costs) for N, T, r in cells], config.workers)
    rep = MisspecReport(scenario)
    total = {}
    for (N, T, r), res in results:
        total[(N, T)] = total.get((N, T), 0) + 1
        if isinstance(res, str):
            rep.failures.setdefault((N, T), []).append(r)
        else:
            rep.errors.setdefault((N, T), []).append(res)
    for cell, reps in rep.failures.items():
        if len(reps) > MAX_FAILURE_RATE * total[cell]:
            raise ExperimentError(f"cell N={cell[0]} T={cell[1]}: replications {sorted(reps)} failed")
    return rep


# --- anonymised versus complete -----------------------------------------------------

@dataclass
class ComparisonResult:
    truth: HyperParams
    complete: dict  # posterior means of the hyperparameters
    anonymized: dict
    complete_hdi: dict
    anonymized_hdi: dict
    eta_spread_complete: float
    eta_spread_anonymized: float
    eta_hat_complete: np.ndarray = field(repr=False, default=None)
    eta_hat_anonymized: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "truth": dict(zip(HYPER_NAMES, self.truth.as_array().tolist())),
            "complete": self.complete,
            "anonymized": self.anonymized,
            "complete_hdi": self.complete_hdi,
            "anonymized_hdi": self.anonymized_hdi,
            "eta_spread_complete": self.eta_spread_complete,
            "eta_spread_anonymized": self.eta_spread_anonymized,
        }


def run_anonymized_comparison(N: int = 50, T: int = 50, hyper: HyperParams = COMPARISON_HYPER, seed: int = 0,
                              sampler: Optional[SamplerConfig] = None, priors: Optional[PriorSpec] = None,
                              costs: Optional[CostSequence] = None, alpha: float = 0.95) -> ComparisonResult:
    """Fit one simulated population twice: on trajectories and on their counts."""
    sampler = sampler or _fast_sampler()
    costs = (costs if costs is not None else background_costs(T, 0)).window(0, T)
    s_data, s_fit = np.random.SeedSequence([int(seed), N, T]).spawn(2)
    fit_seed = int(s_fit.generate_state(1)[0])
    _, traj = simulate_hierarchical(hyper, N, np.zeros(costs.M), costs, s_data)
    out = {}
    for label, obs, regime in (("complete", traj, "hier-complete"), ("anonymized", anonymize(traj), "hier-counts")):
        model = PosteriorModel(DataBlock(obs, costs), regime, priors)
        draws = sample_posterior(model, replace(sampler, seed=fit_seed))
        means = posterior_mean(draws)
        hyp = {k: means[k] for k in HYPER_NAMES}
        hd = {k: [hdi(draws.column(k), alpha).lower, hdi(draws.column(k), alpha).upper] for k in HYPER_NAMES}
        eta_hat = np.array([means[f"eta_{n + 1}"] for n in range(N)])
        out[label] = (hyp, hd, eta_hat)
    return ComparisonResult(
        hyper, out["complete"][0], out["anonymized"][0], out["complete"][1], out["anonymized"][1],
        float(np.std(out["complete"][2])), float(np.std(out["anonymized"][2])),
        out["complete"][2], out["anonymized"][2],
    )
