"""Forward simulation of day-to-day route choice.

Perceived costs follow exponential smoothing, daily choices follow a logit
model over physical routes plus a virtual non-travel alternative (index 0).
Also provides aggregate Horowitz and Smith dynamics, background traffic on a
network, and anonymisation of trajectories into daily counts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .network import CostSequence, Network, link_costs
from .params import HyperParams, IndividualParams, PooledParams


@dataclass(frozen=True)
class ValuationState:
    values: np.ndarray  # (M,) pooled or (N, M) per commuter
    day: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("perceived values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ChoiceTrajectory:
    """Chosen alternative per commuter and day (N x T, entries in 0..M)."""

    choices: np.ndarray
    n_routes: int
    od_id: str = "0"

    def __post_init__(self):
        x = np.asarray(self.choices)
        if x.ndim != 2:
            raise ValueError("choices must be an N x T matrix")
        if not np.issubdtype(x.dtype, np.integer):
            if not np.all(np.mod(x, 1) == 0):
                raise ValueError("choices must be integers")
        x = x.astype(np.int64)
        if x.size and (x.min() < 0 or x.max() > self.n_routes):
            raise ValueError(f"choices must lie in 0..{self.n_routes}")
        x.setflags(write=False)
        object.__setattr__(self, "choices", x)

    @property
    def N(self) -> int:
        return self.choices.shape[0]

    @property
    def T(self) -> int:
        return self.choices.shape[1]


@dataclass(frozen=True)
class CountSeries:
    """Daily counts over alternatives 0..M (T x (M+1)); rows sum to N."""

    counts: np.ndarray
    od_id: str = "0"

    def __post_init__(self):
        o = np.asarray(self.counts)
        if o.ndim != 2 or o.shape[1] < 3:
            raise ValueError("counts must be a T x (M+1) matrix with M >= 2")
        if np.any(o < 0) or not np.all(np.mod(o, 1) == 0):
            raise ValueError("counts must be nonnegative integers")
        o = o.astype(np.int64)
        totals = o.sum(axis=1)
        bad = np.flatnonzero(totals != totals[0])
        if bad.size:
            raise ValueError(f"day {bad[0] + 1}: counts sum to {totals[bad[0]]}, expected N={totals[0]}")
        o.setflags(write=False)
        object.__setattr__(self, "counts", o)

    @property
    def N(self) -> int:
        return int(self.counts[0].sum())

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def n_routes(self) -> int:
        return self.counts.shape[1] - 1


@dataclass(frozen=True)
class SmithParams:
    tau: float = 0.1
    epsilon: float = 0.05

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")


# --- individual model ---------------------------------------------------------

def update_values(state: ValuationState, eta: float, costs_today) -> ValuationState:
    """One exponential-smoothing step ``V' = (1 - eta) V + eta c``."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    c = np.asarray(costs_today, dtype=float)
    if c.shape[-1] != state.values.shape[-1]:
        raise ValueError("cost vector does not match the number of routes")
    return ValuationState((1.0 - eta) * state.values + eta * c, state.day + 1)


def choice_probabilities(values, theta: float, rho: float) -> np.ndarray:
    """Probabilities over (non-travel, route 1, ..., route M)."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("perceived values must be finite")
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    u = -theta * v
    w = np.exp(u - u.max())
    p = np.empty(v.shape[0] + 1)
    p[0] = rho
    p[1:] = (1.0 - rho) * w / w.sum()
    return p


def choice_probability_matrix(values: np.ndarray, theta, rho) -> np.ndarray:
    """Row-wise choice probabilities for an (N, M) value matrix."""
    theta = np.asarray(theta, dtype=float)[..., None]
    rho = np.asarray(rho, dtype=float)
    u = -theta * values
    w = np.exp(u - u.max(axis=-1, keepdims=True))
    s = w / w.sum(axis=-1, keepdims=True)
    out = np.empty(values.shape[:-1] + (values.shape[-1] + 1,))
    out[..., 0] = rho
    out[..., 1:] = (1.0 - rho)[..., None] * s
    return out


def commuter_streams(seed, n: int) -> list:
    """One counter-based (Philox) generator per commuter."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(n)]


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws; ``probs`` is (M+1,) or (N, M+1)."""
    cum = np.cumsum(probs, axis=-1)
    if cum.ndim == 1:
        return np.minimum(np.searchsorted(cum, u, side="right"), probs.shape[-1] - 1)
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[-1] - 1)


def _as_pooled(params) -> PooledParams:
    if isinstance(params, PooledParams):
        return params
    return PooledParams(*params)


def _simulate_shared(eta, theta, rho, v1, costs: CostSequence, n_commuters: int, rng_seed):
    v = np.asarray(v1, dtype=float)
    if v.shape != (costs.M,):
        raise ValueError(f"v1 must have length {costs.M}")
    if n_commuters < 0:
        raise ValueError("n_commuters must be nonnegative")
    U = np.stack([g.random(costs.T) for g in commuter_streams(rng_seed, n_commuters)]) if n_commuters else np.empty((0, costs.T))
    X = np.empty((n_commuters, costs.T), dtype=np.int64)
    for t in range(costs.T):
        X[:, t] = _draw(choice_probabilities(v, theta, rho), U[:, t])
        v = (1.0 - eta) * v + eta * costs.costs[t]
    return ChoiceTrajectory(X, costs.M, costs.od_id)


def simulate_pooled(params, v1, costs: CostSequence, n_commuters: int, rng_seed=None) -> ChoiceTrajectory:
    """Choice trajectories for commuters sharing (eta, theta, rho) and one valuation state."""
    p = _as_pooled(params)
    return _simulate_shared(p.eta, p.theta, p.rho, v1, costs, n_commuters, rng_seed)


def simulate_horowitz(eta: float, theta: float, v1, costs: CostSequence, n_commuters: int, rng_seed=None) -> ChoiceTrajectory:
    """Individual choices behind Horowitz dynamics: the shared model with
    every commuter travelling every day (rho = 0)."""
    if not 0.0 < eta < 1.0 or not theta > 0:
        raise ValueError("need eta in (0, 1) and theta > 0")
    return _simulate_shared(eta, theta, 0.0, v1, costs, n_commuters, rng_seed)


def horowitz_shares(eta: float, theta: float, v1, costs: CostSequence) -> np.ndarray:
    """Deterministic Horowitz route shares (T x M) with unit demand."""
    perceived = np.asarray(v1, dtype=float)
    out = np.empty((costs.T, costs.M))
    u = -theta * perceived
    w = np.exp(u - u.max())
    out[0] = w / w.sum()
    for t in range(1, costs.T):
        perceived, out[t] = horowitz_step(perceived, costs.costs[t - 1], eta, theta, 1.0)
    return out


def simulate_individuals(params: IndividualParams, v1, costs: CostSequence, streams: Sequence) -> ChoiceTrajectory:
    """Each commuter follows the individual model with its own parameters."""
    N = params.n
    v = np.broadcast_to(np.asarray(v1, dtype=float), (N, costs.M)).copy()
    U = np.stack([g.random(costs.T) for g in streams]) if N else np.empty((0, costs.T))
    X = np.empty((N, costs.T), dtype=np.int64)
    eta = params.eta[:, None]
    for t in range(costs.T):
        X[:, t] = _draw(choice_probability_matrix(v, params.theta, params.rho), U[:, t])
        v = (1.0 - eta) * v + eta * costs.costs[t]
    return ChoiceTrajectory(X, costs.M, costs.od_id)


def simulate_hierarchical(hyper: HyperParams, n_commuters: int, v1, costs: CostSequence, rng_seed=None):
    """Draw per-commuter parameters from the population, then simulate.

    Each commuter's stream first yields three standard normals (logit eta,
    log theta, logit rho offsets) and then its daily uniforms.
    """
    if not isinstance(hyper, HyperParams):
        hyper = HyperParams(*hyper)
    streams = commuter_streams(rng_seed, n_commuters)
    z = np.stack([g.standard_normal(3) for g in streams]) if n_commuters else np.empty((0, 3))
    u = hyper.mu[None, :] + hyper.sigma[None, :] * z
    params = IndividualParams(expit(u[:, 0]), np.exp(u[:, 1]), expit(u[:, 2]))
    return params, simulate_individuals(params, v1, costs, streams)


def probability_paths(params: IndividualParams, v1, costs: CostSequence) -> np.ndarray:
    """Exact per-commuter choice probabilities, shape (N, T, M+1)."""
    N = params.n
    v = np.broadcast_to(np.asarray(v1, dtype=float), (N, costs.M)).copy()
    out = np.empty((N, costs.T, costs.M + 1))
    eta = params.eta[:, None]
    for t in range(costs.T):
        out[:, t] = choice_probability_matrix(v, params.theta, params.rho)
        v = (1.0 - eta) * v + eta * costs.costs[t]
    return out


# --- aggregate dynamics ---------------------------------------------------------

def horowitz_step(perceived, costs_today, eta: float, theta: float, demand: float):
    """Smooth perceived path costs, then split demand by logit.

    Returns ``(new_perceived, path_flows)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if not theta > 0:
        raise ValueError("theta must be positive")
    if demand < 0:
        raise ValueError("demand must be nonnegative")
    p = eta * np.asarray(costs_today, dtype=float) + (1.0 - eta) * np.asarray(perceived, dtype=float)
    u = -theta * p
    w = np.exp(u - u.max())
    return p, demand * w / w.sum()


def smith_transition(costs_prev, smith: SmithParams) -> np.ndarray:
    """Route-to-route switching matrix P[i, j] for routes 0..M-1 (0-based here).

    Moving to a strictly cheaper route j has probability tau * (c(i) - c(j));
    any other route gets epsilon; the diagonal keeps the remainder.
    """
    c = np.asarray(costs_prev, dtype=float)
    diff = c[:, None] - c[None, :]
    P = np.where(diff > 0, smith.tau * diff, smith.epsilon)
    np.fill_diagonal(P, 0.0)
    out = P.sum(axis=1)
    if np.any(out > 1.0 + 1e-12):
        i = int(np.argmax(out))
        raise ValueError(f"switch probabilities from route {i + 1} sum to {out[i]:.3f} > 1")
    np.fill_diagonal(P, 1.0 - out)
    return P


def smith_step(prev_choices, costs_prev, smith: SmithParams, rng_seed=None) -> np.ndarray:
    """Swap each commuter's route (1..M) under the Smith-type rule."""
    prev = np.asarray(prev_choices, dtype=np.int64)
    P = smith_transition(costs_prev, smith)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    u = rng.random(prev.shape[0])
    return _draw(P[prev - 1], u) + 1


def simulate_smith(smith: SmithParams, costs: CostSequence, n_commuters: int, rng_seed=None) -> ChoiceTrajectory:
    """Day 1 uniform over routes, then Smith swaps driven by the previous day's costs."""
    streams = commuter_streams(rng_seed, n_commuters)
    U = np.stack([g.random(costs.T) for g in streams])
    M = costs.M
    X = np.empty((n_commuters, costs.T), dtype=np.int64)
    X[:, 0] = np.minimum((U[:, 0] * M).astype(np.int64), M - 1) + 1
    for t in range(1, costs.T):
        P = smith_transition(costs.costs[t - 1], smith)
        X[:, t] = _draw(P[X[:, t - 1] - 1], U[:, t]) + 1
    return ChoiceTrajectory(X, M, costs.od_id)


def smith_probabilities(smith: SmithParams, costs: CostSequence) -> np.ndarray:
    """Exact route-share path under the Smith chain (T x (M+1), column 0 is zero)."""
    M = costs.M
    out = np.zeros((costs.T, M + 1))
    pi = np.full(M, 1.0 / M)
    for t in range(costs.T):
        if t:
            pi = pi @ smith_transition(costs.costs[t - 1], smith)
        out[t, 1:] = pi
    return out


def simulate_background(
    network: Network,
    days: int,
    noise_sd: float = 1.0,
    eta: float = 0.3,
    theta: float = 0.3,
    rng_seed=None,
    warmup: int = 20,
    bpr_a: float = 0.15,
    bpr_b: float = 4.0,
) -> CostSequence:
    """Study-OD path costs from Horowitz background dynamics with noisy valuations.

    Background perceived costs start at zero; each day i.i.d. Gaussian noise
    is added to them before the logit split. The study group does not load
    the network. Costs from day ``warmup + 1`` on are returned.
    """
    if days <= 0:
        raise ValueError("days must be positive")
    if days <= warmup:
        raise ValueError(f"days ({days}) must exceed warmup ({warmup})")
    rng = np.random.default_rng(rng_seed)
    ods = network.background_ods()
    A = [network.incidence(od.id) for od in ods]
    A_study = network.incidence(network.study_od)
    perceived = [np.zeros(len(od.paths)) for od in ods]
    out = np.empty((days, A_study.shape[0]))
    for t in range(days):
        flows = np.zeros(network.n_links)
        for k, od in enumerate(ods):
            noisy = perceived[k] + (rng.normal(0.0, noise_sd, len(od.paths)) if noise_sd > 0 else 0.0)
            u = -theta * noisy
            w = np.exp(u - u.max())
            flows += (od.demand * w / w.sum()) @ A[k]
        lc = link_costs(network, flows, bpr_a, bpr_b)
        for k in range(len(ods)):
            perceived[k] = eta * (A[k] @ lc) + (1.0 - eta) * perceived[k]
        out[t] = A_study @ lc
    return CostSequence(out[warmup:], network.study_od)


def anonymize(traj: ChoiceTrajectory) -> CountSeries:
    """Daily counts of commuters per alternative."""
    M = traj.n_routes
    counts = np.stack([np.bincount(traj.choices[:, t], minlength=M + 1) for t in range(traj.T)])
    return CountSeries(counts, traj.od_id)
