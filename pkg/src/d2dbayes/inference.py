"""Posterior summaries: means, HDIs, ROPE tests, predictive bands,
extrapolation and implied population densities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logit

from .dynamics import choice_probability_matrix
from .network import CostSequence
from .params import HYPER_NAMES

VERDICTS = ("equivalent", "rejected-below", "rejected-above", "undecided")
ROPE_MASS = 0.95


# --- draw tables ------------------------------------------------------------------

def draw_table(draws, names=None) -> dict:
    """Normalise draws into ``{name: 1-d array}``.

    Accepts a PosteriorDraws-like object (``samples`` and ``names``), a
    mapping, or a 2-d array together with ``names``.
    """
    if isinstance(draws, dict):
        return {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in draws.items()}
    if hasattr(draws, "samples") and hasattr(draws, "names"):
        X, names = draws.samples, draws.names
    else:
        X = np.asarray(draws, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if names is None:
            names = ["eta", "theta", "rho"][: X.shape[1]] if X.shape[1] <= 3 else None
        if names is None or len(names) != X.shape[1]:
            raise ValueError("column names are required for this draw matrix")
    return {n: np.asarray(X[:, i], dtype=float) for i, n in enumerate(names)}


def posterior_mean(draws, names=None):
    """Arithmetic mean of each constrained column.

    Returns a dict for named draws and an array for a bare matrix.
    """
    if isinstance(draws, dict) or hasattr(draws, "samples"):
        return {k: float(np.mean(v)) for k, v in draw_table(draws, names).items()}
    X = np.asarray(draws, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("need at least one draw")
    return X.mean(axis=0)


# --- HDI ------------------------------------------------------------------------

@dataclass(frozen=True)
class HdiResult:
    lower: float
    upper: float
    alpha: float
    contained_draws: int
    start: int  # index into the sorted draws

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        return self.lower <= x <= self.upper


def hdi_size(S: int, alpha: float) -> int:
    """k = floor(alpha S); the window spans k+1 order statistics."""
    return int(math.floor(alpha * S + 1e-9))


def hdi(draws, alpha: float = 0.95) -> HdiResult:
    """Narrowest window ``[x_(i), x_(i+k)]`` over the sorted draws with
    ``k = floor(alpha S)``; ties go to the smallest start index."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    S = x.shape[0]
    k = hdi_size(S, alpha)
    if not 1 <= k < S:
        raise ValueError(f"alpha={alpha} with {S} draws leaves no valid window")
    widths = x[k:] - x[: S - k]
    i = int(np.argmin(widths))
    return HdiResult(float(x[i]), float(x[i + k]), alpha, k + 1, i)


# --- ROPE -----------------------------------------------------------------------

@dataclass(frozen=True)
class RopeResult:
    rope: tuple
    fraction_below: float
    fraction_inside: float
    fraction_above: float
    verdict: str
    n_draws: int = 0
    paired: Optional[bool] = None

    def to_dict(self) -> dict:
        d = {
            "rope": list(self.rope),
            "fraction_below": self.fraction_below,
            "fraction_inside": self.fraction_inside,
            "fraction_above": self.fraction_above,
            "verdict": self.verdict,
            "n_draws": self.n_draws,
        }
        if self.paired is not None:
            d["paired"] = self.paired
        return d


def rope_test(contrast_draws, rope, mass: float = ROPE_MASS, paired: Optional[bool] = None) -> RopeResult:
    """Fractions of the contrast posterior below, inside (closed interval)
    and above the ROPE, with a decision at ``mass``."""
    x = np.asarray(contrast_draws, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no contrast draws")
    low, high = float(rope[0]), float(rope[1])
    if not low < high:
        raise ValueError("ROPE needs low < high")
    n = x.size
    below = int(np.count_nonzero(x < low))
    above = int(np.count_nonzero(x > high))
    inside = n - below - above
    fb, fi, fa = below / n, inside / n, above / n
    if fi >= mass:
        verdict = "equivalent"
    elif fb >= mass:
        verdict = "rejected-below"
    elif fa >= mass:
        verdict = "rejected-above"
    else:
        verdict = "undecided"
    return RopeResult((low, high), fb, fi, fa, verdict, n, paired)


def logit_contrast(draws_a, draws_b, seed: int = 0) -> np.ndarray:
    """phi = logit(a) - logit(b).

    Paired elementwise when both sets have the same length; otherwise each
    set is resampled with replacement to the larger length using ``seed``.
    """
    a = np.asarray(draws_a, dtype=float).ravel()
    b = np.asarray(draws_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty draw set")
    for x in (a, b):
        if np.any((x <= 0) | (x >= 1)):
            raise ValueError("contrast inputs must lie strictly inside (0, 1)")
    if a.size != b.size:
        rng = np.random.default_rng(seed)
        n = max(a.size, b.size)
        a = rng.choice(a, n, replace=True)
        b = rng.choice(b, n, replace=True)
    return logit(a) - logit(b)


def half_life_rope(days: float) -> tuple:
    """[0, log 2 / days]: learning rates whose smoothing half-life exceeds ``days``."""
    return (0.0, math.log(2.0) / days)


# --- forward probabilities per draw ---------------------------------------------

def _is_hier(tab: dict) -> bool:
    return "eta_1" in tab


def _draw_params(tab: dict, M: int):
    """Per-draw (eta, theta, rho, v1) with eta/theta/rho shaped (S, N)."""
    if _is_hier(tab):
        N = 0
        while f"eta_{N + 1}" in tab:
            N += 1
        eta = np.column_stack([tab[f"eta_{n + 1}"] for n in range(N)])
        theta = np.column_stack([tab[f"theta_{n + 1}"] for n in range(N)])
        rho = np.column_stack([tab[f"rho_{n + 1}"] for n in range(N)])
    else:
        eta, theta, rho = (tab[k][:, None] for k in ("eta", "theta", "rho"))
    S = eta.shape[0]
    if "delta_2" in tab:
        v1 = np.column_stack([np.zeros(S)] + [tab[f"delta_{j}"] for j in range(2, M + 1)])
    else:
        v1 = None
    return eta, theta, rho, v1


def _thin(S: int, max_draws: Optional[int]) -> np.ndarray:
    if max_draws is None or S <= max_draws:
        return np.arange(S)
    return np.unique(np.linspace(0, S - 1, max_draws).round().astype(int))


def _prob_paths(eta, theta, rho, V, costs: np.ndarray):
    """(N, T, M+1) probabilities starting from values V (N, M); also
    returns the values after the last day."""
    T = costs.shape[0]
    out = np.empty((V.shape[0], T, V.shape[1] + 1))
    e = eta[:, None]
    for t in range(T):
        out[:, t] = choice_probability_matrix(V, theta, rho)
        V = (1.0 - e) * V + e * costs[t]
    return out, V


def _initial(v1_draw, v1, N, M):
    if v1_draw is not None:
        return np.broadcast_to(v1_draw, (N, M)).astype(float)
    base = np.zeros(M) if v1 is None else np.asarray(v1, dtype=float)
    return np.broadcast_to(base, (N, M)).astype(float)


# --- posterior predictive ----------------------------------------------------------

@dataclass
class PredictiveSummary:
    mean: np.ndarray  # (T, M+1)
    lo50: np.ndarray
    hi50: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    replications: int
    n_draws: int
    n_commuters: int

    def rows(self):
        T, K = self.mean.shape
        for t in range(T):
            for k in range(K):
                yield (t + 1, k, float(self.mean[t, k]), float(self.lo50[t, k]), float(self.hi50[t, k]),
                       float(self.lo95[t, k]), float(self.hi95[t, k]))


def _hist_quantile(cdf: np.ndarray, q: float) -> np.ndarray:
    """Smallest count c with F(c) >= q, for an (.., N+1) cdf."""
    return np.argmax(cdf >= q - 1e-12, axis=-1).astype(float)


def posterior_predictive(draws, costs: CostSequence, n_commuters: int, replications: int = 500,
                         rng_seed=None, max_draws: Optional[int] = 200, v1=None) -> PredictiveSummary:
    """Replicated daily counts under the posterior.

    For each (thinned) posterior draw, ``replications`` count series are
    simulated forward over ``costs``; bands are pooled over draws and
    replications.  Hierarchical draws simulate every commuter with their own
    parameters (``n_commuters`` must equal the fitted population).
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if costs.T < 1:
        raise ValueError("empty horizon")
    tab = draw_table(draws)
    M = costs.M
    eta, theta, rho, v1d = _draw_params(tab, M)
    S = eta.shape[0]
    if S == 0:
        raise ValueError("no posterior draws")
    hier = _is_hier(tab)
    N = int(n_commuters)
    if hier and eta.shape[1] != N:
        raise ValueError(f"hierarchical draws describe {eta.shape[1]} commuters, not {N}")
    idx = _thin(S, max_draws)
    streams = np.random.SeedSequence(rng_seed).spawn(len(idx))
    T, K = costs.T, M + 1
    hist = np.zeros((T, K, N + 1))
    flat_base = (np.arange(T * K) * (N + 1))
    for j, s in enumerate(idx):
        rng = np.random.Generator(np.random.Philox(streams[j]))
        n_par = eta.shape[1]
        V = _initial(None if v1d is None else v1d[s], v1, n_par, M)
        P, _ = _prob_paths(eta[s], theta[s], rho[s], V, costs.costs)
        if hier:
            cum = np.cumsum(P, axis=2)  # (N, T, K)
            U = rng.random((replications, N, T))
            ch = (U[..., None] >= cum[None]).sum(axis=-1).clip(max=K - 1)  # (R, N, T)
            counts = np.zeros((replications, T, K), dtype=np.int64)
            for k in range(K):
                counts[:, :, k] = (ch == k).sum(axis=1)
        else:
            counts = rng.multinomial(N, P[0], size=(replications, T))  # (R, T, K)
        codes = flat_base[None, :] + counts.reshape(replications, -1)
        hist += np.bincount(codes.ravel(), minlength=T * K * (N + 1)).reshape(T, K, N + 1)
    total = hist.sum(axis=-1, keepdims=True)
    pmf = hist / total
    cdf = np.cumsum(pmf, axis=-1)
    mean = (pmf * np.arange(N + 1)).sum(axis=-1)
    lo95, lo50 = _hist_quantile(cdf, 0.025), _hist_quantile(cdf, 0.25)
    hi50, hi95 = _hist_quantile(cdf, 0.75), _hist_quantile(cdf, 0.975)
    # keep the mean inside the outer band even for very lopsided cells
    lo95 = np.minimum(lo95, np.floor(mean))
    hi95 = np.maximum(hi95, np.ceil(mean))
    return PredictiveSummary(mean, lo50, hi50, lo95, hi95, replications, len(idx), N)


# --- extrapolation -------------------------------------------------------------------

@dataclass
class Extrapolation:
    mean: np.ndarray  # (T_future, M+1) posterior mean of the aggregate choice probabilities
    lo: np.ndarray
    hi: np.ndarray
    draws: np.ndarray  # (S', T_future, M+1)
    truth: Optional[np.ndarray] = None
    expected_counts: Optional[np.ndarray] = None

    @property
    def mean_abs_error(self) -> float:
        if self.truth is None:
            raise ValueError("no truth supplied")
        return float(np.mean(np.abs(self.mean - self.truth)))

    def rows(self):
        T, K = self.mean.shape
        for t in range(T):
            for k in range(K):
                row = [t + 1, k, float(self.mean[t, k]), float(self.lo[t, k]), float(self.hi[t, k])]
                row.append(float(self.truth[t, k]) if self.truth is not None else "")
                yield tuple(row)


def extrapolate(draws, costs_future: CostSequence, n_commuters: Optional[int] = None,
                costs_history: Optional[CostSequence] = None, v1=None, truth=None,
                band: float = 0.95, max_draws: Optional[int] = None) -> Extrapolation:
    """Choice-probability paths for future days.

    Each draw's valuation state is run forward over ``costs_history`` (the
    fitting window) and then continued over ``costs_future``.  Hierarchical
    draws are averaged over commuters.  ``truth`` (T_future x (M+1)) enables
    ``mean_abs_error``.
    """
    if costs_future.T < 1:
        raise ValueError("horizon must be at least one day")
    M = costs_future.M
    if costs_history is not None and costs_history.M != M:
        raise ValueError("history and future cost sequences differ in route count")
    tab = draw_table(draws)
    eta, theta, rho, v1d = _draw_params(tab, M)
    idx = _thin(eta.shape[0], max_draws)
    paths = np.empty((len(idx), costs_future.T, M + 1))
    for j, s in enumerate(idx):
        V = _initial(None if v1d is None else v1d[s], v1, eta.shape[1], M)
        if costs_history is not None:
            e = eta[s][:, None]
            for t in range(costs_history.T):
                V = (1.0 - e) * V + e * costs_history.costs[t]
        P, _ = _prob_paths(eta[s], theta[s], rho[s], V, costs_future.costs)
        paths[j] = P.mean(axis=0)
    q = (1.0 - band) / 2.0
    mean = paths.mean(axis=0)
    lo = np.quantile(paths, q, axis=0)
    hi = np.quantile(paths, 1.0 - q, axis=0)
    tr = None if truth is None else np.asarray(truth, dtype=float)
    if tr is not None and tr.shape != mean.shape:
        raise ValueError(f"truth must have shape {mean.shape}")
    exp_counts = None if n_commuters is None else mean * n_commuters
    return Extrapolation(mean, lo, hi, paths, tr, exp_counts)


# --- population densities ------------------------------------------------------------

_FAMILY = {"eta": "logitnormal", "theta": "lognormal", "rho": "logitnormal"}


def population_density(mu, sigma, grid, family: str) -> np.ndarray:
    """Average over (mu, sigma) pairs of the logit-/log-normal density on ``grid``."""
    x = np.asarray(grid, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))[:, None]
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))[:, None]
    if np.any(sigma <= 0):
        raise ValueError("scales must be positive")
    if family == "logitnormal":
        if np.any((x <= 0) | (x >= 1)):
            raise ValueError("grid must lie inside (0, 1)")
        y = logit(x)
        jac = 1.0 / (x * (1.0 - x))
    elif family == "lognormal":
        if np.any(x <= 0):
            raise ValueError("grid must be positive")
        y = np.log(x)
        jac = 1.0 / x
    else:
        raise ValueError(f"unknown family {family!r}")
    z = (y[None, :] - mu) / sigma
    dens = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi)) * jac[None, :]
    return dens.mean(axis=0)


def population_distribution(hyper_draws, grids: dict) -> dict:
    """Implied population densities of eta, theta and/or rho.

    ``hyper_draws`` holds ``mu_eta, sigma_eta, ...`` columns (PosteriorDraws,
    mapping or (S, 6) array in canonical order); ``grids`` maps parameter
    name to its evaluation grid.
    """
    if isinstance(hyper_draws, np.ndarray):
        tab = draw_table(np.atleast_2d(hyper_draws), list(HYPER_NAMES))
    else:
        tab = draw_table(hyper_draws)
    out = {}
    for p, g in grids.items():
        if p not in _FAMILY:
            raise ValueError(f"unknown individual parameter {p!r}")
        out[p] = population_density(tab[f"mu_{p}"], tab[f"sigma_{p}"], g, _FAMILY[p])
    return out


def point_mass_draws(eta: float, theta: float, rho: float, n: int = 1, delta=None) -> dict:
    """Draw table with ``n`` identical rows, handy for forward checks."""
    d = {"eta": np.full(n, eta), "theta": np.full(n, theta), "rho": np.full(n, rho)}
    if delta is not None:
        for j, v in enumerate(np.atleast_1d(delta), start=2):
            d[f"delta_{j}"] = np.full(n, float(v))
    return d


def summarize(draws, alpha: float = 0.95, diagnostics=None) -> dict:
    """Per-parameter mean and HDI, merged with R-hat/ESS when supplied."""
    tab = draw_table(draws)
    out = {}
    diag = diagnostics.to_dict()["parameters"] if diagnostics is not None else {}
    for k, v in tab.items():
        h = hdi(v, alpha) if hdi_size(v.size, alpha) >= 1 and hdi_size(v.size, alpha) < v.size else None
        row = {"mean": float(np.mean(v))}
        if h is not None:
            row.update({"hdi_lower": h.lower, "hdi_upper": h.upper, "hdi_alpha": alpha})
        row.update(diag.get(k, {}))
        out[k] = row
    return out
