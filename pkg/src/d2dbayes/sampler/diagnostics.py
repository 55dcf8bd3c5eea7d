"""Convergence diagnostics: split R-hat, multi-chain ESS, rank of truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


def _chains(draws) -> np.ndarray:
    """Coerce to (chains, n, d)."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError("draws must be shaped (chains, draws) or (chains, draws, dim)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def split_rhat(draws) -> np.ndarray:
    """Split R-hat per dimension.

    Convention: if the within-chain variance is zero but the chains differ,
    R-hat is ``+inf``; if every draw is identical the statistic is undefined
    and a ValueError is raised.
    """
    x = _chains(draws)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("split R-hat needs >= 2 chains of >= 4 draws")
    s = _split(x)
    n = s.shape[1]
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    out = np.empty(x.shape[2])
    for k in range(x.shape[2]):
        if W[k] <= 0.0:
            if B[k] > 0.0:
                out[k] = np.inf
                continue
            raise ValueError(f"zero within-chain variance in dimension {k}")
        out[k] = np.sqrt(((n - 1) / n * W[k] + B[k] / n) / W[k])
    return out


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=m)
    ac = np.fft.irfft(f * np.conj(f), n=m)[..., :n]
    return ac / n


def ess(draws) -> np.ndarray:
    """Multi-chain effective sample size with Geyer's initial monotone
    sequence truncation (computed on the split chains)."""
    x = _split(_chains(draws))
    m, n, d = x.shape
    if m < 2 or n < 2:
        raise ValueError("ESS needs >= 2 chains of >= 4 draws")
    out = np.empty(d)
    for k in range(d):
        c = x[:, :, k]
        acov = _autocov(c)
        chain_mean = c.mean(axis=1)
        chain_var = acov[:, 0] * n / (n - 1.0)
        W = chain_var.mean()
        var_plus = W * (n - 1.0) / n + chain_mean.var(ddof=1)
        if not var_plus > 0:
            raise ValueError(f"zero variance in dimension {k}")
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # Geyer: sums of adjacent pairs, truncated at first negative pair,
        # then forced monotone.
        pairs = []
        t = 0
        while t + 1 < n:
            p = rho[t] + rho[t + 1]
            if p < 0:
                break
            pairs.append(p)
            t += 2
        pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
        tau = -1.0 + 2.0 * pairs.sum()
        tau = max(tau, 1.0 / np.log10(m * n))
        out[k] = m * n / tau
    return out


def rank_of_truth(draws, truth) -> np.ndarray:
    """(#draws < truth + 0.5 #draws == truth) / S per dimension."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    t = np.atleast_1d(np.asarray(truth, dtype=float))
    if x.shape[0] < 1:
        raise ValueError("need at least one draw")
    return ((x < t).sum(axis=0) + 0.5 * (x == t).sum(axis=0)) / x.shape[0]


@dataclass
class Diagnostics:
    names: list
    split_rhat: np.ndarray
    ess: np.ndarray
    divergence_count: int
    rank: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {
            "divergences": int(self.divergence_count),
            "parameters": {
                n: {"rhat": _num(r), "ess": _num(e)} for n, r, e in zip(self.names, self.split_rhat, self.ess)
            },
        }
        if self.rank is not None:
            for n, r in zip(self.names, self.rank):
                d["parameters"][n]["rank"] = float(r)
        return d

    def max_rhat(self) -> float:
        r = self.split_rhat[~np.isnan(self.split_rhat)]
        return float(r.max()) if r.size else float("nan")


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def diagnose(posterior, truth=None, columns=None) -> Diagnostics:
    """Diagnostics for each constrained column of a PosteriorDraws.

    Columns with no variation at all get NaN rather than raising.
    """
    X = posterior.by_chain()
    names = list(posterior.names)
    if columns is not None:
        idx = [names.index(c) for c in columns]
        X = X[:, :, idx]
        names = [names[i] for i in idx]
    d = X.shape[2]
    rh = np.full(d, np.nan)
    es = np.full(d, np.nan)
    if X.shape[0] >= 2 and X.shape[1] >= 4:
        for k in range(d):
            try:
                rh[k] = split_rhat(X[:, :, k])[0]
                es[k] = ess(X[:, :, k])[0]
            except ValueError:
                pass
    rank = None
    if truth is not None:
        rank = rank_of_truth(X.reshape(-1, d), truth)
    return Diagnostics(names, rh, es, int(np.sum(posterior.divergent)), rank)
