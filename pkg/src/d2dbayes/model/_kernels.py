"""Log-likelihood and gradient kernels.

Every kernel exists twice: an ``@njit`` loop version (``*_nb``) that runs the
valuation recursion day by day, and a numpy version (``*_np``) that unrolls
the smoothing into closed-form weight matrices and vectorises over days.
The public names pick one according to ``D2DBAYES_DISABLE_NUMBA``.

Shapes: ``costs`` (T, M), ``counts`` (T, M+1), ``choices`` (N, T) with
entries 0..M, per-commuter initial values ``v1`` (N, M).
"""
import math

import numpy as np

from .._accel import njit, pick


# --- pooled: sufficient statistics are the daily counts --------------------

@njit
def pooled_kernel_nb(eta, theta, rho, v1, costs, counts):
    T, M = costs.shape
    V = v1.copy()
    D = np.zeros(M)
    s = np.empty(M)
    g_v1 = np.zeros(M)
    ll = 0.0
    g_eta = 0.0
    g_theta = 0.0
    log_rho = math.log(rho)
    log_1m = math.log1p(-rho)
    decay = 1.0
    n0 = 0.0
    n1 = 0.0
    for t in range(T):
        vmin = V[0]
        for m in range(1, M):
            if V[m] < vmin:
                vmin = V[m]
        tot = 0.0
        for m in range(M):
            s[m] = math.exp(-theta * (V[m] - vmin))
            tot += s[m]
        lse = -theta * vmin + math.log(tot)
        for m in range(M):
            s[m] /= tot
        o0 = counts[t, 0]
        n = 0.0
        for m in range(M):
            n += counts[t, m + 1]
        n0 += o0
        n1 += n
        if o0 > 0:
            ll += o0 * log_rho
        if n > 0:
            ll += n * log_1m
            vbar = 0.0
            for m in range(M):
                vbar += s[m] * V[m]
            for m in range(M):
                o = counts[t, m + 1]
                if o > 0:
                    ll += o * (-theta * V[m] - lse)
                g_theta += -o * V[m]
                g = theta * (n * s[m] - o)
                g_eta += g * D[m]
                g_v1[m] += g * decay
            g_theta += n * vbar
        for m in range(M):
            D[m] = (1.0 - eta) * D[m] - V[m] + costs[t, m]
            V[m] = (1.0 - eta) * V[m] + eta * costs[t, m]
        decay *= 1.0 - eta
    g_rho = n0 / rho - n1 / (1.0 - rho)
    return ll, g_eta, g_theta, g_rho, g_v1


def _smoothing_weights(eta, T):
    """W (.., T, T) with V = W @ c + E^t v1, and its eta-derivative.

    ``eta`` may be a scalar or an (N,) array; leading dims follow it.
    """
    eta = np.asarray(eta, dtype=float)[..., None, None]
    t = np.arange(T)
    lag = t[:, None] - 1 - t[None, :]
    mask = lag >= 0
    lagc = np.where(mask, lag, 0)
    E = 1.0 - eta
    Ep = E ** lagc
    W = np.where(mask, eta * Ep, 0.0)
    dW = np.where(mask, Ep - eta * lagc * E ** np.maximum(lagc - 1, 0), 0.0)
    tt = t.astype(float)[:, None]
    decay = E ** tt  # (.., T, 1)
    ddecay = np.where(tt > 0, -tt * E ** np.maximum(tt - 1, 0), 0.0)
    return W, dW, decay, ddecay


def _values_np(eta, v1, costs):
    """V, dV/deta and decay factors: shapes (.., T, M), (.., T, M), (.., T, 1)."""
    T = costs.shape[0]
    W, dW, decay, ddecay = _smoothing_weights(eta, T)
    v1 = np.asarray(v1, dtype=float)[..., None, :]
    V = W @ costs + decay * v1
    D = dW @ costs + ddecay * v1
    return V, D, decay


def _softmax_neg(theta, V):
    u = -np.asarray(theta, dtype=float)[..., None, None] * V
    umax = u.max(axis=-1, keepdims=True)
    w = np.exp(u - umax)
    tot = w.sum(axis=-1, keepdims=True)
    return w / tot, (umax + np.log(tot))[..., 0]


def pooled_kernel_np(eta, theta, rho, v1, costs, counts):
    V, D, decay = _values_np(eta, v1, costs)
    s, lse = _softmax_neg(theta, V)
    o0 = counts[:, 0].astype(float)
    o = counts[:, 1:].astype(float)
    n = o.sum(axis=1)
    logp = -theta * V - lse[:, None]
    ll = np.sum(np.where(o0 > 0, o0 * np.log(rho), 0.0)) + np.sum(np.where(n > 0, n * np.log1p(-rho), 0.0))
    ll += np.sum(np.where(o > 0, o * logp, 0.0))
    g = theta * (n[:, None] * s - o)
    g_eta = np.sum(g * D)
    g_theta = np.sum(-o * V) + np.sum(n * np.sum(s * V, axis=1))
    g_v1 = np.sum(g * decay, axis=0)
    g_rho = o0.sum() / rho - n.sum() / (1.0 - rho)
    return ll, g_eta, g_theta, g_rho, g_v1


# --- hierarchical, complete observability ----------------------------------

@njit
def hier_traj_kernel_nb(eta, theta, rho, v1, costs, choices):
    N = eta.shape[0]
    T, M = costs.shape
    g_eta = np.zeros(N)
    g_theta = np.zeros(N)
    g_rho = np.zeros(N)
    V = np.empty(M)
    D = np.empty(M)
    s = np.empty(M)
    ll = 0.0
    for i in range(N):
        e = eta[i]
        th = theta[i]
        r = rho[i]
        log_r = math.log(r)
        log_1m = math.log1p(-r)
        for m in range(M):
            V[m] = v1[i, m]
            D[m] = 0.0
        ge = 0.0
        gt = 0.0
        n0 = 0
        n1 = 0
        for t in range(T):
            x = choices[i, t]
            if x == 0:
                n0 += 1
                ll += log_r
            else:
                n1 += 1
                vmin = V[0]
                for m in range(1, M):
                    if V[m] < vmin:
                        vmin = V[m]
                tot = 0.0
                for m in range(M):
                    s[m] = math.exp(-th * (V[m] - vmin))
                    tot += s[m]
                lse = -th * vmin + math.log(tot)
                k = x - 1
                ll += log_1m - th * V[k] - lse
                vbar = 0.0
                dbar = 0.0
                for m in range(M):
                    s[m] /= tot
                    vbar += s[m] * V[m]
                    dbar += s[m] * D[m]
                gt += -V[k] + vbar
                ge += th * (dbar - D[k])
            for m in range(M):
                D[m] = (1.0 - e) * D[m] - V[m] + costs[t, m]
                V[m] = (1.0 - e) * V[m] + e * costs[t, m]
        g_eta[i] = ge
        g_theta[i] = gt
        g_rho[i] = n0 / r - n1 / (1.0 - r)
    return ll, g_eta, g_theta, g_rho


def hier_traj_kernel_np(eta, theta, rho, v1, costs, choices):
    N, T = choices.shape
    M = costs.shape[1]
    V, D, _ = _values_np(eta, v1, costs)  # (N, T, M)
    s, lse = _softmax_neg(theta, V)
    onehot = (choices[:, :, None] == np.arange(1, M + 1)).astype(float)
    travel = choices > 0
    logp = -theta[:, None, None] * V - lse[..., None]
    ll = np.sum(np.where(choices == 0, np.log(rho)[:, None], 0.0))
    ll += np.sum(np.where(travel, np.log1p(-rho)[:, None], 0.0))
    ll += np.sum(onehot * logp)
    tr = travel[..., None]
    g_theta = np.sum(tr * (s * V) - onehot * V, axis=(1, 2))
    g_eta = theta * np.sum(tr * (s * D) - onehot * D, axis=(1, 2))
    n0 = np.sum(choices == 0, axis=1)
    g_rho = n0 / rho - (T - n0) / (1.0 - rho)
    return ll, g_eta, g_theta, g_rho


# --- hierarchical, anonymised counts (multinomial mixture approximation) ----

@njit
def hier_counts_kernel_nb(eta, theta, rho, v1, costs, counts):
    N = eta.shape[0]
    T, M = costs.shape
    V = v1.copy()
    D = np.zeros((N, M))
    S = np.empty((N, M))
    pbar = np.empty(M + 1)
    w = np.empty(M + 1)
    g_eta = np.zeros(N)
    g_theta = np.zeros(N)
    g_rho = np.zeros(N)
    ll = 0.0
    for t in range(T):
        for k in range(M + 1):
            pbar[k] = 0.0
        for i in range(N):
            th = theta[i]
            vmin = V[i, 0]
            for m in range(1, M):
                if V[i, m] < vmin:
                    vmin = V[i, m]
            tot = 0.0
            for m in range(M):
                S[i, m] = math.exp(-th * (V[i, m] - vmin))
                tot += S[i, m]
            for m in range(M):
                S[i, m] /= tot
                pbar[m + 1] += (1.0 - rho[i]) * S[i, m]
            pbar[0] += rho[i]
        for k in range(M + 1):
            pbar[k] /= N
            o = counts[t, k]
            if o > 0:
                ll += o * math.log(pbar[k])
                w[k] = o / (N * pbar[k])
            else:
                w[k] = 0.0
        for i in range(N):
            ws = 0.0
            vbar = 0.0
            dbar = 0.0
            for m in range(M):
                ws += w[m + 1] * S[i, m]
                vbar += S[i, m] * V[i, m]
                dbar += S[i, m] * D[i, m]
            g_rho[i] += w[0] - ws
            a = 0.0
            b = 0.0
            for m in range(M):
                ws_m = w[m + 1] * S[i, m]
                a += ws_m * (vbar - V[i, m])
                b += ws_m * (dbar - D[i, m])
            g_theta[i] += (1.0 - rho[i]) * a
            g_eta[i] += (1.0 - rho[i]) * theta[i] * b
            e = eta[i]
            for m in range(M):
                D[i, m] = (1.0 - e) * D[i, m] - V[i, m] + costs[t, m]
                V[i, m] = (1.0 - e) * V[i, m] + e * costs[t, m]
    return ll, g_eta, g_theta, g_rho


def hier_counts_kernel_np(eta, theta, rho, v1, costs, counts):
    N = eta.shape[0]
    V, D, _ = _values_np(eta, v1, costs)  # (N, T, M)
    s, _ = _softmax_neg(theta, V)
    p_route = (1.0 - rho)[:, None, None] * s
    pbar = np.concatenate(
        [np.full((counts.shape[0], 1), rho.mean()), p_route.mean(axis=0)], axis=1
    )
    o = counts.astype(float)
    safe = np.where(o > 0, pbar, 1.0)
    ll = np.sum(np.where(o > 0, o * np.log(safe), 0.0))
    w = np.where(o > 0, o / (N * safe), 0.0)  # (T, M+1)
    ws = w[None, :, 1:] * s  # (N, T, M)
    vbar = np.sum(s * V, axis=2, keepdims=True)
    dbar = np.sum(s * D, axis=2, keepdims=True)
    g_rho = np.sum(w[:, 0])[None] - np.sum(ws, axis=(1, 2))
    g_theta = (1.0 - rho) * np.sum(ws * (vbar - V), axis=(1, 2))
    g_eta = (1.0 - rho) * theta * np.sum(ws * (dbar - D), axis=(1, 2))
    return ll, g_eta, g_theta, g_rho


pooled_kernel = pick(pooled_kernel_nb, pooled_kernel_np)
hier_traj_kernel = pick(hier_traj_kernel_nb, hier_traj_kernel_np)
hier_counts_kernel = pick(hier_counts_kernel_nb, hier_counts_kernel_np)
