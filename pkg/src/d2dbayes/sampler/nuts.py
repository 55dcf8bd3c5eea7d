"""No-U-Turn sampler with multinomial trajectory sampling.

Follows the structure of the Stan implementation: recursive tree doubling,
generalised U-turn checks (including the checks across the two halves of
every merged tree), dual-averaging step size adaptation and a diagonal
metric estimated in doubling warmup windows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
MAX_INIT_TRIES = 100


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_jitter: float = 1.0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 100:
            raise ValueError("warmup must be >= 100")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not 0.5 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0.5, 1)")
        if not 1 <= self.max_tree_depth <= 12:
            raise ValueError("max_tree_depth must lie in 1..12")
        if not self.init_jitter >= 0:
            raise ValueError("init_jitter must be nonnegative")


@dataclass
class PosteriorDraws:
    samples: np.ndarray  # (S, d') constrained
    unconstrained_samples: np.ndarray  # (S, d)
    chain_id: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray  # per chain
    inv_mass: np.ndarray  # (chains, d)
    names: list = field(default_factory=list)
    accept_stat: Optional[np.ndarray] = None
    tree_depth: Optional[np.ndarray] = None
    n_leapfrog: Optional[np.ndarray] = None
    warmup_divergences: Optional[np.ndarray] = None

    @property
    def n_chains(self) -> int:
        return int(self.chain_id.max()) + 1 if self.chain_id.size else 0

    def by_chain(self, constrained: bool = True) -> np.ndarray:
        """(chains, draws, d) view."""
        X = self.samples if constrained else self.unconstrained_samples
        c = self.n_chains
        return X.reshape(c, -1, X.shape[1])

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]


# --- adaptation -------------------------------------------------------------------

class _DualAveraging:
    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, delta: float):
        self.delta = delta
        self.restart(1.0)

    def restart(self, eps: float):
        self.mu = math.log(10.0 * eps)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        w = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - w) * self.s_bar + w * (self.delta - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        xe = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - xe) * self.x_bar + xe * x
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def _windows(warmup: int):
    """End indices (exclusive) of the metric-adaptation windows and the
    (start, stop) range in which draws are collected."""
    init_buffer, term_buffer, base = 75, 50, 25
    if warmup < init_buffer + term_buffer + base:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base = warmup - init_buffer - term_buffer
    ends = []
    stop = warmup - term_buffer
    start = init_buffer
    w = base
    while start < stop:
        end = start + w
        if end + 2 * w > stop:
            end = stop
        ends.append(end)
        start = end
        w *= 2
    return init_buffer, ends


# --- integrator -------------------------------------------------------------------

class _Tree:
    """Mutable state shared by one NUTS transition."""

    __slots__ = ("f", "m_inv", "eps", "H0", "rng", "n_leapfrog", "sum_metro", "divergent")

    def __init__(self, f, m_inv, eps, H0, rng):
        self.f = f
        self.m_inv = m_inv
        self.eps = eps
        self.H0 = H0
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False


def _leapfrog(f, q, p, g, eps, m_inv):
    p = p + 0.5 * eps * g
    q = q + eps * m_inv * p
    lp, g = f(q)
    p = p + 0.5 * eps * g
    return q, p, lp, g


def _uturn_ok(ps_a, ps_b, rho) -> bool:
    return float(ps_a @ rho) > 0.0 and float(ps_b @ rho) > 0.0


def _build(tree: _Tree, depth: int, q, p, g, sign: int):
    """Extend ``depth`` levels from (q, p, g).

    Returns ``None`` when the subtree is invalid (divergence or U-turn),
    otherwise a tuple
    ``(q_end, p_end, g_end, q_prop, lp_prop, g_prop, log_w, rho,
    p_beg, ps_beg, ps_end)``.
    """
    if depth == 0:
        q, p, lp, g = _leapfrog(tree.f, q, p, g, sign * tree.eps, tree.m_inv)
        tree.n_leapfrog += 1
        with np.errstate(over="ignore", invalid="ignore"):  # blown-up momenta count as divergent
            H = -lp + 0.5 * float(p @ (tree.m_inv * p))
        if not math.isfinite(H):
            H = math.inf
        dH = tree.H0 - H
        if H - tree.H0 > DIVERGENCE_THRESHOLD:
            tree.divergent = True
            tree.sum_metro += 0.0
            return None
        tree.sum_metro += 1.0 if dH > 0 else math.exp(dH)
        ps = tree.m_inv * p
        return q, p, g, q, lp, g, dH, p.copy(), p, ps, ps

    a = _build(tree, depth - 1, q, p, g, sign)
    if a is None:
        return None
    b = _build(tree, depth - 1, a[0], a[1], a[2], sign)
    if b is None:
        return None
    log_w = np.logaddexp(a[6], b[6])
    if b[6] > log_w or tree.rng.random() < math.exp(b[6] - log_w):
        prop = b[3:6]
    else:
        prop = a[3:6]
    rho = a[7] + b[7]
    ok = (_uturn_ok(a[9], b[10], rho)
          and _uturn_ok(a[9], b[9], a[7] + b[8])
          and _uturn_ok(a[10], b[10], b[7] + a[1]))
    if not ok:
        return None
    return b[0], b[1], b[2], prop[0], prop[1], prop[2], log_w, rho, a[8], a[9], b[10]


def _transition(f, q0, lp0, g0, eps, m_inv, max_depth, rng):
    d = q0.shape[0]
    p0 = rng.standard_normal(d) / np.sqrt(m_inv)
    H0 = -lp0 + 0.5 * float(p0 @ (m_inv * p0))
    tree = _Tree(f, m_inv, eps, H0, rng)
    ps0 = m_inv * p0
    # each side: (q, p, g, p_sharp, p)
    minus = [q0, p0, g0, ps0]
    plus = [q0, p0, g0, ps0]
    rho_minus = np.zeros(d)
    rho_plus = p0.copy()
    q_s, lp_s, g_s = q0, lp0, g0
    log_w = 0.0
    depth = 0
    while depth < max_depth:
        if rng.random() > 0.5:
            side, sign = plus, 1
        else:
            side, sign = minus, -1
        old_inner_p, old_inner_ps = side[1], side[3]
        sub = _build(tree, depth, side[0], side[1], side[2], sign)
        if sub is None:
            break
        depth += 1
        if sub[6] > log_w or rng.random() < math.exp(sub[6] - log_w):
            q_s, lp_s, g_s = sub[3], sub[4], sub[5]
        log_w = float(np.logaddexp(log_w, sub[6]))
        rho_old = rho_minus + rho_plus
        rho_new = sub[7]
        side[0], side[1], side[2], side[3] = sub[0], sub[1], sub[2], sub[10]
        if sign == 1:
            rho_minus, rho_plus = rho_old, rho_new
        else:
            rho_minus, rho_plus = rho_new, rho_old
        other = minus if sign == 1 else plus
        # old part spans other-outer .. old_inner, new part spans sub beg .. sub end
        ok = (_uturn_ok(other[3], sub[10], rho_old + rho_new)
              and _uturn_ok(other[3], sub[9], rho_old + sub[8])
              and _uturn_ok(old_inner_ps, sub[10], rho_new + old_inner_p))
        if not ok:
            break
    n = max(tree.n_leapfrog, 1)
    return q_s, lp_s, g_s, tree.sum_metro / n, depth, tree.n_leapfrog, tree.divergent


def _init_step_size(f, q, lp, g, eps, m_inv, rng):
    d = q.shape[0]

    def delta_H(e):
        p = rng.standard_normal(d) / np.sqrt(m_inv)
        H0 = -lp + 0.5 * float(p @ (m_inv * p))
        _, p1, lp1, _ = _leapfrog(f, q, p, g, e, m_inv)
        with np.errstate(over="ignore", invalid="ignore"):
            H1 = -lp1 + 0.5 * float(p1 @ (m_inv * p1))
        return H0 - H1 if math.isfinite(H1) else -math.inf

    target = math.log(0.8)
    direction = 1 if delta_H(eps) > target else -1
    for _ in range(200):
        dh = delta_H(eps)
        if direction == 1 and not dh > target:
            break
        if direction == -1 and not dh < target:
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7:
            raise SamplerError("step size search diverged; posterior may be improper")
        if eps == 0.0:
            raise SamplerError("step size collapsed to zero")
    return eps


def _safe(logp_grad):
    def f(q):
        try:
            lp, g = logp_grad(q)
        except (ValueError, FloatingPointError, OverflowError, ZeroDivisionError):
            return -math.inf, np.zeros_like(q)
        lp = float(lp)
        if not math.isfinite(lp) or not np.all(np.isfinite(g)):
            return -math.inf, np.zeros_like(q)
        return lp, np.asarray(g, dtype=float)
    return f


def _initial_point(f, dim, jitter, rng, init):
    for _ in range(MAX_INIT_TRIES):
        if init is None:
            q = rng.normal(0.0, jitter, dim) if jitter > 0 else np.zeros(dim)
        else:
            q = np.asarray(init, dtype=float) + (rng.normal(0.0, jitter, dim) if jitter > 0 else 0.0)
        lp, g = f(q)
        if math.isfinite(lp):
            return q, lp, g
    raise SamplerError(f"no finite log density found in {MAX_INIT_TRIES} initialisation attempts")


def run_chain(logp_grad: Callable, dim: int, config: SamplerConfig, rng: np.random.Generator, init=None):
    f = _safe(logp_grad)
    q, lp, g = _initial_point(f, dim, config.init_jitter, rng, init)
    m_inv = np.ones(dim)
    eps = _init_step_size(f, q, lp, g, 1.0, m_inv, rng)
    da = _DualAveraging(config.target_accept)
    da.restart(eps)
    init_buffer, ends = _windows(config.warmup)
    window_start = init_buffer
    buf = []
    warm_div = 0
    for it in range(config.warmup):
        q, lp, g, acc, _, _, div = _transition(f, q, lp, g, eps, m_inv, config.max_tree_depth, rng)
        warm_div += div
        eps = da.update(acc)
        if ends and window_start <= it < ends[-1]:
            buf.append(q)
            if it + 1 in ends:
                X = np.asarray(buf)
                n = X.shape[0]
                var = X.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                m_inv = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                buf = []
                window_start = it + 1
                eps = _init_step_size(f, q, lp, g, eps, m_inv, rng)
                da.restart(eps)
    if warm_div == config.warmup:
        raise SamplerError("every warmup transition diverged")
    eps = da.final
    out = np.empty((config.draws, dim))
    stats = np.empty((config.draws, 4))
    for i in range(config.draws):
        q, lp, g, acc, depth, nl, div = _transition(f, q, lp, g, eps, m_inv, config.max_tree_depth, rng)
        out[i] = q
        stats[i] = acc, depth, nl, div
    return out, stats, eps, m_inv, warm_div


def nuts_sample(logp_grad: Callable, dim: int, config: Optional[SamplerConfig] = None, init=None,
                constrain: Optional[Callable] = None, names=None) -> PosteriorDraws:
    """Run ``config.chains`` chains sequentially and stack the draws.

    Parameters
    ----------
    logp_grad : callable
        ``q -> (log density, gradient)`` on the unconstrained space.
    dim : int
    config : SamplerConfig
    init : array, optional
        Centre for the jittered initial points (default: origin).
    constrain : callable, optional
        Maps an (S, d) block of unconstrained draws to constrained rows.
    names : list of str, optional
        Column names of the constrained draws.
    """
    config = config or SamplerConfig()
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    U, stats, eps_all, minv_all, wdiv = [], [], [], [], []
    for c, ss in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(ss))
        out, st, eps, m_inv, wd = run_chain(logp_grad, dim, config, rng, init)
        U.append(out)
        stats.append(st)
        eps_all.append(eps)
        minv_all.append(m_inv)
        wdiv.append(wd)
        log.debug("chain %d: step %.3g, %d divergent", c, eps, int(st[:, 3].sum()))
    U = np.concatenate(U)
    stats = np.concatenate(stats)
    X = constrain(U) if constrain is not None else U.copy()
    return PosteriorDraws(
        samples=X,
        unconstrained_samples=U,
        chain_id=np.repeat(np.arange(config.chains), config.draws),
        divergent=stats[:, 3].astype(bool),
        step_size=np.asarray(eps_all),
        inv_mass=np.asarray(minv_all),
        names=list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])],
        accept_stat=stats[:, 0],
        tree_depth=stats[:, 1].astype(int),
        n_leapfrog=stats[:, 2].astype(int),
        warmup_divergences=np.asarray(wdiv),
    )


def sample_posterior(model, config: Optional[SamplerConfig] = None, init=None) -> PosteriorDraws:
    """NUTS on a ``PosteriorModel``: constrained draws carry the model's names."""
    return nuts_sample(model.logp_grad, model.dim, config, init=init,
                       constrain=model.constrain_draws, names=model.constrained_names)
