"""Log-posterior and its gradient on the sampler's unconstrained space.

Coordinate layouts
------------------
pooled
    ``eta_u, theta_u, rho_u`` (logit, log, logit), then one block of
    ``M-1`` offsets per OD pair when initial values are endogenous.
hier, non-centred
    ``mu_eta, log sigma_eta, mu_theta, log sigma_theta, mu_rho,
    log sigma_rho`` followed by the N x 3 offsets ``z`` (row-major).
hier, centred
    same hyper block followed by the N x 3 latent individual values
    ``a = (logit eta, log theta, logit rho)``.  Only used as a control for
    the funnel geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from ..dynamics import ChoiceTrajectory, CountSeries, anonymize
from ..network import CostSequence
from ..params import HYPER_NAMES, HierParams, HyperParams, IndividualParams, PooledParams
from . import _kernels
from .likelihood import multinomial_log_coef
from .priors import PriorSpec
from .transforms import UnconstrainedVector

REGIMES = ("pooled-complete", "pooled-counts", "hier-complete", "hier-counts")
INIT_MODES = ("zeros", "freeflow", "delta")
_LOG_2PI = math.log(2.0 * math.pi)

COUNTS_CAVEAT = (
    "hierarchical fit on anonymised counts: the multinomial approximation "
    "overstates count variance, so population dispersion (sigma) tends to be "
    "underestimated"
)


@dataclass(frozen=True)
class DataBlock:
    """Observations for one OD pair with its cost sequence.

    ``v1`` is the base initial valuation used when initial values are
    ``freeflow`` (typically free-flow path times); ignored otherwise.
    """

    obs: object
    costs: CostSequence
    v1: Optional[np.ndarray] = None

    def __post_init__(self):
        M = self.obs.n_routes
        if M != self.costs.M:
            raise ValueError(f"OD {self.costs.od_id}: data has {M} routes, costs have {self.costs.M}")
        if self.obs.T != self.costs.T:
            raise ValueError(f"OD {self.costs.od_id}: data covers {self.obs.T} days, costs {self.costs.T}")
        if self.v1 is not None:
            v = np.asarray(self.v1, dtype=float)
            if v.shape != (M,):
                raise ValueError(f"base initial values must have length {M}")
            object.__setattr__(self, "v1", v)


class PosteriorModel:
    """Target density for one regime.

    Parameters
    ----------
    blocks : DataBlock or sequence of DataBlock
        One block per OD pair.  Pooled regimes share (eta, theta, rho)
        across blocks; hierarchical regimes take a single block.
    regime : str
        One of ``REGIMES``.
    priors : PriorSpec, optional
    init_values : {"zeros", "freeflow", "delta"}
    parameterization : {"noncentered", "centered"}
    """

    def __init__(self, blocks, regime: str = "pooled-complete", priors: Optional[PriorSpec] = None,
                 init_values: str = "zeros", parameterization: str = "noncentered"):
        if isinstance(blocks, DataBlock):
            blocks = [blocks]
        self.blocks = list(blocks)
        if not self.blocks:
            raise ValueError("at least one data block is required")
        if regime not in REGIMES:
            raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        if init_values not in INIT_MODES:
            raise ValueError(f"unknown initial-value mode {init_values!r}")
        if parameterization not in ("noncentered", "centered"):
            raise ValueError(f"unknown parameterization {parameterization!r}")
        self.regime = regime
        self.priors = priors if priors is not None else PriorSpec()
        self.init_values = init_values
        self.parameterization = parameterization
        self.hierarchical = regime.startswith("hier")
        want = CountSeries if regime.endswith("counts") else ChoiceTrajectory
        for b in self.blocks:
            if not isinstance(b.obs, want):
                raise TypeError(f"regime {regime} needs {want.__name__} data, got {type(b.obs).__name__}")
            if init_values == "freeflow" and b.v1 is None:
                raise ValueError("freeflow initial values need base values on every block")
        if self.hierarchical:
            if len(self.blocks) != 1:
                raise ValueError("hierarchical regimes take a single OD block")
            if init_values == "delta":
                raise ValueError("endogenous initial-value offsets are only supported for pooled regimes")
        self._prepare()

    # -- layout --------------------------------------------------------------

    def _prepare(self):
        pr = self.priors
        if self.hierarchical:
            b = self.blocks[0]
            self.N = b.obs.N
            self.M = b.costs.M
            self._costs = np.ascontiguousarray(b.costs.costs)
            base = b.v1 if self.init_values == "freeflow" else np.zeros(self.M)
            self._V1 = np.ascontiguousarray(np.broadcast_to(base, (self.N, self.M)))
            if isinstance(b.obs, ChoiceTrajectory):
                self._obs = np.ascontiguousarray(b.obs.choices, dtype=np.int64)
                self._const = 0.0
            else:
                self._obs = np.ascontiguousarray(b.obs.counts, dtype=np.float64)
                self._const = multinomial_log_coef(b.obs.counts)
            self._kernel = _kernels.hier_traj_kernel if self.regime == "hier-complete" else _kernels.hier_counts_kernel
            self._hyper_priors = [pr[k] for k in HYPER_NAMES]
            tag = "z" if self.parameterization == "noncentered" else "a"
            self.names = ["mu_eta", "log_sigma_eta", "mu_theta", "log_sigma_theta", "mu_rho", "log_sigma_rho"]
            self.names += [f"{tag}_{p}_{n + 1}" for n in range(self.N) for p in ("eta", "theta", "rho")]
            self.constrained_names = list(HYPER_NAMES) + [
                f"{p}_{n + 1}" for p in ("eta", "theta", "rho") for n in range(self.N)
            ]
            self.dim = 6 + 3 * self.N
            return
        self._data = []
        for b in self.blocks:
            counts = anonymize(b.obs).counts if isinstance(b.obs, ChoiceTrajectory) else b.obs.counts
            const = multinomial_log_coef(counts) if self.regime == "pooled-counts" else 0.0
            base = b.v1 if self.init_values == "freeflow" else np.zeros(b.costs.M)
            self._data.append((np.ascontiguousarray(b.costs.costs), np.ascontiguousarray(counts, dtype=np.float64),
                               np.ascontiguousarray(base, dtype=float), const))
        self._const = sum(d[3] for d in self._data)
        self._pooled_priors = [pr["eta"], pr["theta"], pr["rho"]]
        self.names = ["eta_u", "theta_u", "rho_u"]
        self.constrained_names = ["eta", "theta", "rho"]
        self._delta_slices = []
        if self.init_values == "delta":
            single = len(self.blocks) == 1
            pos = 3
            for b in self.blocks:
                M = b.costs.M
                self._delta_slices.append(slice(pos, pos + M - 1))
                pos += M - 1
                for j in range(2, M + 1):
                    nm = f"delta_{j}" if single else f"delta_{b.costs.od_id}_{j}"
                    self.names.append(nm)
                    self.constrained_names.append(nm)
        self.dim = len(self.names)

    # -- density ---------------------------------------------------------------

    def logp_grad(self, u):
        """Log posterior (up to nothing: the normalising constants of the
        priors and likelihood are included) and its gradient."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}")
        if not np.all(np.isfinite(u)):
            raise ValueError("unconstrained values must be finite")
        if self.hierarchical:
            return self._hier(u)
        return self._pooled(u)

    def logp(self, u) -> float:
        return self.logp_grad(u)[0]

    def _pooled(self, u):
        ue, ut, ur = float(u[0]), float(u[1]), float(u[2])
        eta = _expit(ue)
        theta = math.exp(ut)
        rho = _expit(ur)
        if not (0.0 < eta < 1.0 and 0.0 < rho < 1.0 and 0.0 < theta < math.inf):
            return -math.inf, np.zeros(self.dim)
        grad = np.zeros(self.dim)
        lp = self._const
        ge = gt = gr = 0.0
        for k, (costs, counts, base, _) in enumerate(self._data):
            if self._delta_slices:
                sl = self._delta_slices[k]
                v1 = np.concatenate(([0.0], u[sl]))
            else:
                v1 = base
            ll, g_eta, g_theta, g_rho, g_v1 = self._kernel_pooled(eta, theta, rho, v1, costs, counts)
            lp += ll
            ge += g_eta
            gt += g_theta
            gr += g_rho
            if self._delta_slices:
                grad[sl] = g_v1[1:]
        grad[0] = ge * eta * (1.0 - eta)
        grad[1] = gt * theta
        grad[2] = gr * rho * (1.0 - rho)
        for i, p in enumerate(self._pooled_priors):
            a, d = p.logpdf_unconstrained(u[i])
            lp += a
            grad[i] += float(d)
        if self._delta_slices:
            pd = self.priors["delta"]
            for sl in self._delta_slices:
                a, d = pd.logpdf_unconstrained(u[sl])
                lp += a
                grad[sl] += d
        return float(lp), grad

    _kernel_pooled = staticmethod(_kernels.pooled_kernel)

    def _hier(self, u):
        N = self.N
        h = u[:6]
        mu = h[0::2]
        ls = h[1::2]
        with np.errstate(over="ignore"):
            sigma = np.exp(ls)
        grad = np.zeros(self.dim)
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            return -math.inf, grad
        w = u[6:].reshape(N, 3)
        if self.parameterization == "noncentered":
            a = mu + sigma * w
        else:
            a = w
        with np.errstate(over="ignore"):
            eta = expit(a[:, 0])
            theta = np.exp(a[:, 1])
            rho = expit(a[:, 2])
        if (np.any(eta <= 0) or np.any(eta >= 1) or np.any(rho <= 0) or np.any(rho >= 1)
                or np.any(theta <= 0) or not np.all(np.isfinite(theta))):
            return -math.inf, grad
        ll, g_eta, g_theta, g_rho = self._kernel(eta, theta, rho, self._V1, self._costs, self._obs)
        lp = ll + self._const
        g_a = np.column_stack([g_eta * eta * (1.0 - eta), g_theta * theta, g_rho * rho * (1.0 - rho)])
        gh = np.zeros(6)
        if self.parameterization == "noncentered":
            lp += -0.5 * float(np.sum(w * w)) - 1.5 * N * _LOG_2PI
            gh[0::2] = g_a.sum(axis=0)
            gh[1::2] = (g_a * w).sum(axis=0) * sigma
            gz = g_a * sigma - w
        else:
            r = (a - mu) / sigma
            lp += float(np.sum(-0.5 * r * r - ls)) - 1.5 * N * _LOG_2PI
            gh[0::2] = (r / sigma).sum(axis=0)
            gh[1::2] = (r * r).sum(axis=0) - N
            gz = g_a - r / sigma
        for i, p in enumerate(self._hyper_priors):
            a_, d = p.logpdf_unconstrained(h[i])
            lp += a_
            gh[i] += float(d)
        grad[:6] = gh
        grad[6:] = gz.ravel()
        return float(lp), grad

    # -- transforms --------------------------------------------------------------

    def constrain(self, u):
        """Unconstrained vector -> PooledParams (first block's delta) or HierParams."""
        u = _finite(u, self.dim)
        if self.hierarchical:
            hyper, z = self._hier_parts(u)
            return HierParams(hyper, z)
        delta = u[self._delta_slices[0]].copy() if self._delta_slices else None
        return PooledParams(float(expit(u[0])), float(np.exp(u[1])), float(expit(u[2])), delta)

    def _hier_parts(self, u):
        h = u[:6].copy()
        h[1::2] = np.exp(h[1::2])
        hyper = HyperParams.from_array(h)
        w = u[6:].reshape(self.N, 3)
        z = w if self.parameterization == "noncentered" else (w - hyper.mu) / hyper.sigma
        return hyper, z.copy()

    def constrained_vector(self, u) -> np.ndarray:
        """Row of a draws table: constrained parameters plus, for hierarchical
        models, the implied individual parameters."""
        u = _finite(u, self.dim)
        if self.hierarchical:
            h = u[:6].copy()
            h[1::2] = np.exp(h[1::2])
            w = u[6:].reshape(self.N, 3)
            a = h[0::2] + h[1::2] * w if self.parameterization == "noncentered" else w
            return np.concatenate([h, expit(a[:, 0]), np.exp(a[:, 1]), expit(a[:, 2])])
        out = u.copy()
        out[0] = expit(u[0])
        out[1] = np.exp(u[1])
        out[2] = expit(u[2])
        return out

    def constrain_draws(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[0] == 0:
            return np.empty((0, len(self.constrained_names)))
        return np.stack([self.constrained_vector(row) for row in U])

    def log_jacobian(self, u) -> float:
        u = _finite(u, self.dim)
        if self.hierarchical:
            return float(np.sum(u[1:6:2]))
        return float(_log_expit(u[0]) + _log_expit(-u[0]) + u[1] + _log_expit(u[2]) + _log_expit(-u[2]))

    def unconstrain(self, params) -> UnconstrainedVector:
        if self.hierarchical:
            if not isinstance(params, HierParams):
                raise TypeError("hierarchical models unconstrain HierParams")
            hyper = params.hyper
            h = hyper.as_array().copy()
            h[1::2] = np.log(h[1::2])
            z = np.asarray(params.z, dtype=float).reshape(self.N, 3)
            w = z if self.parameterization == "noncentered" else hyper.mu + hyper.sigma * z
            vals = np.concatenate([h, w.ravel()])
        else:
            if not isinstance(params, PooledParams):
                params = PooledParams(*params)
            vals = [logit(params.eta), math.log(params.theta), logit(params.rho)]
            if self._delta_slices:
                if len(self._delta_slices) != 1:
                    raise ValueError("use unconstrain_pooled for multi-OD delta layouts")
                if params.delta is None:
                    raise ValueError("this layout needs delta offsets")
                vals = np.concatenate([vals, params.delta])
            vals = np.asarray(vals, dtype=float)
        return UnconstrainedVector(vals, tuple(self.names), self.log_jacobian(vals))

    def unconstrain_pooled(self, eta, theta, rho, deltas: Sequence = ()) -> np.ndarray:
        """Unconstrained vector from pooled parameters and per-OD offsets."""
        vals = [logit(eta), math.log(theta), logit(rho)]
        for d in deltas:
            vals.extend(np.atleast_1d(d))
        out = np.asarray(vals, dtype=float)
        if out.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates, got {out.shape[0]}")
        return out

    def individual(self, u) -> IndividualParams:
        """Per-commuter parameters implied by a hierarchical unconstrained vector."""
        return self.constrain(u).individual()

    @property
    def metadata(self) -> dict:
        meta = {"regime": self.regime, "init_values": self.init_values, "parameterization": self.parameterization}
        if self.regime == "hier-counts":
            meta["caveat"] = COUNTS_CAVEAT
        return meta


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _log_expit(x: float) -> float:
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def _finite(u, dim):
    u = np.asarray(getattr(u, "values", u), dtype=float)
    if u.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}")
    if not np.all(np.isfinite(u)):
        raise ValueError("unconstrained values must be finite")
    return u


# -- functional wrappers --------------------------------------------------------

def _model(data, costs, priors, regime, **kw) -> PosteriorModel:
    if isinstance(data, PosteriorModel):
        return data
    if costs is None:
        blocks = data
    else:
        blocks = DataBlock(data, costs, kw.pop("v1", None))
    return PosteriorModel(blocks, regime, priors, **kw)


def log_posterior(unconstrained, data, costs=None, priors=None, regime="pooled-complete", **kw) -> float:
    model = _model(data, costs, priors, regime, **kw)
    return model.logp(np.asarray(getattr(unconstrained, "values", unconstrained), dtype=float))


def grad_log_posterior(unconstrained, data, costs=None, priors=None, regime="pooled-complete", **kw) -> np.ndarray:
    model = _model(data, costs, priors, regime, **kw)
    return model.logp_grad(np.asarray(getattr(unconstrained, "values", unconstrained), dtype=float))[1]
