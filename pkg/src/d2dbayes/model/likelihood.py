"""Log-likelihoods for the four observation/model regimes."""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..dynamics import ChoiceTrajectory, CountSeries, anonymize
from ..network import CostSequence
from ..params import IndividualParams, PooledParams
from . import _kernels


def _check(obs, costs: CostSequence):
    M = obs.n_routes
    if M != costs.M:
        raise ValueError(f"data has {M} routes, cost sequence has {costs.M}")
    if obs.T != costs.T:
        raise ValueError(f"data covers {obs.T} days, cost sequence {costs.T}")


def _pooled(params) -> PooledParams:
    return params if isinstance(params, PooledParams) else PooledParams(*params)


def _v1(params: PooledParams, M: int, v1) -> np.ndarray:
    return params.initial_values(M, None if v1 is None else np.asarray(v1, dtype=float))


def multinomial_log_coef(counts: np.ndarray) -> float:
    """sum_t log(N! / prod_i o_t(i)!)."""
    counts = np.asarray(counts)
    return float(np.sum(gammaln(counts.sum(axis=1) + 1.0)) - np.sum(gammaln(counts + 1.0)))


def loglik_pooled(params, traj: ChoiceTrajectory, costs: CostSequence, v1=None) -> float:
    """Complete-data log-likelihood, all commuters sharing one parameter triple."""
    p = _pooled(params)
    _check(traj, costs)
    counts = anonymize(traj).counts
    return float(_kernels.pooled_kernel(p.eta, p.theta, p.rho, _v1(p, costs.M, v1), costs.costs, counts)[0])


def loglik_pooled_counts(params, counts: CountSeries, costs: CostSequence, v1=None) -> float:
    """Multinomial log-likelihood of daily counts under the pooled model."""
    p = _pooled(params)
    _check(counts, costs)
    ll = _kernels.pooled_kernel(p.eta, p.theta, p.rho, _v1(p, costs.M, v1), costs.costs, counts.counts)[0]
    return float(ll + multinomial_log_coef(counts.counts))


def _individual_v1(v1, N, M):
    if v1 is None:
        return np.zeros((N, M))
    return np.ascontiguousarray(np.broadcast_to(np.asarray(v1, dtype=float), (N, M)))


def loglik_hier(params: IndividualParams, traj: ChoiceTrajectory, costs: CostSequence, v1=None) -> float:
    """Complete-data log-likelihood with commuter-specific parameters."""
    _check(traj, costs)
    if params.n != traj.N:
        raise ValueError(f"{params.n} parameter triples for {traj.N} commuters")
    V1 = _individual_v1(v1, traj.N, costs.M)
    return float(_kernels.hier_traj_kernel(params.eta, params.theta, params.rho, V1, costs.costs, traj.choices)[0])


def loglik_hier_counts_approx(params: IndividualParams, counts: CountSeries, costs: CostSequence, v1=None) -> float:
    """Counts log-likelihood with the PMD replaced by Multinomial(N, mean probability)."""
    _check(counts, costs)
    if params.n != counts.N:
        raise ValueError(f"{params.n} parameter triples for population N={counts.N}")
    V1 = _individual_v1(v1, counts.N, costs.M)
    ll = _kernels.hier_counts_kernel(params.eta, params.theta, params.rho, V1, costs.costs, counts.counts)[0]
    return float(ll + multinomial_log_coef(counts.counts))
