"""Behavioural parameter containers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

HYPER_NAMES = ("mu_eta", "sigma_eta", "mu_theta", "sigma_theta", "mu_rho", "sigma_rho")


@dataclass(frozen=True)
class PooledParams:
    eta: float
    theta: float
    rho: float
    delta: Optional[np.ndarray] = None  # V1(j) - V1(1), j = 2..M

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.theta > 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.delta is not None:
            d = np.atleast_1d(np.asarray(self.delta, dtype=float))
            if not np.all(np.isfinite(d)):
                raise ValueError("delta must be finite")
            object.__setattr__(self, "delta", d)

    def initial_values(self, M: int, base: Optional[np.ndarray] = None) -> np.ndarray:
        """V1 implied by ``delta`` (route 1 anchored at 0) or ``base``."""
        if self.delta is not None:
            if self.delta.shape != (M - 1,):
                raise ValueError(f"delta must have length {M - 1}")
            return np.concatenate([[0.0], self.delta])
        return np.zeros(M) if base is None else np.asarray(base, dtype=float)


@dataclass(frozen=True)
class HyperParams:
    mu_eta: float
    sigma_eta: float
    mu_theta: float
    sigma_theta: float
    mu_rho: float
    sigma_rho: float

    def __post_init__(self):
        for name in ("sigma_eta", "sigma_theta", "sigma_rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in HYPER_NAMES])

    @classmethod
    def from_array(cls, a) -> "HyperParams":
        return cls(*[float(x) for x in a])

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.mu_eta, self.mu_theta, self.mu_rho])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma_eta, self.sigma_theta, self.sigma_rho])


@dataclass(frozen=True)
class IndividualParams:
    """Per-commuter (eta, theta, rho) arrays of length N."""

    eta: np.ndarray
    theta: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        eta, theta, rho = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (self.eta, self.theta, self.rho))
        if not (eta.shape == theta.shape == rho.shape and eta.ndim == 1):
            raise ValueError("eta, theta, rho must be 1-d arrays of equal length")
        if np.any((eta <= 0) | (eta >= 1)) or np.any(theta <= 0) or np.any((rho <= 0) | (rho >= 1)):
            raise ValueError("individual parameters out of range")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rho", rho)

    @property
    def n(self) -> int:
        return self.eta.shape[0]

    @classmethod
    def repeat(cls, eta: float, theta: float, rho: float, n: int) -> "IndividualParams":
        return cls(np.full(n, eta), np.full(n, theta), np.full(n, rho))


@dataclass(frozen=True)
class HierParams:
    """Hyperparameters plus non-centred offsets ``z`` (N x 3: eta, theta, rho)."""

    hyper: HyperParams
    z: np.ndarray

    def individual(self) -> IndividualParams:
        u = self.hyper.mu[None, :] + self.hyper.sigma[None, :] * np.asarray(self.z, dtype=float)
        return IndividualParams(expit(u[:, 0]), np.exp(u[:, 1]), expit(u[:, 2]))


def individual_latent(params: IndividualParams) -> np.ndarray:
    """(logit eta, log theta, logit rho) per commuter, N x 3."""
    return np.column_stack([logit(params.eta), np.log(params.theta), logit(params.rho)])
