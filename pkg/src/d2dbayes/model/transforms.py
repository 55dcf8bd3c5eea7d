"""Maps between constrained parameters and the sampler's unconstrained space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit


def to_unconstrained(x, support: str):
    x = np.asarray(x, dtype=float)
    if support == "unit":
        return logit(x)
    if support == "positive":
        return np.log(x)
    return x.copy() if x.ndim else x


def to_constrained(u, support: str):
    """Returns ``(x, log|dx/du|, dx/du, d log|dx/du| / du)``."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("unconstrained values must be finite")
    if support == "unit":
        x = expit(u)
        return x, log_expit(u) + log_expit(-u), x * (1.0 - x), 1.0 - 2.0 * x
    if support == "positive":
        x = np.exp(u)
        return x, u, x, np.ones_like(u)
    return u, np.zeros_like(u), np.ones_like(u), np.zeros_like(u)


@dataclass(frozen=True)
class UnconstrainedVector:
    values: np.ndarray
    names: tuple
    log_jacobian: float = 0.0
