"""Prior families on the constrained scale, with first derivatives."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)

SUPPORT = {"normal": "real", "logitnormal": "unit", "lognormal": "positive", "halfnormal": "positive"}


@dataclass(frozen=True)
class Prior:
    family: str
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in SUPPORT:
            raise ValueError(f"unknown prior family {self.family!r}")
        if not self.sigma > 0:
            raise ValueError("prior scale must be positive")

    @property
    def support(self) -> str:
        return SUPPORT[self.family]

    def logpdf(self, x):
        """Log density at constrained ``x`` (scalar or array, summed)."""
        x = np.asarray(x, dtype=float)
        s = self.sigma
        if self.family == "normal":
            z = (x - self.mu) / s
            return float(np.sum(-0.5 * z * z - math.log(s) - 0.5 * _LOG_2PI))
        if self.family == "halfnormal":
            z = x / s
            return float(np.sum(math.log(2.0) - 0.5 * z * z - math.log(s) - 0.5 * _LOG_2PI))
        if self.family == "lognormal":
            lx = np.log(x)
            z = (lx - self.mu) / s
            return float(np.sum(-0.5 * z * z - math.log(s) - 0.5 * _LOG_2PI - lx))
        lx, l1x = np.log(x), np.log1p(-x)
        z = (lx - l1x - self.mu) / s
        return float(np.sum(-0.5 * z * z - math.log(s) - 0.5 * _LOG_2PI - lx - l1x))

    def dlogpdf(self, x):
        x = np.asarray(x, dtype=float)
        s2 = self.sigma**2
        if self.family == "normal":
            return -(x - self.mu) / s2
        if self.family == "halfnormal":
            return -x / s2
        if self.family == "lognormal":
            return -(np.log(x) - self.mu) / (s2 * x) - 1.0 / x
        lg = np.log(x) - np.log1p(-x)
        return -(lg - self.mu) / (s2 * x * (1.0 - x)) - 1.0 / x + 1.0 / (1.0 - x)

    def logpdf_unconstrained(self, u):
        """Log density of the natural unconstrained coordinate (Jacobian
        included) and its derivative.

        The natural transform is logit for logit-normal, log for log-normal
        and half-normal, identity for normal.
        """
        u = np.asarray(u, dtype=float)
        s = self.sigma
        if self.family == "halfnormal":
            x2 = np.exp(2.0 * u) / (s * s)
            lp = np.sum(math.log(2.0) - 0.5 * x2 - math.log(s) - 0.5 * _LOG_2PI + u)
            return float(lp), 1.0 - x2
        z = (u - self.mu) / s
        lp = np.sum(-0.5 * z * z - math.log(s) - 0.5 * _LOG_2PI)
        return float(lp), -z / s

    def to_dict(self) -> dict:
        if self.family == "halfnormal":
            return {"family": self.family, "sigma": self.sigma}
        return {"family": self.family, "mu": self.mu, "sigma": self.sigma}


def _default_pooled():
    return {
        "eta": Prior("logitnormal", 0.0, 1.5),
        "theta": Prior("lognormal", 0.0, 1.0),
        "rho": Prior("logitnormal", -2.0, 1.0),
        "delta": Prior("normal", 0.0, 5.0),
    }


def _default_hyper():
    return {
        "mu_eta": Prior("normal", -1.5, 0.5),
        "sigma_eta": Prior("halfnormal", 0.0, 0.5),
        "mu_theta": Prior("normal", 0.0, 0.5),
        "sigma_theta": Prior("halfnormal", 0.0, 0.5),
        "mu_rho": Prior("normal", -2.0, 1.0),
        "sigma_rho": Prior("halfnormal", 0.0, 1.0),
    }


_EXPECTED = {
    "eta": "unit", "theta": "positive", "rho": "unit", "delta": "real",
    "mu_eta": "real", "mu_theta": "real", "mu_rho": "real",
    "sigma_eta": "positive", "sigma_theta": "positive", "sigma_rho": "positive",
}


@dataclass(frozen=True)
class PriorSpec:
    """Priors for every parameter name the model layouts use."""

    priors: dict = field(default_factory=lambda: {**_default_pooled(), **_default_hyper()})

    def __post_init__(self):
        merged = {**_default_pooled(), **_default_hyper(), **self.priors}
        for name, p in merged.items():
            want = _EXPECTED.get(name)
            if want is not None and p.support != want:
                raise ValueError(f"prior for {name} must have {want} support, got {p.family}")
        object.__setattr__(self, "priors", merged)

    def __getitem__(self, name) -> Prior:
        return self.priors[name]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.priors.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls({k: Prior(v["family"], float(v.get("mu", 0.0)), float(v["sigma"])) for k, v in d.items()})

    @classmethod
    def from_json(cls, path) -> "PriorSpec":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_dict(d.get("priors", d))
