"""Diagonal-Gaussian surrogate distribution over stacked nominal input sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


class ValidityError(ValueError):
    """Renyi-2 divergence undefined: the candidate is too wide (2 s0^2 <= s1^2)."""


@dataclass(frozen=True)
class PolicyDistribution:
    """Hyperparameters nu = (mu, per-dimension variance sigma2)."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))
        if self.mu.shape != self.sigma2.shape:
            raise ValueError("mu and sigma2 must have the same shape")
        if np.any(self.sigma2 <= 0):
            raise ValueError("all sigma2 entries must be > 0")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma2": self.sigma2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyDistribution":
        return cls(np.asarray(d["mu"]), np.asarray(d["sigma2"]))


def sample(nu: PolicyDistribution, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw xi ~ N(mu, diag(sigma2)). size=None -> (D,), size=M -> (M, D)."""
    shape = (nu.dim,) if size is None else (size, nu.dim)
    return nu.mu + rng.standard_normal(shape) * np.sqrt(nu.sigma2)


def log_pdf(nu: PolicyDistribution, xi) -> np.ndarray:
    """Exact diagonal-Gaussian log density; xi may carry leading batch axes."""
    xi = np.asarray(xi, dtype=float)
    z2 = (xi - nu.mu) ** 2 / nu.sigma2
    return -0.5 * np.sum(z2 + np.log(nu.sigma2) + LOG_2PI, axis=-1)


def importance_weight(nu_target: PolicyDistribution, nu_sampling: PolicyDistribution,
                      xi) -> np.ndarray:
    """p(xi | target) / p(xi | sampling), computed in log space."""
    logw = log_pdf(nu_target, xi) - log_pdf(nu_sampling, xi)
    return np.exp(np.clip(logw, -700.0, 700.0))


def renyi2_divergence(nu1: PolicyDistribution, nu0: PolicyDistribution) -> float:
    """Closed-form Renyi divergence of order 2 between diagonal Gaussians.

    D2 = sum_k [ (mu1-mu0)^2 / (2 s0^2 - s1^2)
                 - 0.5 ln( (2 s0^2 - s1^2) s1^2 / s0^4 ) ]
    Requires 2 s0^2 - s1^2 > 0 in every dimension.
    """
    s1, s0 = nu1.sigma2, nu0.sigma2
    s_mix = 2.0 * s0 - s1
    if np.any(s_mix <= 0):
        raise ValidityError("2*sigma0^2 - sigma1^2 <= 0 in some dimension")
    quad = (nu1.mu - nu0.mu) ** 2 / s_mix
    logdet = -0.5 * np.log(s_mix * s1 / s0 ** 2)
    return float(np.sum(quad + logdet))


def renyi2_divergence_grad(nu1: PolicyDistribution, nu0: PolicyDistribution):
    """Gradients of D2(nu1 || nu0) w.r.t. (mu1, ln sigma1^2)."""
    s1, s0 = nu1.sigma2, nu0.sigma2
    s_mix = 2.0 * s0 - s1
    if np.any(s_mix <= 0):
        raise ValidityError("2*sigma0^2 - sigma1^2 <= 0 in some dimension")
    d_mu = 2.0 * (nu1.mu - nu0.mu) / s_mix
    d_s1 = (nu1.mu - nu0.mu) ** 2 / s_mix ** 2 + 0.5 / s_mix - 0.5 / s1
    return d_mu, d_s1 * s1
