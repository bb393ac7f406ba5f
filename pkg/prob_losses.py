"""
Probabilistic Losses
Gaussian log-density, diagonal-Gaussian KL to an isotropic prior, the
beta-ELBO and importance-weighted objectives, the heteroscedastic NLL and
the KL warm-up schedule.
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from autodiff import ArrayLike, Tensor, as_tensor, logmeanexp

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
LOG_2PI = math.log(2.0 * math.pi)


def _sum_trailing(values: Tensor, keep_leading: int) -> Tensor:
    if keep_leading == 0:
        return values.sum()
    axes = tuple(range(keep_leading, values.ndim))
    return values.sum(axis=axes) if axes else values


@dataclass
class PriorSpec:
    """Isotropic Gaussian prior N(0, sigma0^2 I) over weights."""
    sigma0: float = 1.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"prior sigma0 must be positive, got {self.sigma0}")

    def log_prob(self, value: ArrayLike, keep_leading: int = 0) -> Tensor:
        value = as_tensor(value)
        var = self.sigma0 ** 2
        terms = value.square() * (-0.5 / var) - 0.5 * (LOG_2PI + math.log(var))
        return _sum_trailing(terms, keep_leading)


@dataclass
class DiagGaussian:
    """N(mu, diag sigma^2) with sigma floored at SIGMA_FLOOR."""
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = as_tensor(self.mu)
        self.sigma = as_tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} does not match sigma shape {self.sigma.shape}")
        if not np.all(self.sigma.data >= SIGMA_FLOOR):
            raise ValueError(f"sigma below floor {SIGMA_FLOOR}: min={self.sigma.data.min():.3e}")

    def log_prob(self, value: ArrayLike, keep_leading: int = 0) -> Tensor:
        value = as_tensor(value)
        z = (value - self.mu) / self.sigma
        terms = z.square() * -0.5 - self.sigma.log() - 0.5 * LOG_2PI
        return _sum_trailing(terms, keep_leading)


@dataclass
class BetaSchedule:
    """Cosine warm-up of the KL weight from 0 to beta_max."""
    beta_max: float = 0.01
    warmup_updates: int = 200
    shape: str = "cosine"

    def __post_init__(self):
        if self.beta_max < 0:
            raise ValueError(f"beta_max must be non-negative, got {self.beta_max}")
        if self.warmup_updates < 0:
            raise ValueError(f"warmup_updates must be non-negative, got {self.warmup_updates}")
        if self.shape != "cosine":
            raise ValueError(f"unsupported beta schedule shape '{self.shape}'")


def gaussian_logpdf(y: ArrayLike, mu: ArrayLike, sigma2: ArrayLike) -> Tensor:
    """Elementwise log N(y; mu, sigma2)."""
    sigma2 = as_tensor(sigma2)
    if not np.all(sigma2.data > 0):
        raise ValueError("gaussian_logpdf needs sigma2 > 0")
    resid = as_tensor(y) - as_tensor(mu)
    return resid.square() / sigma2 * -0.5 - (sigma2 * (2.0 * math.pi)).log() * 0.5


def kl_diag_gaussian(q: DiagGaussian, prior: PriorSpec, keep_leading: int = 0) -> Tensor:
    """Closed-form KL(q || N(0, sigma0^2 I)), summed over all but `keep_leading` axes."""
    var0 = prior.sigma0 ** 2
    var = q.sigma.square()
    terms = (var + q.mu.square()) * (1.0 / var0) - 1.0 - (var * (1.0 / var0)).log()
    return _sum_trailing(terms, keep_leading) * 0.5


def beta_at(t: int, sched: BetaSchedule) -> float:
    if t < 0:
        raise ValueError(f"update index must be >= 0, got {t}")
    if sched.warmup_updates == 0:
        return sched.beta_max
    progress = min(t / sched.warmup_updates, 1.0)
    beta = sched.beta_max * 0.5 * (1.0 - math.cos(math.pi * progress))
    return min(max(beta, 0.0), sched.beta_max)


def beta_elbo_loss(logliks: ArrayLike, kl: ArrayLike, beta: float) -> Tensor:
    """-(1/K) sum_k loglik_k + beta * kl; the leading axis of `logliks` is K."""
    logliks = as_tensor(logliks)
    if logliks.ndim == 0 or logliks.shape[0] == 0:
        raise ValueError("beta_elbo_loss needs at least one log-likelihood draw")
    kl = as_tensor(kl)
    if np.any(kl.data < -1e-9):
        raise ValueError("KL term must be non-negative")
    return -logliks.mean(axis=0) + kl * beta


def iwae_loss(logliks: ArrayLike, log_prior: ArrayLike, log_q: ArrayLike) -> Tensor:
    """-log mean_k exp(log_prior_k + loglik_k - log_q_k), leading axis K."""
    logliks, log_prior, log_q = as_tensor(logliks), as_tensor(log_prior), as_tensor(log_q)
    if not (logliks.shape == log_prior.shape == log_q.shape):
        raise ValueError(
            f"iwae_loss inputs must align: {logliks.shape}, {log_prior.shape}, {log_q.shape}"
        )
    if logliks.ndim == 0 or logliks.shape[0] == 0:
        raise ValueError("iwae_loss needs at least one draw")
    return -logmeanexp(log_prior + logliks - log_q, axis=0)


def hetero_nll(y: ArrayLike, mu_k: ArrayLike, sigma2_k: ArrayLike) -> Tensor:
    """(1/2K) sum_k [(y - mu_k)^2 / sigma2_k + log(2 pi sigma2_k)]."""
    sigma2_k = as_tensor(sigma2_k)
    if not np.all(sigma2_k.data > 0):
        raise ValueError("hetero_nll needs every sigma2_k > 0")
    resid = as_tensor(y) - as_tensor(mu_k)
    terms = resid.square() / sigma2_k + (sigma2_k * (2.0 * math.pi)).log()
    return terms.mean(axis=0) * 0.5


def data_nll(y: ArrayLike, means: Tensor, variances: Optional[Tensor] = None) -> Tensor:
    """Per-draw negative log-likelihood; unit variance when `variances` is None."""
    if variances is None:
        return -gaussian_logpdf(y, means, 1.0)
    return -gaussian_logpdf(y, means, variances)
