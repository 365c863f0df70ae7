"""Bayesian-Lasso hierarchy (and the normal-prior alternative).

Hierarchy for the incidence block (the latency block is the starred copy)::

    b_j | tau_j^2, sigma^2 ~ N(0, sigma^2 tau_j^2)
    tau_j^2 | eta^2        ~ Exponential(rate = eta^2 / 2)
    eta^2                  ~ Gamma(r1, delta1)
    sigma^2                ~ 1 / sigma^2   (improper)

plus ``lambda_j ~ Gamma(a, b_rate)`` and, for the frailty model,
``theta ~ Gamma(c, d)``. The normal-prior family replaces the hierarchy
with ``b ~ N(0, sigma_b_sq I)``, ``beta ~ N(0, sigma_beta_sq I)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (CureParameters, LikelihoodCache, ModelSpec, SurvivalDataset,
                    log_likelihood)

_LOG_2PI = math.log(2.0 * math.pi)
ZERO_COEF_MEAN = 1e12


@dataclass
class ShrinkageState:
    tau_sq: np.ndarray
    tau_star_sq: np.ndarray
    sigma_sq: float = 1.0
    sigma_star_sq: float = 1.0
    eta_sq: float = 1.0
    eta_star_sq: float = 1.0

    def __post_init__(self):
        self.tau_sq = np.atleast_1d(np.asarray(self.tau_sq, dtype=float))
        self.tau_star_sq = np.asarray(self.tau_star_sq, dtype=float).ravel()

    @classmethod
    def ones(cls, n_b: int, n_beta: int) -> "ShrinkageState":
        return cls(np.ones(n_b), np.ones(n_beta))

    def copy(self) -> "ShrinkageState":
        return ShrinkageState(self.tau_sq.copy(), self.tau_star_sq.copy(), self.sigma_sq,
                              self.sigma_star_sq, self.eta_sq, self.eta_star_sq)

    def is_valid(self) -> bool:
        vals = np.concatenate([self.tau_sq, self.tau_star_sq,
                               [self.sigma_sq, self.sigma_star_sq, self.eta_sq, self.eta_star_sq]])
        return bool(np.all(np.isfinite(vals)) and np.all(vals > 0))


# --------------------------------------------------------------------------
# log densities
# --------------------------------------------------------------------------


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - math.lgamma(shape) + (shape - 1.0) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def normal_logpdf(x, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + x * x / var)


def _coef_prior(coefs, tau_sq, sigma_sq):
    """Log N(0, sigma^2 tau_j^2) summed over coordinates."""
    if coefs.size == 0:
        return 0.0
    return float(np.sum(normal_logpdf(coefs, sigma_sq * tau_sq)))


def _lasso_block(coefs, tau_sq, sigma_sq, eta_sq, r, delta):
    if coefs.size == 0:
        return 0.0
    lp = _coef_prior(coefs, tau_sq, sigma_sq)
    # tau_j^2 ~ Exp(rate eta^2 / 2)
    lp += float(np.sum(np.log(eta_sq / 2.0) - eta_sq * tau_sq / 2.0))
    lp += float(gamma_logpdf(eta_sq, r, delta))
    lp -= math.log(sigma_sq)
    return lp


def log_prior(params: CureParameters, shrinkage: ShrinkageState, spec: ModelSpec) -> float:
    """Sum of the log prior terms; -inf outside the support."""
    h = spec.hyper
    if not params.is_valid():
        return -np.inf
    if spec.frailty != params.frailty:
        raise ValueError("theta must be present exactly for the frailty family")
    lp = float(np.sum(gamma_logpdf(params.lam, h.a, h.b_rate)))
    if spec.frailty:
        lp += float(gamma_logpdf(params.theta, h.c, h.d))
    if spec.prior == "normal":
        lp += float(np.sum(normal_logpdf(params.b, h.sigma_b_sq)))
        lp += float(np.sum(normal_logpdf(params.beta, h.sigma_beta_sq)))
        return lp
    if not shrinkage.is_valid():
        return -np.inf
    lp += _lasso_block(params.b, shrinkage.tau_sq, shrinkage.sigma_sq, shrinkage.eta_sq,
                       h.r1, h.delta1)
    lp += _lasso_block(params.beta, shrinkage.tau_star_sq, shrinkage.sigma_star_sq,
                       shrinkage.eta_star_sq, h.r2, h.delta2)
    return lp


def log_joint_posterior(dataset: SurvivalDataset, params: CureParameters,
                        shrinkage: ShrinkageState, spec: ModelSpec) -> float:
    """Unnormalised log joint posterior; -inf for states outside the support."""
    lp = log_prior(params, shrinkage, spec)
    if not np.isfinite(lp):
        return -np.inf
    ll = log_likelihood(dataset, params, spec.partition, spec.family).total
    return ll + lp


# --------------------------------------------------------------------------
# coordinate full conditionals (unnormalised)
# --------------------------------------------------------------------------


def _with(params: CureParameters, **changes) -> CureParameters:
    p = params.copy()
    for name, (k, value) in changes.items():
        if k is None:
            setattr(p, name, float(value))
        else:
            getattr(p, name)[k] = value
    return p


def _loglik(dataset, params, spec):
    return LikelihoodCache(dataset, spec.partition).contributions(params)[0].sum()


def log_cond_b_k(k: int, value: float, dataset: SurvivalDataset, params: CureParameters,
                 shrinkage: ShrinkageState, spec: ModelSpec) -> float:
    p = _with(params, b=(k, value))
    if not np.isfinite(value):
        return -np.inf
    if spec.prior == "normal":
        prior = -p.b @ p.b / (2.0 * spec.hyper.sigma_b_sq)
    else:
        prior = -np.sum(p.b ** 2 / shrinkage.tau_sq) / (2.0 * shrinkage.sigma_sq)
    return float(_loglik(dataset, p, spec) + prior)


def log_cond_beta_k(k: int, value: float, dataset: SurvivalDataset, params: CureParameters,
                    shrinkage: ShrinkageState, spec: ModelSpec) -> float:
    if not np.isfinite(value):
        return -np.inf
    p = _with(params, beta=(k, value))
    if spec.prior == "normal":
        prior = -p.beta @ p.beta / (2.0 * spec.hyper.sigma_beta_sq)
    else:
        prior = -np.sum(p.beta ** 2 / shrinkage.tau_star_sq) / (2.0 * shrinkage.sigma_star_sq)
    return float(_loglik(dataset, p, spec) + prior)


def log_cond_lambda_k(k: int, value: float, dataset: SurvivalDataset, params: CureParameters,
                      spec: ModelSpec) -> float:
    if not (np.isfinite(value) and value > 0):
        return -np.inf
    h = spec.hyper
    p = _with(params, lam=(k, value))
    prior = (h.a - 1.0) * math.log(value) - h.b_rate * value
    if dataset is None or dataset.n == 0:
        return prior
    return float(_loglik(dataset, p, spec) + prior)


def log_cond_theta(value: float, dataset: SurvivalDataset, params: CureParameters,
                   spec: ModelSpec) -> float:
    if not (np.isfinite(value) and value > 0):
        return -np.inf
    h = spec.hyper
    p = _with(params, theta=(None, value))
    prior = (h.c - 1.0) * math.log(value) - h.d * value
    return float(_loglik(dataset, p, spec) + prior)


# --------------------------------------------------------------------------
# conjugate Gibbs draws
# --------------------------------------------------------------------------


def sample_inverse_gaussian(mean, shape, rng: np.random.Generator):
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transformation."""
    mean = np.asarray(mean, dtype=float)
    shape = np.broadcast_to(np.asarray(shape, dtype=float), mean.shape)
    nu = rng.standard_normal(mean.shape)
    u = rng.random(mean.shape)
    w = mean * nu * nu / shape
    # smaller root of the quadratic, written without cancellation
    x = mean / (1.0 + 0.5 * w + np.sqrt(w + 0.25 * w * w))
    x = np.where(u <= mean / (mean + x), x, mean * mean / x)
    return np.maximum(x, np.finfo(float).tiny)


def sample_inv_tau_sq(coefs, sigma_sq: float, eta_sq: float, rng: np.random.Generator):
    """Precisions 1/tau_k^2 ~ IG(eta sigma / |coef_k|, eta^2)."""
    coefs = np.atleast_1d(np.asarray(coefs, dtype=float))
    abs_c = np.abs(coefs)
    with np.errstate(divide="ignore"):
        mean = np.where(abs_c > 0, math.sqrt(eta_sq * sigma_sq) / abs_c, ZERO_COEF_MEAN)
    mean = np.minimum(mean, ZERO_COEF_MEAN)
    return sample_inverse_gaussian(mean, eta_sq, rng)


def sample_inv_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    scale = max(scale, np.finfo(float).tiny)
    return scale / rng.standard_gamma(shape)


def sample_sigma_sq(coefs, tau_sq, rng: np.random.Generator) -> float:
    """sigma^2 ~ Inv-Gamma(p/2, sum coef_j^2 / (2 tau_j^2))."""
    coefs = np.asarray(coefs, dtype=float)
    return sample_inv_gamma(coefs.size / 2.0, float(np.sum(coefs ** 2 / (2.0 * tau_sq))), rng)


def sample_eta_sq(tau_sq, r: float, delta: float, rng: np.random.Generator) -> float:
    """eta^2 ~ Gamma(p + r, delta + sum tau_j^2 / 2)."""
    tau_sq = np.asarray(tau_sq, dtype=float)
    rate = delta + float(np.sum(tau_sq)) / 2.0
    return rng.standard_gamma(tau_sq.size + r) / rate
