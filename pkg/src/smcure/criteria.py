"""Bayesian model comparison: DIC, CPO/LPML, PSIS-LOO, AIC, BIC."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import SurvivalDataset, TimePartition, log_likelihood
from .sampler import PosteriorDraws, anchored_mean

MIN_LOO_DRAWS = 100
PARETO_K_WARN = 0.7


@dataclass
class CriteriaReport:
    dic: float
    p_d: float
    lpml: float
    looic: float
    aic: float
    bic: float
    dev_at_mean: float = float("nan")
    pareto_k: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        d = asdict(self)
        k = np.asarray(self.pareto_k)
        d["pareto_k_max"] = float(k.max()) if k.size else float("nan")
        d["pareto_k_bad"] = int(np.sum(k > PARETO_K_WARN))
        del d["pareto_k"]
        return d


def deviance(dataset: SurvivalDataset, params, partition: TimePartition, family: str) -> float:
    return -2.0 * log_likelihood(dataset, params, partition, family).total


def dic(draws: PosteriorDraws, dataset: SurvivalDataset, partition: TimePartition):
    """(DIC, p_D) with the deviance evaluated at the posterior mean of (b, beta, lambda[, theta])."""
    dev = -2.0 * draws.loglik.ravel()
    if dev.size < 2:
        raise ValueError("DIC needs at least two draws")
    dev_bar = float(anchored_mean(dev))
    dev_hat = deviance(dataset, draws.mean_params(), partition, draws.family)
    p_d = dev_bar - dev_hat
    return dev_hat + 2.0 * p_d, p_d, dev_hat


def lpml(loglik_obs):
    """LPML and the CPO vector from a (draws, n) log-likelihood matrix.

    CPO_i is the harmonic mean of the likelihoods, evaluated after shifting
    by the smallest log-likelihood so every exponent is at most zero.
    """
    ll = np.asarray(loglik_obs, dtype=float)
    if ll.ndim != 2:
        raise ValueError("expected a (draws, n) matrix")
    low = ll.min(axis=0)
    log_cpo = low - np.log(np.mean(np.exp(low - ll), axis=0))
    cpo = np.exp(log_cpo)
    return float(np.sum(log_cpo)), cpo


# --------------------------------------------------------------------------
# Pareto-smoothed importance sampling
# --------------------------------------------------------------------------


def gpd_fit(x):
    """Empirical-Bayes (Zhang-Stephens) fit of a generalized Pareto to sorted exceedances."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.shape[0]
    prior_bs, prior_k = 3.0, 10.0
    m = 30 + int(math.sqrt(n))
    bs = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    bs /= prior_bs * x[int(n / 4 + 0.5) - 1]
    bs += 1.0 / x[-1]
    ks = np.log1p(-bs[:, None] * x).mean(axis=1)
    L = n * (np.log(-(bs / ks)) - ks - 1.0)
    with np.errstate(over="ignore"):
        w = 1.0 / np.exp(L - L[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, bs = w[keep] / w[keep].sum(), bs[keep]
    b_post = float(np.sum(bs * w))
    k = float(np.log1p(-b_post * x).mean())
    sigma = -k / b_post
    k = (n * k + prior_k * 0.5) / (n + prior_k)
    return k, sigma


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios):
    """Smoothed, normalised log weights for one observation and the Pareto k."""
    lw = np.asarray(log_ratios, dtype=float).copy()
    S = lw.shape[0]
    lw -= lw.max()
    tail_len = int(math.ceil(min(0.2 * S, 3.0 * math.sqrt(S))))
    order = np.argsort(lw)
    cutoff = max(lw[order[S - tail_len - 1]], np.log(np.finfo(float).tiny))
    tail = np.flatnonzero(lw > cutoff)
    k = math.inf
    if tail.size > 4:
        tail = tail[np.argsort(lw[tail])]
        exceed = np.exp(lw[tail]) - math.exp(cutoff)
        k, sigma = gpd_fit(exceed)
        if np.isfinite(k):
            p = (np.arange(tail.size) + 0.5) / tail.size
            smoothed = np.log(gpd_quantile(p, k, sigma) + math.exp(cutoff))
            lw[tail] = smoothed
            # truncate at the largest raw weight
            lw[lw > 0.0] = 0.0
    lw -= logsumexp(lw)
    return lw, k


def psis_loo(loglik_obs):
    """PSIS-LOO: (looic, elpd_i vector, pareto_k vector)."""
    ll = np.asarray(loglik_obs, dtype=float)
    if ll.ndim != 2:
        raise ValueError("expected a (draws, n) matrix")
    S, n = ll.shape
    if S < MIN_LOO_DRAWS:
        raise ValueError(f"PSIS-LOO needs at least {MIN_LOO_DRAWS} draws")
    elpd = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        col = ll[:, i]
        if np.ptp(col) == 0.0:
            elpd[i], ks[i] = col[0], 0.0
            continue
        lw, ks[i] = psis_smooth(-col)
        elpd[i] = logsumexp(lw + col)
    return float(-2.0 * elpd.sum()), elpd, ks


def n_likelihood_params(draws: PosteriorDraws) -> int:
    k = draws.b.shape[2] + draws.beta.shape[2] + draws.lam.shape[2]
    return k + (1 if draws.frailty else 0)


def aic_bic(draws: PosteriorDraws, dataset: SurvivalDataset, partition: TimePartition):
    """AIC and BIC with the deviance at the posterior mean."""
    dev_hat = deviance(dataset, draws.mean_params(), partition, draws.family)
    k = n_likelihood_params(draws)
    return dev_hat + 2.0 * k, dev_hat + k * math.log(dataset.n)


def criteria_report(draws: PosteriorDraws, dataset: SurvivalDataset,
                    partition: TimePartition) -> CriteriaReport:
    dic_value, p_d, dev_hat = dic(draws, dataset, partition)
    ll = draws.pooled_loglik_obs()
    lpml_value, _ = lpml(ll)
    if ll.shape[0] >= MIN_LOO_DRAWS:
        looic, _, ks = psis_loo(ll)
    else:
        looic, ks = float("nan"), np.zeros(0)
    aic, bic = aic_bic(draws, dataset, partition)
    return CriteriaReport(dic_value, p_d, lpml_value, looic, aic, bic, dev_hat, ks)
