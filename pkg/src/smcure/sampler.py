"""Metropolis-within-Gibbs sampler for the mixture cure (frailty) model.

One iteration, in order: random-walk MH for every b_k, every beta_k;
gamma-proposal MH for every lambda_k and (frailty model) theta; then the
Gibbs draws 1/tau^2, 1/tau*^2, sigma^2, sigma*^2, eta^2, eta*^2 (lasso
prior only).
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import kernels
from .model import CureParameters, LikelihoodCache, ModelSpec, SurvivalDataset
from .priors import (ShrinkageState, log_joint_posterior, sample_eta_sq,
                     sample_inv_tau_sq, sample_sigma_sq)

INIT_POLICIES = ("default", "fixed", "prior")


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    n_chains: int = 3
    n_iterations: int = 15000
    burn_in: int = 2500
    thin: int = 25
    master_seed: int = 2024
    init: str = "default"
    proposal_sd: float = 1.0
    proposal_rate: float = 1.0
    trace: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.n_retained < 1:
            raise ValueError("no draws retained after burn-in and thinning")
        if self.init not in INIT_POLICIES:
            raise ValueError(f"init must be one of {INIT_POLICIES}")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


class MHResult(NamedTuple):
    value: float
    accepted: bool
    logp: float


def mh_update_normal_rw(current: float, log_cond: Callable[[float], float],
                        rng: np.random.Generator, current_logp: Optional[float] = None,
                        sd: float = 1.0) -> MHResult:
    """Random-walk MH step with a N(current, sd^2) proposal (symmetric)."""
    if current_logp is None:
        current_logp = log_cond(current)
    prop = current + sd * rng.standard_normal()
    u = rng.random()
    prop_logp = log_cond(prop)
    if prop_logp == -np.inf or not math.isfinite(prop_logp):
        return MHResult(current, False, current_logp)
    if u < math.exp(min(0.0, prop_logp - current_logp)):
        return MHResult(prop, True, prop_logp)
    return MHResult(current, False, current_logp)


def gamma_proposal_logpdf(y: float, shape: float, rate: float = 1.0) -> float:
    if y <= 0:
        return -np.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(y) - rate * y


def gamma_hastings_log_ratio(current: float, prop: float, rate: float = 1.0) -> float:
    """log J(current | prop) - log J(prop | current) for the Gamma(shape=x, rate) proposal."""
    return gamma_proposal_logpdf(current, prop, rate) - gamma_proposal_logpdf(prop, current, rate)


def mh_update_gamma_rw(current: float, log_cond: Callable[[float], float],
                       rng: np.random.Generator, current_logp: Optional[float] = None,
                       rate: float = 1.0) -> MHResult:
    """MH step with a Gamma(shape=current, rate) proposal and Hastings correction."""
    if current_logp is None:
        current_logp = log_cond(current)
    prop = rng_gamma_fix(rng.standard_gamma(current) / rate) if current > 0 else 0.0
    u = rng.random()
    if prop <= 0.0:
        return MHResult(current, False, current_logp)
    prop_logp = log_cond(prop)
    if not math.isfinite(prop_logp):
        return MHResult(current, False, current_logp)
    log_ratio = prop_logp - current_logp + gamma_hastings_log_ratio(current, prop, rate)
    if u < math.exp(min(0.0, log_ratio)):
        return MHResult(prop, True, prop_logp)
    return MHResult(current, False, current_logp)


def rng_gamma_fix(x: float) -> float:
    # numpy may return exactly 0 (or a subnormal) for very small shapes
    return float(x) if x > 1e-300 else 0.0


def _gauss_kernel(v: float, var: float) -> float:
    """-v^2 / (2 var) on Python floats; an underflowed variance pins v at 0."""
    v = float(v)
    if var > 0.0:
        return -v * v / (2.0 * var)
    return 0.0 if v == 0.0 else -math.inf


def anchored_mean(x, axis=0):
    """Mean computed as first value plus the mean offset; exact for constant input."""
    x = np.asarray(x, dtype=float)
    first = np.take(x, [0], axis=axis)
    return np.squeeze(first + (x - first).mean(axis=axis, keepdims=True), axis=axis)


@dataclass
class PosteriorDraws:
    """Retained draws, arrays shaped (chains, draws, ...)."""

    family: str
    prior: str
    b: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    theta: Optional[np.ndarray]
    tau_sq: np.ndarray
    tau_star_sq: np.ndarray
    sigma_sq: np.ndarray
    sigma_star_sq: np.ndarray
    eta_sq: np.ndarray
    eta_star_sq: np.ndarray
    loglik: np.ndarray
    loglik_obs: np.ndarray
    clamped: np.ndarray
    iterations: np.ndarray
    accept: dict = field(default_factory=dict)
    n_proposals: int = 0
    seeds: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.b.shape[0]

    @property
    def n_draws(self) -> int:
        return self.b.shape[1]

    @property
    def frailty(self) -> bool:
        return self.theta is not None

    def parameter_names(self, shrinkage: bool = False) -> list:
        names = [f"b{k}" for k in range(self.b.shape[2])]
        names += [f"beta{k + 1}" for k in range(self.beta.shape[2])]
        names += [f"lambda{k + 1}" for k in range(self.lam.shape[2])]
        if self.frailty:
            names.append("theta")
        if shrinkage:
            names += [f"tau_sq{k}" for k in range(self.tau_sq.shape[2])]
            names += [f"tau_star_sq{k + 1}" for k in range(self.tau_star_sq.shape[2])]
            names += ["sigma_sq", "sigma_star_sq", "eta_sq", "eta_star_sq"]
        return names

    def parameter_array(self, shrinkage: bool = False) -> np.ndarray:
        """All named parameters stacked on the last axis: (chains, draws, K)."""
        parts = [self.b, self.beta, self.lam]
        if self.frailty:
            parts.append(self.theta[..., None])
        if shrinkage:
            parts += [self.tau_sq, self.tau_star_sq, self.sigma_sq[..., None],
                      self.sigma_star_sq[..., None], self.eta_sq[..., None],
                      self.eta_star_sq[..., None]]
        return np.concatenate(parts, axis=2)

    def params_at(self, chain: int, draw: int) -> CureParameters:
        theta = float(self.theta[chain, draw]) if self.frailty else None
        return CureParameters(self.b[chain, draw], self.beta[chain, draw],
                              self.lam[chain, draw], theta)

    def iter_params(self):
        for c in range(self.n_chains):
            for d in range(self.n_draws):
                yield self.params_at(c, d)

    def mean_params(self) -> CureParameters:
        theta = float(anchored_mean(self.theta.ravel())) if self.frailty else None
        flat = lambda a: a.reshape(-1, a.shape[-1])
        return CureParameters(anchored_mean(flat(self.b)), anchored_mean(flat(self.beta)),
                              anchored_mean(flat(self.lam)), theta)

    def pooled_loglik_obs(self) -> np.ndarray:
        """(chains * draws, n) matrix of per-observation log-likelihoods."""
        return self.loglik_obs.reshape(-1, self.loglik_obs.shape[-1])

    def acceptance_rates(self) -> dict:
        return {k: v / self.n_proposals for k, v in self.accept.items()}

    def select_chains(self, order) -> "PosteriorDraws":
        order = list(order)
        kw = {}
        for name in ("b", "beta", "lam", "tau_sq", "tau_star_sq", "sigma_sq", "sigma_star_sq",
                     "eta_sq", "eta_star_sq", "loglik", "loglik_obs", "clamped"):
            kw[name] = getattr(self, name)[order]
        kw["theta"] = self.theta[order] if self.frailty else None
        return PosteriorDraws(self.family, self.prior, iterations=self.iterations,
                              accept={k: v[order] for k, v in self.accept.items()},
                              n_proposals=self.n_proposals,
                              seeds=[self.seeds[i] for i in order] if self.seeds else [],
                              trace=self.trace, **kw)

    @classmethod
    def concatenate(cls, chains) -> "PosteriorDraws":
        chains = list(chains)
        first = chains[0]
        kw = {}
        for name in ("b", "beta", "lam", "tau_sq", "tau_star_sq", "sigma_sq", "sigma_star_sq",
                     "eta_sq", "eta_star_sq", "loglik", "loglik_obs", "clamped"):
            kw[name] = np.concatenate([getattr(c, name) for c in chains], axis=0)
        kw["theta"] = np.concatenate([c.theta for c in chains]) if first.frailty else None
        accept = {k: np.concatenate([c.accept[k] for c in chains]) for k in first.accept}
        return cls(first.family, first.prior, iterations=first.iterations, accept=accept,
                   n_proposals=first.n_proposals,
                   seeds=[s for c in chains for s in c.seeds],
                   trace=[t for c in chains for t in c.trace], **kw)


# --------------------------------------------------------------------------
# chain driver
# --------------------------------------------------------------------------


def chain_rng(master_seed: int, chain_index: int) -> np.random.Generator:
    """Independent stream for one chain, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(chain_index),))
    return np.random.default_rng(ss)


def crude_hazards(dataset: SurvivalDataset, partition) -> np.ndarray:
    """Events over follow-up per interval (overall rate where an interval has no events)."""
    expo = partition.exposure(dataset.times).sum(axis=0)
    jidx = partition.interval_index(dataset.times)
    events = np.bincount(jidx[dataset.status == 1], minlength=partition.J).astype(float)
    overall = max(events.sum(), 1.0) / dataset.times.sum()
    lam = np.where((events > 0) & (expo > 0), events / np.maximum(expo, 1e-300), overall)
    return np.maximum(lam, 1e-8)


def initial_state(dataset: SurvivalDataset, spec: ModelSpec, config: SamplerConfig,
                  rng: np.random.Generator):
    p1, p2, J = dataset.z.shape[1], dataset.p2, spec.partition.J
    lam = crude_hazards(dataset, spec.partition)
    b, beta = np.zeros(p1), np.zeros(p2)
    theta = 1.0 if spec.frailty else None
    shrink = ShrinkageState.ones(p1, p2)
    if config.init == "default":
        b = b + rng.uniform(-0.5, 0.5, p1)
        beta = beta + rng.uniform(-0.5, 0.5, p2)
        lam = lam * rng.uniform(0.8, 1.2, J)
    elif config.init == "prior":
        h = spec.hyper
        shrink.eta_sq = rng.gamma(h.r1, 1.0 / h.delta1)
        shrink.eta_star_sq = rng.gamma(h.r2, 1.0 / h.delta2)
        shrink.tau_sq = rng.exponential(2.0 / shrink.eta_sq, p1)
        shrink.tau_star_sq = rng.exponential(2.0 / shrink.eta_star_sq, p2)
        b = rng.normal(0.0, np.sqrt(shrink.tau_sq))
        beta = rng.normal(0.0, np.sqrt(shrink.tau_star_sq))
        lam = np.clip(rng.gamma(h.a, 1.0 / h.b_rate, J), 1e-3, 1e3)
        if spec.frailty:
            theta = float(np.clip(rng.gamma(h.c, 1.0 / h.d), 1e-2, 1e3))
    return CureParameters(b, beta, lam, theta), shrink


def run_chain(dataset: SurvivalDataset, spec: ModelSpec, config: SamplerConfig,
              chain_index: int = 0) -> PosteriorDraws:
    """Run one chain; deterministic given (master_seed, chain_index)."""
    if spec.partition is None:
        raise SamplerError("model spec has no time partition")
    rng = chain_rng(config.master_seed, chain_index)
    params, shrink = initial_state(dataset, spec, config, rng)
    lp0 = log_joint_posterior(dataset, params, shrink, spec)
    if not np.isfinite(lp0):
        raise SamplerError("log posterior is not finite at the initial state")

    h = spec.hyper
    lasso = spec.prior == "lasso"
    frailty = spec.frailty
    cache = LikelihoodCache(dataset, spec.partition)
    status, jidx, zero = cache.status, cache.jidx, cache._zero
    zcols, xcols, ecols = cache.zcols, cache.xcols, cache.ecols
    n, p1, p2, J = dataset.n, dataset.z.shape[1], dataset.p2, spec.partition.J

    b, beta, lam = params.b.copy(), params.beta.copy(), params.lam.copy()
    theta = params.theta if frailty else 1.0
    tau_sq, tau_star_sq = shrink.tau_sq.copy(), shrink.tau_star_sq.copy()
    sigma_sq, sigma_star_sq = shrink.sigma_sq, shrink.sigma_star_sq
    eta_sq, eta_star_sq = shrink.eta_sq, shrink.eta_star_sq

    zb = cache.z @ b
    xb = cache.x @ beta if p2 else np.zeros(n)
    H0 = cache.exposure @ lam
    loglam = np.log(lam)
    ll_sum = kernels.loglik_sum
    ll = ll_sum(zb, zero, 0.0, xb, zero, 0.0, H0, zero, 0.0, jidx, loglam, theta, frailty, status)

    M, D = config.n_iterations, config.n_retained
    out = {
        "b": np.empty((1, D, p1)), "beta": np.empty((1, D, p2)), "lam": np.empty((1, D, J)),
        "theta": np.empty((1, D)) if frailty else None,
        "tau_sq": np.empty((1, D, p1)), "tau_star_sq": np.empty((1, D, p2)),
        "sigma_sq": np.empty((1, D)), "sigma_star_sq": np.empty((1, D)),
        "eta_sq": np.empty((1, D)), "eta_star_sq": np.empty((1, D)),
        "loglik": np.empty((1, D)), "loglik_obs": np.empty((1, D, n)),
        "clamped": np.zeros((1, D), dtype=np.int64),
    }
    accept = {"b": np.zeros((1, p1), dtype=np.int64), "beta": np.zeros((1, p2), dtype=np.int64),
              "lambda": np.zeros((1, J), dtype=np.int64)}
    if frailty:
        accept["theta"] = np.zeros((1, 1), dtype=np.int64)
    iterations = np.empty(D, dtype=np.int64)
    trace = []
    sd, rate = config.proposal_sd, config.proposal_rate
    sig_b, sig_beta = h.sigma_b_sq, h.sigma_beta_sq

    def prior_b(k, v):
        if lasso:
            return _gauss_kernel(v, float(sigma_sq) * float(tau_sq[k]))
        return -v * v / (2.0 * sig_b)

    def prior_beta(k, v):
        if lasso:
            return _gauss_kernel(v, float(sigma_star_sq) * float(tau_star_sq[k]))
        return -v * v / (2.0 * sig_beta)

    slot = 0
    for g in range(1, M + 1):
        tracing = config.trace
        # step 1: b_k
        for k in range(p1):
            cur = b[k]
            zc = zcols[k]

            def target(v, k=k, cur=cur, zc=zc):
                return ll_sum(zb, zc, v - cur, xb, zero, 0.0, H0, zero, 0.0, jidx, loglam,
                              theta, frailty, status) + prior_b(k, v)

            res = mh_update_normal_rw(cur, target, rng, ll + prior_b(k, cur), sd)
            if res.accepted:
                zb += (res.value - cur) * zc
                b[k] = res.value
                ll = res.logp - prior_b(k, res.value)
                accept["b"][0, k] += 1
            if tracing:
                trace.append((g, f"b{k}"))
        # step 2: beta_k
        for k in range(p2):
            cur = beta[k]
            xc = xcols[k]

            def target(v, k=k, cur=cur, xc=xc):
                return ll_sum(zb, zero, 0.0, xb, xc, v - cur, H0, zero, 0.0, jidx, loglam,
                              theta, frailty, status) + prior_beta(k, v)

            res = mh_update_normal_rw(cur, target, rng, ll + prior_beta(k, cur), sd)
            if res.accepted:
                xb += (res.value - cur) * xc
                beta[k] = res.value
                ll = res.logp - prior_beta(k, res.value)
                accept["beta"][0, k] += 1
            if tracing:
                trace.append((g, f"beta{k + 1}"))
        # step 3: lambda_k
        for k in range(J):
            cur = lam[k]
            ec = ecols[k]

            def target(v, k=k, cur=cur, ec=ec):
                lp = loglam.copy()
                lp[k] = math.log(v)
                return ll_sum(zb, zero, 0.0, xb, zero, 0.0, H0, ec, v - cur, jidx, lp,
                              theta, frailty, status) + (h.a - 1.0) * lp[k] - h.b_rate * v

            cur_prior = (h.a - 1.0) * loglam[k] - h.b_rate * cur
            res = mh_update_gamma_rw(cur, target, rng, ll + cur_prior, rate)
            if res.accepted:
                H0 += (res.value - cur) * ec
                lam[k] = res.value
                loglam[k] = math.log(res.value)
                ll = res.logp - ((h.a - 1.0) * loglam[k] - h.b_rate * res.value)
                accept["lambda"][0, k] += 1
            if tracing:
                trace.append((g, f"lambda{k + 1}"))
        # frailty precision
        if frailty:
            cur = theta

            def target(v):
                return ll_sum(zb, zero, 0.0, xb, zero, 0.0, H0, zero, 0.0, jidx, loglam,
                              v, True, status) + (h.c - 1.0) * math.log(v) - h.d * v

            cur_prior = (h.c - 1.0) * math.log(cur) - h.d * cur
            res = mh_update_gamma_rw(cur, target, rng, ll + cur_prior, rate)
            if res.accepted:
                theta = res.value
                ll = res.logp - ((h.c - 1.0) * math.log(theta) - h.d * theta)
                accept["theta"][0, 0] += 1
            if tracing:
                trace.append((g, "theta"))
        # steps 4-9: conjugate shrinkage block
        if lasso:
            tau_sq = 1.0 / sample_inv_tau_sq(b, sigma_sq, eta_sq, rng)
            if p2:
                tau_star_sq = 1.0 / sample_inv_tau_sq(beta, sigma_star_sq, eta_star_sq, rng)
            sigma_sq = sample_sigma_sq(b, tau_sq, rng)
            if p2:
                sigma_star_sq = sample_sigma_sq(beta, tau_star_sq, rng)
            eta_sq = sample_eta_sq(tau_sq, h.r1, h.delta1, rng)
            if p2:
                eta_star_sq = sample_eta_sq(tau_star_sq, h.r2, h.delta2, rng)
            if tracing:
                trace.extend((g, s) for s in ("inv_tau_sq", "inv_tau_star_sq", "sigma_sq",
                                              "sigma_star_sq", "eta_sq", "eta_star_sq"))

        if g > config.burn_in and (g - config.burn_in) % config.thin == 0 and slot < D:
            out["b"][0, slot] = b
            out["beta"][0, slot] = beta
            out["lam"][0, slot] = lam
            if frailty:
                out["theta"][0, slot] = theta
            out["tau_sq"][0, slot] = tau_sq
            out["tau_star_sq"][0, slot] = tau_star_sq
            out["sigma_sq"][0, slot] = sigma_sq
            out["sigma_star_sq"][0, slot] = sigma_star_sq
            out["eta_sq"][0, slot] = eta_sq
            out["eta_star_sq"][0, slot] = eta_star_sq
            row = out["loglik_obs"][0, slot]
            out["clamped"][0, slot] = kernels.loglik_obs(zb, xb, H0, jidx, loglam, theta,
                                                         frailty, status, row)
            out["loglik"][0, slot] = row.sum()
            iterations[slot] = g
            slot += 1

    return PosteriorDraws(spec.family, spec.prior, iterations=iterations, accept=accept,
                          n_proposals=M, seeds=[(int(config.master_seed), int(chain_index))],
                          trace=trace, **out)


def _run_chain_args(args):
    return run_chain(*args)


def run_fit(dataset: SurvivalDataset, spec: ModelSpec, config: SamplerConfig,
            n_jobs: int = 1) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains and pool them."""
    jobs = [(dataset, spec, config, c) for c in range(config.n_chains)]
    if n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, config.n_chains)) as ex:
            chains = list(ex.map(_run_chain_args, jobs))
    else:
        chains = [run_chain(*j) for j in jobs]
    return PosteriorDraws.concatenate(chains)
