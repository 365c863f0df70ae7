import json
from pathlib import Path

import numpy as np
import pytest

from smcure.model import (CureParameters, ModelSpec, SurvivalDataset, TimePartition,
                          log_likelihood)
from smcure.priors import (ShrinkageState, log_cond_b_k, log_cond_beta_k, log_cond_lambda_k,
                           log_cond_theta, log_joint_posterior)
from smcure.sampler import PosteriorDraws

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


def oracle_dataset() -> SurvivalDataset:
    rows = np.array(ORACLES["dataset"], dtype=float)
    z = np.column_stack([np.ones(len(rows)), rows[:, 4]])
    return SurvivalDataset(rows[:, 0], rows[:, 1].astype(int), rows[:, 2:4], z)


def oracle_partition() -> TimePartition:
    return TimePartition(np.array(ORACLES["cuts"]))


def random_dataset(rng, n=20, p1=2, p2=2, cens=0.4) -> SurvivalDataset:
    times = rng.exponential(1.0, n) + 1e-3
    status = (rng.random(n) > cens).astype(int)
    status[0] = 1
    z = np.column_stack([np.ones(n), rng.normal(size=(n, p1))])
    x = rng.normal(size=(n, p2))
    return SurvivalDataset(times, status, x, z)


def random_params(rng, ds, J, theta=None) -> CureParameters:
    return CureParameters(rng.normal(0, 0.7, ds.z.shape[1]), rng.normal(0, 0.5, ds.p2),
                          rng.gamma(2.0, 0.5, J), theta)


def make_draws(dataset, partition, b, beta, lam, theta=None, prior="lasso") -> PosteriorDraws:
    """PosteriorDraws from explicit (chains, draws, ...) arrays, likelihoods filled in."""
    b, beta, lam = (np.asarray(a, dtype=float) for a in (b, beta, lam))
    C, D = b.shape[:2]
    family = "smcm" if theta is None else "smcfm"
    ll_obs = np.empty((C, D, dataset.n))
    for c in range(C):
        for d in range(D):
            th = None if theta is None else float(theta[c][d])
            p = CureParameters(b[c, d], beta[c, d], lam[c, d], th)
            ll_obs[c, d] = log_likelihood(dataset, p, partition, family).contributions
    ones = np.ones((C, D))
    return PosteriorDraws(
        family, prior, b, beta, lam, None if theta is None else np.asarray(theta, float),
        np.ones_like(b), np.ones_like(beta), ones, ones.copy(), ones.copy(), ones.copy(),
        ll_obs.sum(axis=2), ll_obs, np.zeros((C, D), dtype=np.int64),
        np.arange(1, D + 1), n_proposals=D)


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated sequence."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def random_state(rng, family="smcm", prior="lasso", n=25, J=3):
    """Random dataset, parameters, shrinkage state and model spec."""
    ds = random_dataset(rng, n=n, p1=2, p2=2)
    part = TimePartition.from_quantiles(ds.times, ds.status, J)
    theta = float(rng.gamma(2.0, 1.0)) if family == "smcfm" else None
    params = random_params(rng, ds, J, theta)
    shrink = ShrinkageState(rng.gamma(2, 0.5, 3), rng.gamma(2, 0.5, 2), rng.gamma(2, 0.5),
                            rng.gamma(2, 0.5), rng.gamma(2, 0.5), rng.gamma(2, 0.5))
    return ds, params, shrink, ModelSpec(family, prior, part)


def _with(params, name, k, value):
    p = params.copy()
    if name == "theta":
        p.theta = value
    else:
        getattr(p, name)[k] = value
    return p


def check_conditional_pairs(rng, family, prior, n_pairs=100):
    """Worst |d log_cond - d log_joint| over random coordinate pairs."""
    worst = 0.0
    for _ in range(n_pairs):
        ds, params, shrink, spec = random_state(rng, family, prior)
        blocks = [("b", k) for k in range(3)] + [("beta", k) for k in range(2)] + \
                 [("lam", k) for k in range(3)]
        if family == "smcfm":
            blocks.append(("theta", None))
        for name, k in blocks:
            if name in ("b", "beta"):
                v1, v2 = rng.normal(0, 1.5, 2)
            else:
                v1, v2 = rng.gamma(2.0, 0.7, 2)

            def cond(v):
                if name == "b":
                    return log_cond_b_k(k, v, ds, params, shrink, spec)
                if name == "beta":
                    return log_cond_beta_k(k, v, ds, params, shrink, spec)
                if name == "lam":
                    return log_cond_lambda_k(k, v, ds, params, spec)
                return log_cond_theta(v, ds, params, spec)

            d_cond = cond(v1) - cond(v2)
            d_joint = (log_joint_posterior(ds, _with(params, name, k, v1), shrink, spec)
                       - log_joint_posterior(ds, _with(params, name, k, v2), shrink, spec))
            worst = max(worst, abs(d_cond - d_joint))
    return worst
