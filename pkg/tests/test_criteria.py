import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_draws, oracle_dataset, oracle_partition
from smcure.criteria import (MIN_LOO_DRAWS, aic_bic, criteria_report, dic, gpd_fit, lpml,
                             n_likelihood_params, psis_loo)
from smcure.datagen import SCENARIOS, generate_dataset
from smcure.model import ModelSpec, TimePartition
from smcure.sampler import SamplerConfig, run_fit


def _oracle_draws(oracles, copies=1):
    rows = oracles["dic_draws"] * copies
    get = lambda key: np.array([[[float(v) for v in r[key]] for r in rows]])
    return make_draws(oracle_dataset(), oracle_partition(), get("b"), get("beta"), get("lam"))


# -- DIC / AIC / BIC --------------------------------------------------------


def test_dic_matches_oracle(oracles):
    d = _oracle_draws(oracles)
    value, p_d, dev_hat = dic(d, oracle_dataset(), oracle_partition())
    assert value == pytest.approx(oracles["dic"], abs=1e-10)
    assert p_d == pytest.approx(oracles["dic_p_d"], abs=1e-10)
    assert dev_hat == pytest.approx(oracles["dic_dev_hat"], abs=1e-10)
    dev_bar = -2.0 * d.loglik.mean()
    assert abs(value - (2 * dev_bar - dev_hat)) < 1e-10


def test_aic_bic_match_oracle(oracles):
    d = _oracle_draws(oracles)
    aic, bic = aic_bic(d, oracle_dataset(), oracle_partition())
    assert aic == pytest.approx(oracles["aic"], abs=1e-10)
    assert bic == pytest.approx(oracles["bic"], abs=1e-10)
    k, n = n_likelihood_params(d), oracle_dataset().n
    assert abs((bic - aic) - k * (math.log(n) - 2)) < 1e-10


def test_identical_draws_have_zero_p_d():
    ds, part = oracle_dataset(), oracle_partition()
    b = np.tile([0.2, -0.4], (1, 5, 1))
    beta = np.tile([0.1, 0.3], (1, 5, 1))
    lam = np.tile([0.6, 0.4], (1, 5, 1))
    d = make_draws(ds, part, b, beta, lam)
    value, p_d, dev_hat = dic(d, ds, part)
    assert p_d == 0.0 and value == dev_hat


def test_frailty_adds_one_parameter():
    ds, part = oracle_dataset(), oracle_partition()
    b, beta, lam = np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.ones((1, 2, 2))
    plain = make_draws(ds, part, b, beta, lam)
    frail = make_draws(ds, part, b, beta, lam, theta=np.full((1, 2), 3.0))
    assert n_likelihood_params(frail) == n_likelihood_params(plain) + 1 == 7


def _duplicated_reports():
    ds, part = oracle_dataset(), oracle_partition()
    rng = np.random.default_rng(0)
    b = rng.normal(0, 0.3, (1, 120, 2))
    beta = rng.normal(0, 0.3, (1, 120, 2))
    lam = rng.gamma(20, 0.03, (1, 120, 2))
    one = make_draws(ds, part, b, beta, lam)
    two = make_draws(ds, part, np.tile(b, (1, 2, 1)), np.tile(beta, (1, 2, 1)),
                     np.tile(lam, (1, 2, 1)))
    return criteria_report(one, ds, part), criteria_report(two, ds, part)


def test_duplicated_draws_leave_dic_and_lpml_unchanged():
    r1, r2 = _duplicated_reports()
    for key in ("dic", "p_d", "lpml", "aic", "bic"):
        assert abs(getattr(r1, key) - getattr(r2, key)) < 1e-10, key


def test_duplicated_draws_leave_looic_unchanged():
    # the Pareto tail length and the tail fit both depend on the draw count
    r1, r2 = _duplicated_reports()
    assert abs(r1.looic - r2.looic) < 1e-10


# -- LPML -------------------------------------------------------------------


def test_lpml_harmonic_mean_example():
    value, cpo = lpml(np.log([[1.0], [3.0]]))
    assert cpo[0] == pytest.approx(1.5, rel=1e-14)
    assert value == pytest.approx(math.log(1.5), rel=1e-14)


def test_lpml_identical_draws():
    ll = np.tile(np.log([0.2, 0.7, 0.05]), (40, 1))
    value, cpo = lpml(ll)
    assert np.array_equal(cpo, np.exp(ll[0])) or np.allclose(cpo, np.exp(ll[0]), rtol=1e-15)
    assert value == pytest.approx(ll[0].sum(), rel=1e-15)


def test_lpml_permutation_invariance():
    rng = np.random.default_rng(1)
    ll = rng.normal(-1, 0.5, (200, 30))
    base = lpml(ll)[0]
    assert lpml(ll[rng.permutation(200)])[0] == pytest.approx(base, rel=1e-13)
    assert lpml(ll[:, rng.permutation(30)])[0] == pytest.approx(base, rel=1e-13)


def test_lpml_extreme_values_stay_finite():
    ll = np.array([[-800.0], [-1.0]])
    value, _ = lpml(ll)
    assert value == pytest.approx(math.log(2) - 800.0, abs=1e-9)


# -- PSIS-LOO ---------------------------------------------------------------


def test_loo_identical_draws():
    ll = np.tile(np.log([0.2, 0.7, 0.05]), (MIN_LOO_DRAWS, 1))
    looic, elpd, ks = psis_loo(ll)
    assert looic == -2.0 * ll[0].sum()
    assert np.array_equal(elpd, ll[0]) and np.all(ks == 0)


def test_loo_needs_enough_draws():
    with pytest.raises(ValueError):
        psis_loo(np.zeros((MIN_LOO_DRAWS - 1, 3)))
    with pytest.raises(ValueError):
        psis_loo(np.zeros((1, 3)))
    ds, part = oracle_dataset(), oracle_partition()
    d = make_draws(ds, part, np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
    assert math.isnan(criteria_report(d, ds, part).looic)


def test_loo_matches_exact_conjugate_normal():
    # y_i ~ N(mu, 1), flat prior: mu | y_{-i} ~ N(mean_{-i}, 1/(n-1))
    rng = np.random.default_rng(2)
    y = rng.normal(0.5, 1.0, 40)
    n = y.size
    mu = rng.normal(y.mean(), 1 / math.sqrt(n), 8000)
    ll = stats.norm.logpdf(y[None, :], mu[:, None], 1.0)
    looic, elpd, ks = psis_loo(ll)
    loo_mean = (y.sum() - y) / (n - 1)
    exact = stats.norm.logpdf(y, loo_mean, math.sqrt(1 + 1 / (n - 1)))
    assert np.max(np.abs(elpd - exact)) < 0.01
    assert np.all(ks < 0.5)


def test_gpd_fit_recovers_shape():
    x = stats.genpareto(0.3, scale=2.0).rvs(20_000, random_state=3)
    k, sigma = gpd_fit(x)
    assert k == pytest.approx(0.3, abs=0.05)
    assert sigma == pytest.approx(2.0, rel=0.05)


def test_loo_flags_heavy_tails():
    rng = np.random.default_rng(4)
    ll = rng.normal(0, 0.1, (1000, 2))
    ll[:5, 1] = -40.0  # a few draws that nearly exclude observation 2
    _, _, ks = psis_loo(ll)
    assert ks[0] < 0.7 < ks[1]


def test_loo_and_lpml_agree_on_simulated_fit():
    sim = generate_dataset(SCENARIOS[1].with_(n=300), np.random.default_rng(5))
    part = TimePartition.with_interior((), sim.dataset.times)
    cfg = SamplerConfig(n_chains=2, n_iterations=3000, burn_in=500, thin=5, master_seed=5)
    draws = run_fit(sim.dataset, ModelSpec("smcm", "lasso", part), cfg)
    r = criteria_report(draws, sim.dataset, part)
    assert abs(r.looic - (-2 * r.lpml)) / abs(r.looic) < 0.05
    assert abs(r.dic - r.looic) / abs(r.looic) < 0.05
    assert r.p_d > 0
