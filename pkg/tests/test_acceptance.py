"""Acceptance suite: one PASS/FAIL line per criterion.

Criterion 3/4 run the full desk-scale replication (100 replicates, three
chains of 15000 iterations) and take tens of minutes on one core. Set
SMCURE_ACCEPT_REPS to a smaller count for a quicker, non-binding look.
Criterion 9 needs the public trial files; point SMCURE_E1690_CONFIG and/or
SMCURE_COLON_CONFIG at a fit config (JSON/TOML with data and column keys).
"""
import json
import math
import os

import numpy as np
import pytest
from scipy import stats

from conftest import (batch_means_se, check_conditional_pairs, make_draws, random_dataset,
                      random_params)
from smcure.cli import main
from smcure.criteria import dic, lpml, psis_loo
from smcure.datagen import SCENARIOS, FitSetup, generate_dataset, run_study
from smcure.diagnostics import hpd_interval
from smcure.model import TimePartition, baseline_cumhaz_at, log_likelihood
from smcure.priors import sample_eta_sq, sample_inv_gamma, sample_inverse_gaussian
from smcure.sampler import mh_update_gamma_rw, mh_update_normal_rw
from smcure.survcurves import kaplan_meier

# reference replicate averages at n = 1000, plain cure model with lasso prior
REFERENCE_NAMES = ("b0", "b1", "b2", "beta1", "beta2", "lambda1", "pi_bar")
REFERENCE_MEANS = (0.40900, 0.46298, 0.09167, 0.93954, 0.18595, 1.01291, 0.65181)
REFERENCE_SDS = (0.10171, 0.14127, 0.06743, 0.10417, 0.03935, 0.10571, 0.01694)


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return report


def test_criterion_1_conditional_joint_consistency(verdict):
    rng = np.random.default_rng(101)
    worst = {f"{fam}/{pr}": check_conditional_pairs(rng, fam, pr, n_pairs=100)
             for fam in ("smcm", "smcfm") for pr in ("lasso", "normal")}
    verdict(1, max(worst.values()) < 1e-8,
            "max |dcond - djoint| = " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_2_frailty_limit(verdict):
    rng = np.random.default_rng(102)
    gaps = []
    for _ in range(50):
        ds = random_dataset(rng, n=50, p1=2, p2=2)
        part = TimePartition.from_quantiles(ds.times, ds.status, 3)
        p = random_params(rng, ds, 3)
        frail = p.copy()
        frail.theta = 1e6
        gaps.append(abs(log_likelihood(ds, frail, part, "smcfm").total
                        - log_likelihood(ds, p, part, "smcm").total))
    verdict(2, max(gaps) < 1e-3, f"max gap over 50 datasets = {max(gaps):.2e} (< 1e-3)")


@pytest.fixture(scope="module")
def scenario1_study():
    reps = int(os.environ.get("SMCURE_ACCEPT_REPS", 100))
    return run_study(SCENARIOS[1].with_(n=1000), [FitSetup()], reps=reps)


@pytest.mark.slow
def test_criterion_3_scenario1_replication(scenario1_study, verdict):
    rows = {r["parameter"]: r for r in scenario1_study.parameter_table()}
    lines, ok = [], not scenario1_study.failures()
    for name, mean, sd in zip(REFERENCE_NAMES, REFERENCE_MEANS, REFERENCE_SDS):
        tol = 0.02 if name == "pi_bar" else 0.05
        r = rows[name]
        mean_ok = abs(r["mean"] - mean) <= tol
        sd_ok = abs(r["sd"] - sd) <= 0.3 * sd
        ok &= mean_ok and sd_ok
        lines.append(f"{name} mean {r['mean']:.4f} vs {mean} [{'ok' if mean_ok else 'off'}], "
                     f"sd {r['sd']:.4f} vs {sd} [{'ok' if sd_ok else 'off'}]")
    n_rep = rows["b0"]["replicates"]
    verdict(3, ok, f"{n_rep} replicates; " + "; ".join(lines))


@pytest.mark.slow
def test_criterion_4_convergence(scenario1_study, verdict):
    frac = scenario1_study.converged_fraction("SMCM")
    verdict(4, frac >= 0.95, f"replicates with every PSRF < 1.1: {frac:.1%} (>= 95%)")


def _run_kernel(kernel, log_target, start, n, seed):
    rng = np.random.default_rng(seed)
    x, lp, out = start, None, np.empty(n)
    for i in range(n):
        res = kernel(x, log_target, rng, lp)
        x, lp = res.value, res.logp
        out[i] = x
    return out


def test_criterion_5_known_target_kernels(verdict):
    checks = []
    x = _run_kernel(mh_update_normal_rw, lambda v: -0.5 * v * v, 0.0, 100_000, 105)
    checks.append(("normal-rw N(0,1)", x, 0.0, 1.0))
    gamma_target = lambda v: 2.0 * math.log(v) - 2.0 * v if v > 0 else -math.inf
    y = _run_kernel(mh_update_gamma_rw, gamma_target, 1.0, 100_000, 205)
    checks.append(("gamma-rw Gamma(3,2)", y, 1.5, 0.75))
    ok, parts = True, []
    for label, s, mean, var in checks:
        se_m = batch_means_se(s)
        se_v = batch_means_se((s - s.mean()) ** 2)
        good = abs(s.mean() - mean) < 3 * se_m and abs(s.var() - var) < 3 * se_v
        ok &= good
        parts.append(f"{label}: mean {s.mean():.4f} (3se {3 * se_m:.4f}), "
                     f"var {s.var():.4f} (3se {3 * se_v:.4f})")
    verdict(5, ok, "; ".join(parts))


def test_criterion_6_conjugate_samplers_ks(verdict):
    rng = np.random.default_rng(106)
    mu, shape = 1.7, 3.2
    ig = sample_inverse_gaussian(np.full(10_000, mu), shape, rng)
    p_ig = stats.kstest(ig, stats.invgauss(mu / shape, scale=shape).cdf).pvalue
    inv_g = np.array([sample_inv_gamma(3.0, 2.0, rng) for _ in range(10_000)])
    p_invg = stats.kstest(inv_g, stats.invgamma(3.0, scale=2.0).cdf).pvalue
    gam = np.array([sample_eta_sq(np.zeros(3), 2.0, 2.0, rng) for _ in range(10_000)])
    p_gam = stats.kstest(gam, stats.gamma(5.0, scale=0.5).cdf).pvalue
    ok = min(p_ig, p_invg, p_gam) > 0.01
    verdict(6, ok, f"KS p-values: inverse-Gaussian {p_ig:.3f}, inverse-gamma {p_invg:.3f}, "
                   f"gamma {p_gam:.3f} (> 0.01)")


def test_criterion_7_criteria_identities(verdict):
    rng = np.random.default_rng(107)
    ds = random_dataset(rng, n=40, p1=1, p2=1)
    part = TimePartition.from_quantiles(ds.times, ds.status, 2)
    draws = make_draws(ds, part, rng.normal(0, 0.3, (2, 60, 2)), rng.normal(0, 0.3, (2, 60, 1)),
                       rng.gamma(20, 0.05, (2, 60, 2)))
    value, p_d, dev_hat = dic(draws, ds, part)
    identity = abs(value - (2 * (-2 * draws.loglik.mean()) - dev_hat))
    same = make_draws(ds, part, np.tile([0.1, -0.2], (1, 120, 1)), np.tile([0.3], (1, 120, 1)),
                      np.tile([0.9, 1.1], (1, 120, 1)))
    _, p_d0, _ = dic(same, ds, part)
    ll = same.pooled_loglik_obs()
    _, cpo = lpml(ll)
    looic, _, _ = psis_loo(ll)
    cpo_exact = bool(np.all(cpo == np.exp(ll[0])))
    loo_exact = looic == -2.0 * ll[0].sum()
    ok = identity < 1e-10 and p_d0 == 0.0 and cpo_exact and loo_exact
    verdict(7, ok, f"DIC identity error {identity:.1e}; identical draws: p_D={p_d0}, "
                   f"CPO=L {cpo_exact}, LOOIC=-2 sum l {loo_exact}")


def test_criterion_8_oracle_equivalences(verdict):
    km = kaplan_meier([1.0, 2.0, 3.0], [1, 0, 1])
    # hand product limit: risk sets 3 then 1
    km_ok = [km(1.0), km(2.0), km(3.0)] == [1 - 1 / 3, 1 - 1 / 3, 0.0]

    spec = SCENARIOS[3].with_(n=40_000)
    sim = generate_dataset(spec, np.random.default_rng(108))
    m = np.flatnonzero(sim.uncured)[:10_000]  # 10^4 latent event times
    part = TimePartition.with_interior(spec.interior_cuts, sim.event_times[m])
    H = baseline_cumhaz_at(sim.event_times[m], part, np.asarray(spec.lam))
    trip = float(np.max(np.abs(H * np.exp(sim.dataset.x[m] @ np.asarray(spec.beta))
                               - sim.neg_log_u[m])))

    rng = np.random.default_rng(208)
    hpd_ok = True
    for _ in range(200):
        n = int(rng.integers(20, 201))
        x = rng.gamma(1.5, 1.0, n)
        level = float(rng.choice([0.5, 0.8, 0.9, 0.95]))
        lo, hi = hpd_interval(x, level)
        xs, k = np.sort(x), math.ceil(level * n)
        hpd_ok &= hi - lo == np.min(xs[k - 1:] - xs[: n - k + 1])
    ok = km_ok and trip < 1e-10 and hpd_ok
    verdict(8, ok, f"KM 3-point exact {km_ok}; PE round trip max error {trip:.1e} on "
                   f"{m.size} times; HPD exhaustive scan (200 samples) {hpd_ok}")


def _config_env(name):
    path = os.environ.get(name)
    if not path:
        pytest.skip(f"{name} not set; trial data not bundled")
    return path


def test_criterion_9a_melanoma_trial(tmp_path, verdict):
    cfg = _config_env("SMCURE_E1690_CONFIG")
    out = tmp_path / "e1690"
    assert main(["compare", "--config", cfg, "--model", "smcm", "--J", "1,2,3,4",
                 "--out", str(out)]) == 0
    import csv
    rows = list(csv.DictReader(open(out / "criteria.csv")))
    j1 = next(r for r in rows if r["J"] == "1")
    d, lp = float(j1["dic"]), float(j1["lpml"])
    ok = (abs(d - 1037.50) <= 3 and abs(lp + 518.79) <= 2 and j1["best_dic"] == "1"
          and j1["best_lpml"] == "1")
    verdict("9a", ok, f"J=1 DIC {d:.2f} (1037.50 +/- 3), LPML {lp:.2f} (-518.79 +/- 2), "
                      f"best by DIC {j1['best_dic']}, by LPML {j1['best_lpml']}")


def test_criterion_9b_colon_frailty(tmp_path, verdict):
    cfg = _config_env("SMCURE_COLON_CONFIG")
    out = tmp_path / "colon"
    assert main(["fit", "--config", cfg, "--model", "smcfm", "--J", "7",
                 "--out", str(out)]) == 0
    crit = json.loads((out / "summary.json").read_text())["criteria"]
    verdict("9b", abs(crit["dic"] - 2321.25) <= 5,
            f"J=7 frailty DIC {crit['dic']:.2f} (2321.25 +/- 5)")
