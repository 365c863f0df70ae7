import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from smcure.datagen import (SCENARIO4_J_GRID, SCENARIOS, FitSetup, ReplicateFit,
                            ScenarioSpec, calibrate_censoring,
                            censoring_fraction, generate_dataset, get_scenario, j_sweep_setups,
                            mae, pe_inverse_cumhaz, run_study, truth_for)
from smcure.model import DataError, TimePartition, baseline_cumhaz_at
from smcure.survcurves import kaplan_meier

TARGETS = {1: (0.37, 0.35), 3: (0.47, 0.40), 4: (0.65, 0.50)}


def test_pure_exponential_without_cure_or_censoring():
    spec = ScenarioSpec("exp", 50_000, b=(60.0,), beta=(), z_covariates=())
    sim = generate_dataset(spec, np.random.default_rng(0))
    ds = sim.dataset
    assert np.all(ds.status == 1) and sim.uncured.all()
    assert ds.times.mean() == pytest.approx(1.0, abs=3 * 1 / math.sqrt(ds.n))
    assert stats.kstest(ds.times, "expon").pvalue > 0.01


@pytest.mark.parametrize("key", sorted(TARGETS))
def test_stored_censoring_rates_hit_targets(key):
    spec = SCENARIOS[key]
    cens, cure = censoring_fraction(spec, spec.censoring_rate, n=100_000, seed=777)
    target_cens, target_cure = TARGETS[key]
    assert cens == pytest.approx(target_cens, abs=0.02)
    assert cure == pytest.approx(target_cure, abs=0.02)


def test_scenario2_censoring_rate():
    # the generating incidence gives ~56% cured, above which only censoring is tunable
    spec = SCENARIOS[2]
    cens, _ = censoring_fraction(spec, spec.censoring_rate, n=100_000, seed=777)
    assert cens == pytest.approx(0.75, abs=0.02)


def test_scenario1_sample_proportions():
    sim = generate_dataset(SCENARIOS[1].with_(n=100_000), np.random.default_rng(1))
    assert np.mean(sim.dataset.status == 0) == pytest.approx(0.37, abs=0.02)
    assert np.mean(~sim.uncured) == pytest.approx(0.35, abs=0.02)


def test_calibration_reproduces_stored_rate():
    spec = SCENARIOS[1]
    # censoring is dominated by the cure fraction, so the rate is only
    # pinned down by the fixed calibration sample
    rate = calibrate_censoring(spec)
    assert rate == pytest.approx(spec.censoring_rate, rel=1e-4)
    assert calibrate_censoring(spec, target=0.2, n=20_000) == 0.0  # cure alone exceeds 20%


@pytest.mark.parametrize("key", [1, 2, 3])
def test_inverse_transform_round_trip(key):
    spec = SCENARIOS[key].with_(n=10_000)
    sim = generate_dataset(spec, np.random.default_rng(key))
    ds = sim.dataset
    m = sim.uncured & np.isfinite(sim.event_times)
    part = TimePartition.with_interior(spec.interior_cuts, sim.event_times[m])
    H = baseline_cumhaz_at(sim.event_times[m], part, np.asarray(spec.lam))
    xb = ds.x[m] @ np.asarray(spec.beta)
    assert np.max(np.abs(H * np.exp(xb) - sim.neg_log_u[m])) < 1e-10


def test_pe_inverse_hand_values():
    lam, cuts = (0.5, 2.0), (1.0,)
    assert pe_inverse_cumhaz([0.25, 0.5, 1.5], lam, cuts) == pytest.approx([0.5, 1.0, 1.5])


def test_generated_dataset_is_valid():
    sim = generate_dataset(SCENARIOS[4], np.random.default_rng(5))
    ds = sim.dataset
    assert np.all(ds.times > 0) and set(np.unique(ds.status)) <= {0, 1}
    assert ds.z.shape == (200, 5) and ds.x.shape == (200, 4)
    assert np.all(ds.status[~sim.uncured] == 0)


def test_cured_subjects_need_censoring():
    with pytest.raises(DataError):
        generate_dataset(SCENARIOS[1].with_(censoring_rate=0.0), np.random.default_rng(0))


def test_spec_validation():
    with pytest.raises(ValueError):
        SCENARIOS[1].with_(b=(0.1, 0.2))
    with pytest.raises(ValueError):
        SCENARIOS[2].with_(lam=(1.0,))
    with pytest.raises(KeyError):
        get_scenario(7)
    assert get_scenario("scenario3", n=400).n == 400


def _scenario3_latency_survival(t, spec):
    # exact marginal over the three Bernoulli and one normal covariates
    lam = np.asarray(spec.lam)
    part = TimePartition(np.r_[0.0, spec.interior_cuts, 1e9])
    H = float(baseline_cumhaz_at(t, part, lam))
    ps = [c.p for c in spec.x_covariates[:3]]
    beta = np.asarray(spec.beta)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=3):
        w = np.prod([p if b else 1 - p for p, b in zip(ps, bits)])
        shift = float(np.dot(beta[:3], bits))
        f = lambda u: math.exp(-H * math.exp(shift + beta[3] * u)) * stats.norm.pdf(u)
        total += w * integrate.quad(f, -10, 10, epsabs=1e-12)[0]
    return total


def test_empirical_survival_matches_latency_law():
    spec = SCENARIOS[3].with_(n=100_000, b=(40.0, 0.0, 0.0, 0.0), censoring_rate=0.0)
    sim = generate_dataset(spec, np.random.default_rng(6))
    km = kaplan_meier(sim.dataset.times, sim.dataset.status)
    grid = np.linspace(0.05, 4.0, 40)
    truth = np.array([_scenario3_latency_survival(t, spec) for t in grid])
    assert np.max(np.abs(km(grid) - truth)) < 0.02


def test_mae_examples():
    assert mae(1.0, [1.0, 1.0]) == 0.0
    assert mae(1.0, [0.5, 1.5]) == 0.5
    assert mae(0.3, np.full(7, 1.1)) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        mae(1.0, [])


def _oracle_fitter(sim, scenario, setup, seed):
    J = setup.J or scenario.J
    t = truth_for(scenario, sim, J)
    crit = {"dic": float(J), "lpml": -float(J)} if setup.criteria else {}
    return ReplicateFit({k: (v, 0.0, 1.0) for k, v in t.items()}, crit)


def test_oracle_fitter_gives_zero_error():
    res = run_study(SCENARIOS[1].with_(n=200), [FitSetup()], reps=1, fitter=_oracle_fitter)
    rows = res.parameter_table()
    assert {r["parameter"] for r in rows} == {"b0", "b1", "b2", "beta1", "beta2", "lambda1",
                                              "pi_bar"}
    assert all(r["mae"] == 0.0 for r in rows)
    assert res.converged_fraction("SMCM") == 1.0


def test_j_sweep_emits_row_per_j():
    setups = j_sweep_setups(FitSetup())
    res = run_study(SCENARIOS[4], setups, reps=2, fitter=_oracle_fitter)
    rows = res.criteria_table()
    assert [r["J"] for r in rows] == list(SCENARIO4_J_GRID)
    assert all(r["replicates"] == 2 for r in rows)


def _first_time_fitter(sim, scenario, setup, seed):
    return ReplicateFit({"t0": (float(sim.dataset.times[0]), 0.0, 1.0)}, {})


def test_replicates_are_replayable():
    fitter = _first_time_fitter
    a = run_study(SCENARIOS[1].with_(n=100), [FitSetup()], reps=3, fitter=fitter)
    b = run_study(SCENARIOS[1].with_(n=100), [FitSetup()], reps=3, fitter=fitter, n_jobs=2)
    assert [r["estimates"] for r in a.records] == [r["estimates"] for r in b.records]


def test_failures_are_recorded():
    def broken(sim, scenario, setup, seed):
        raise RuntimeError("boom")

    res = run_study(SCENARIOS[1].with_(n=100), [FitSetup()], reps=2, fitter=broken)
    assert len(res.failures()) == 2 and res.parameter_table() == []
    assert res.manifest()["failures"][0]["error"] == "boom"


def test_short_mcmc_study_runs():
    setup = FitSetup(n_chains=2, n_iterations=400, burn_in=100, thin=5, criteria=True)
    res = run_study(SCENARIOS[1].with_(n=150), [setup], reps=1)
    assert not res.failures()
    assert {"b0", "lambda1", "pi_bar"} <= {r["parameter"] for r in res.parameter_table()}
    assert np.isfinite(res.criteria_table()[0]["dic"])
