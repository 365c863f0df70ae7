"""Simulated mixture-cure data and the replicate study harness."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .model import (DataError, ModelSpec, SurvivalDataset, TimePartition,
                    incidence_probability)

LATENCY_FAMILIES = ("pe", "weibull")
PSRF_THRESHOLD = 1.1


@dataclass(frozen=True)
class Covariate:
    """One generated covariate column: Bernoulli(p) or standard normal."""

    kind: str
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("bernoulli", "normal"):
            raise ValueError("covariate kind must be 'bernoulli' or 'normal'")
        if self.kind == "bernoulli" and not 0.0 < self.p < 1.0:
            raise ValueError("Bernoulli probability must lie in (0, 1)")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "bernoulli":
            return (rng.random(n) < self.p).astype(float)
        return rng.standard_normal(n)


def bern(p: float) -> Covariate:
    return Covariate("bernoulli", p)


NORMAL = Covariate("normal")


@dataclass
class ScenarioSpec:
    """Everything needed to simulate one design.

    ``x_covariates=None`` means the latency design reuses the incidence
    covariates (X = Z without the intercept). The PE latency uses
    ``interior_cuts`` with the last interval open-ended. Censoring times
    are Exponential(``censoring_rate``); a rate of 0 disables censoring.
    """

    name: str
    n: int
    b: Sequence[float]
    beta: Sequence[float]
    z_covariates: Sequence[Covariate]
    x_covariates: Optional[Sequence[Covariate]] = None
    latency: str = "pe"
    lam: Sequence[float] = (1.0,)
    interior_cuts: Sequence[float] = ()
    weibull_shape: float = 1.5
    weibull_scale: float = 1.0
    censoring_rate: float = 0.0
    target_censoring: Optional[float] = None
    replicates: int = 100
    seed: int = 2024

    def __post_init__(self):
        self.b = tuple(float(v) for v in self.b)
        self.beta = tuple(float(v) for v in self.beta)
        self.lam = tuple(float(v) for v in self.lam)
        self.interior_cuts = tuple(float(v) for v in self.interior_cuts)
        self.z_covariates = tuple(self.z_covariates)
        if self.x_covariates is not None:
            self.x_covariates = tuple(self.x_covariates)
        if self.n < 1:
            raise ValueError("n must be positive")
        if len(self.b) != len(self.z_covariates) + 1:
            raise ValueError("b needs one entry per incidence covariate plus the intercept")
        if len(self.beta) != len(self.latency_covariates):
            raise ValueError("beta needs one entry per latency covariate")
        if self.latency not in LATENCY_FAMILIES:
            raise ValueError(f"latency must be one of {LATENCY_FAMILIES}")
        if self.latency == "pe":
            if len(self.lam) != len(self.interior_cuts) + 1 or min(self.lam) <= 0:
                raise ValueError("need J positive hazards for J - 1 interior cuts")
            if np.any(np.diff((0.0,) + self.interior_cuts) <= 0):
                raise ValueError("interior cuts must be positive and increasing")
        elif self.weibull_shape <= 0 or self.weibull_scale <= 0:
            raise ValueError("Weibull shape and scale must be positive")
        if self.censoring_rate < 0:
            raise ValueError("censoring rate must be non-negative")
        if self.target_censoring is not None and not 0 < self.target_censoring < 1:
            raise ValueError("target censoring must lie in (0, 1)")

    @property
    def shared(self) -> bool:
        return self.x_covariates is None

    @property
    def latency_covariates(self):
        return self.z_covariates if self.shared else self.x_covariates

    @property
    def J(self) -> int:
        return len(self.lam) if self.latency == "pe" else 0

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z_covariates"] = [asdict(c) for c in self.z_covariates]
        d["x_covariates"] = None if self.shared else [asdict(c) for c in self.x_covariates]
        return d


# Exponential censoring rates found by ``calibrate_censoring`` (n = 1e5,
# seed 12345) so the simulated censoring proportions hit the targets.
SCENARIOS = {
    1: ScenarioSpec("scenario1", 1000, b=(0.4, 0.5, 0.1), beta=(1.0, 0.2),
                    z_covariates=(bern(0.5), NORMAL), lam=(1.0,),
                    censoring_rate=0.0620580, target_censoring=0.37, replicates=500),
    2: ScenarioSpec("scenario2", 200, b=(0.25, -1.0, 1.5, 0.5), beta=(-1.0, 0.5, 2.0),
                    z_covariates=(bern(0.6), NORMAL, NORMAL),
                    x_covariates=(bern(0.5), NORMAL, NORMAL),
                    lam=(0.2, 0.15, 0.3), interior_cuts=(1.0, 2.0),
                    censoring_rate=0.0956024, target_censoring=0.75, replicates=500),
    3: ScenarioSpec("scenario3", 200, b=(-0.5, 1.0, 1.5, -2.0), beta=(1.5, -0.3, 0.7, 1.0),
                    z_covariates=(bern(0.3), bern(0.6), NORMAL),
                    x_covariates=(bern(0.5), bern(0.25), bern(0.65), NORMAL),
                    lam=(0.15, 0.30, 0.50, 1.0), interior_cuts=(1.0, 2.0, 3.0),
                    censoring_rate=0.0737868, target_censoring=0.47, replicates=500),
    4: ScenarioSpec("scenario4", 200, b=(0.3, -1.0, 0.5, 1.0, 0.25),
                    beta=(-0.5, 1.5, 0.6, -0.8),
                    z_covariates=(bern(0.8), bern(0.3), bern(0.4), NORMAL),
                    latency="weibull", lam=(), weibull_shape=1.5, weibull_scale=1.0,
                    censoring_rate=0.526356, target_censoring=0.65, replicates=250),
}

SCENARIO_SAMPLE_SIZES = {1: (300, 500, 1000), 2: (200, 400, 600), 3: (200, 400, 600),
                         4: (200, 400)}
SCENARIO4_J_GRID = (1, 2, 3, 4, 5, 7, 10)


def get_scenario(scenario, n: Optional[int] = None, **changes) -> ScenarioSpec:
    if isinstance(scenario, ScenarioSpec):
        spec = scenario
    else:
        key = int(str(scenario).removeprefix("scenario"))
        if key not in SCENARIOS:
            raise KeyError(f"unknown scenario {scenario!r}")
        spec = SCENARIOS[key]
    if n is not None:
        changes["n"] = n
    return spec.with_(**changes) if changes else spec


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


class SimulatedData(NamedTuple):
    dataset: SurvivalDataset
    uncured: np.ndarray        # true Y_i
    event_times: np.ndarray    # +inf for cured subjects
    censor_times: np.ndarray
    neg_log_u: np.ndarray      # -log U used by the inverse transform (nan for cured)


def pe_inverse_cumhaz(target, lam, interior_cuts) -> np.ndarray:
    """Solve H0(t) = target for a PE hazard whose last interval is open-ended."""
    lam = np.asarray(lam, dtype=float)
    cuts = np.concatenate([[0.0], np.asarray(interior_cuts, dtype=float)])
    cum = np.concatenate([[0.0], np.cumsum(lam[:-1] * np.diff(cuts))])
    target = np.asarray(target, dtype=float)
    j = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, lam.shape[0] - 1)
    return cuts[j] + (target - cum[j]) / lam[j]


def generate_covariates(spec: ScenarioSpec, rng: np.random.Generator):
    n = spec.n
    zc = [c.draw(rng, n) for c in spec.z_covariates]
    z = np.column_stack([np.ones(n)] + zc)
    if spec.shared:
        x = z[:, 1:].copy()
    else:
        x = np.column_stack([c.draw(rng, n) for c in spec.x_covariates]) \
            if spec.x_covariates else np.zeros((n, 0))
    return z, x


def _simulate(spec: ScenarioSpec, rng: np.random.Generator):
    n = spec.n
    z, x = generate_covariates(spec, rng)
    pi = incidence_probability(z, np.asarray(spec.b))
    uncured = rng.random(n) < pi
    e = rng.standard_exponential(n)  # -log U
    xb = x @ np.asarray(spec.beta) if x.shape[1] else np.zeros(n)
    target = e * np.exp(-xb)
    if spec.latency == "pe":
        latent = pe_inverse_cumhaz(target, spec.lam, spec.interior_cuts)
    else:
        latent = spec.weibull_scale * target ** (1.0 / spec.weibull_shape)
    event = np.where(uncured, latent, np.inf)
    if spec.censoring_rate > 0:
        censor = rng.standard_exponential(n) / spec.censoring_rate
    else:
        censor = np.full(n, np.inf)
    return z, x, uncured, e, event, censor


def generate_dataset(spec: ScenarioSpec, rng: np.random.Generator) -> SimulatedData:
    """Draw one mixture-cure sample under ``spec``.

    Cured subjects never fail and are always censored at their censoring
    time. Raises DataError if no event is observed.
    """
    z, x, uncured, e, event, censor = _simulate(spec, rng)
    status = (event <= censor).astype(np.int64)
    times = np.minimum(event, censor)
    if not np.any(status == 1):
        raise DataError("simulated sample has no observed events")
    if not np.all(np.isfinite(times)):
        raise DataError("cured subjects need a finite censoring time; set censoring_rate > 0")
    # the inverse transform can return exact zeros when -log U underflows
    times = np.maximum(times, np.finfo(float).tiny)
    ds = SurvivalDataset(times, status, x, z)
    return SimulatedData(ds, uncured, event, censor, np.where(uncured, e, np.nan))


def censoring_fraction(spec: ScenarioSpec, rate: float, n: int = 100_000,
                       seed: int = 12345) -> tuple:
    """(censoring proportion, cure proportion) of one large sample at ``rate``."""
    big = spec.with_(n=n, censoring_rate=rate)
    _, _, uncured, _, event, censor = _simulate(big, np.random.default_rng(seed))
    # cured subjects count as censored even in the rate -> 0 limit
    return float(np.mean(~uncured | (event > censor))), float(1.0 - uncured.mean())


def calibrate_censoring(spec: ScenarioSpec, target: Optional[float] = None,
                        n: int = 100_000, seed: int = 12345, tol: float = 1e-4) -> float:
    """Exponential censoring rate giving the target censoring proportion.

    Bisection on log(rate); the sample (and hence the map rate -> proportion)
    is fixed by ``seed`` so the result is deterministic. Returns 0 when the
    cure fraction alone already reaches the target.
    """
    target = spec.target_censoring if target is None else target
    if target is None:
        raise ValueError("no censoring target given")
    floor, _ = censoring_fraction(spec, 0.0, n, seed)
    if floor >= target:
        return 0.0
    lo, hi = -12.0, 8.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        frac, _ = censoring_fraction(spec, math.exp(mid), n, seed)
        if frac < target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def mae(true_value, estimates) -> float:
    """Mean absolute error of replicate estimates around the true value."""
    est = np.asarray(estimates, dtype=float).ravel()
    if est.size < 1:
        raise ValueError("need at least one estimate")
    return float(np.mean(np.abs(est - float(true_value))))


# --------------------------------------------------------------------------
# study harness
# --------------------------------------------------------------------------


@dataclass
class FitSetup:
    """One method to fit on every replicate."""

    label: str = "SMCM"
    family: str = "smcm"
    prior: str = "lasso"
    J: Optional[int] = None     # None: the generating J (PE scenarios only)
    n_chains: int = 3
    n_iterations: int = 15000
    burn_in: int = 2500
    thin: int = 25
    criteria: bool = False

    def __post_init__(self):
        if self.family not in ("smcm", "smcfm") or self.prior not in ("lasso", "normal"):
            raise ValueError("unknown family or prior")


class ReplicateFit(NamedTuple):
    estimates: dict        # parameter -> (mean, sd, psrf)
    criteria: dict         # criterion -> value (may be empty)


def study_partition(sim: SimulatedData, scenario: ScenarioSpec, J: int) -> TimePartition:
    ds = sim.dataset
    if scenario.latency == "pe" and J == scenario.J:
        return TimePartition.with_interior(scenario.interior_cuts, ds.times)
    return TimePartition.from_quantiles(ds.times, ds.status, J)


def truth_for(scenario: ScenarioSpec, sim: SimulatedData, J: int) -> dict:
    """True parameter values keyed like the posterior summaries."""
    truth = {f"b{k}": v for k, v in enumerate(scenario.b)}
    truth.update({f"beta{k + 1}": v for k, v in enumerate(scenario.beta)})
    if scenario.latency == "pe" and J == scenario.J:
        truth.update({f"lambda{k + 1}": v for k, v in enumerate(scenario.lam)})
    truth["pi_bar"] = float(np.mean(incidence_probability(sim.dataset.z, np.asarray(scenario.b))))
    return truth


def mcmc_fitter(sim: SimulatedData, scenario: ScenarioSpec, setup: FitSetup,
                seed: int) -> ReplicateFit:
    from .criteria import criteria_report
    from .diagnostics import summarize_draws
    from .sampler import SamplerConfig, run_fit

    J = setup.J if setup.J is not None else max(scenario.J, 1)
    partition = study_partition(sim, scenario, J)
    spec = ModelSpec(family=setup.family, prior=setup.prior, partition=partition)
    cfg = SamplerConfig(n_chains=setup.n_chains, n_iterations=setup.n_iterations,
                        burn_in=setup.burn_in, thin=setup.thin, master_seed=seed)
    draws = run_fit(sim.dataset, spec, cfg)
    est = {s.name: (s.mean, s.sd, s.psrf) for s in summarize_draws(draws, sim.dataset)}
    crit = {}
    if setup.criteria:
        rep = criteria_report(draws, sim.dataset, partition).to_dict()
        crit = {k: rep[k] for k in ("dic", "p_d", "lpml", "looic", "aic", "bic")}
    return ReplicateFit(est, crit)


def replicate_seed(master_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(rep),))


def _run_replicate(args):
    scenario, setups, rep, fitter = args
    ss = replicate_seed(scenario.seed, rep)
    data_ss, fit_ss = ss.spawn(2)
    records = []
    try:
        sim = generate_dataset(scenario, np.random.default_rng(data_ss))
    except Exception as exc:  # recorded, the study continues
        return [dict(rep=rep, method=s.label, error=f"generation: {exc}") for s in setups]
    fit_seed = int(fit_ss.generate_state(1)[0])
    for setup in setups:
        J = setup.J if setup.J is not None else max(scenario.J, 1)
        t0 = time.perf_counter()
        try:
            fit = fitter(sim, scenario, setup, fit_seed)
            records.append(dict(rep=rep, method=setup.label, J=J, error=None,
                                truth=truth_for(scenario, sim, J),
                                estimates=fit.estimates, criteria=fit.criteria,
                                seconds=time.perf_counter() - t0,
                                censored=float(np.mean(sim.dataset.status == 0)),
                                cured=float(np.mean(~sim.uncured))))
        except Exception as exc:
            records.append(dict(rep=rep, method=setup.label, J=J, error=str(exc)))
    return records


@dataclass
class StudyResult:
    scenario: ScenarioSpec
    setups: list
    records: list = field(default_factory=list)

    def ok_records(self, method: str) -> list:
        return [r for r in self.records if r["method"] == method and r.get("error") is None]

    def failures(self) -> list:
        return [r for r in self.records if r.get("error") is not None]

    def parameter_table(self) -> list:
        """One row per method x parameter: average estimate, MAE, average SD."""
        rows = []
        for setup in self.setups:
            recs = self.ok_records(setup.label)
            if not recs:
                continue
            names = list(recs[0]["estimates"])
            for name in names:
                means = np.array([r["estimates"][name][0] for r in recs])
                sds = np.array([r["estimates"][name][1] for r in recs])
                psrfs = np.array([r["estimates"][name][2] for r in recs])
                truths = [r["truth"].get(name) for r in recs]
                has_truth = all(t is not None for t in truths)
                rows.append(dict(
                    scenario=self.scenario.name, n=self.scenario.n, method=setup.label,
                    J=recs[0]["J"], parameter=name,
                    true=float(np.mean(truths)) if has_truth else float("nan"),
                    mean=float(means.mean()),
                    mae=float(np.mean(np.abs(means - np.array(truths)))) if has_truth
                    else float("nan"),
                    sd=float(sds.mean()),
                    psrf_ok=float(np.mean(psrfs < PSRF_THRESHOLD)),
                    replicates=len(recs),
                ))
        return rows

    def criteria_table(self) -> list:
        """Average model-comparison criteria per method (one row per J)."""
        rows = []
        for setup in self.setups:
            recs = [r for r in self.ok_records(setup.label) if r["criteria"]]
            if not recs:
                continue
            row = dict(scenario=self.scenario.name, n=self.scenario.n, method=setup.label,
                       J=recs[0]["J"], replicates=len(recs))
            for key in recs[0]["criteria"]:
                row[key] = float(np.mean([r["criteria"][key] for r in recs]))
            rows.append(row)
        return rows

    def converged_fraction(self, method: str, threshold: float = PSRF_THRESHOLD) -> float:
        """Share of replicates where every parameter has PSRF below ``threshold``."""
        recs = self.ok_records(method)
        if not recs:
            return float("nan")
        good = [all(v[2] < threshold for v in r["estimates"].values()) for r in recs]
        return float(np.mean(good))

    def manifest(self) -> dict:
        return dict(scenario=self.scenario.to_dict(),
                    setups=[asdict(s) for s in self.setups],
                    replicate_seeds=dict(master=self.scenario.seed,
                                         spawn_keys=sorted({r["rep"] for r in self.records})),
                    failures=[dict(rep=r["rep"], method=r["method"], error=r["error"])
                              for r in self.failures()])


def run_study(scenario, setups: Sequence[FitSetup], reps: Optional[int] = None,
              fitter: Callable = mcmc_fitter, n_jobs: int = 1,
              progress: Optional[Callable[[int, int], None]] = None) -> StudyResult:
    """Generate -> fit -> summarize over replicates.

    Replicate r uses the seed stream spawned from (scenario.seed, r), so any
    replicate can be replayed alone. Failures are recorded, not raised.
    """
    scenario = get_scenario(scenario)
    setups = list(setups)
    labels = [s.label for s in setups]
    if len(set(labels)) != len(labels):
        raise ValueError("fit setups need distinct labels")
    reps = scenario.replicates if reps is None else reps
    jobs = [(scenario, setups, r, fitter) for r in range(reps)]
    result = StudyResult(scenario, setups)
    if n_jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            for done, recs in enumerate(ex.map(_run_replicate, jobs), 1):
                result.records.extend(recs)
                if progress:
                    progress(done, reps)
    else:
        for done, job in enumerate(jobs, 1):
            result.records.extend(_run_replicate(job))
            if progress:
                progress(done, reps)
    return result


def j_sweep_setups(base: FitSetup, grid: Sequence[int] = SCENARIO4_J_GRID) -> list:
    """Copies of ``base`` for every J in ``grid``, with criteria switched on."""
    return [replace(base, label=f"{base.label}_J{J}", J=J, criteria=True) for J in grid]
