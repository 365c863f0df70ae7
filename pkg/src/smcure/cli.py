"""Command-line entry point: ``smcure fit | compare | simulate | km``."""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .criteria import criteria_report
from .datagen import (SCENARIO4_J_GRID, SCENARIOS, FitSetup, get_scenario, j_sweep_setups,
                      run_study)
from .diagnostics import summarize_draws, uncured_rate_summary
from .io import canonical_json, draws_table, ingest_csv, rows_csv, write_atomic
from .model import Hyperparameters, ModelSpec, TimePartition
from .sampler import SamplerConfig, run_fit
from .survcurves import curve_table, kaplan_meier

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

# real-data schedule: 5 chains x 60000, burn-in 10000, thin 50
FIT_DEFAULTS = dict(model="smcm", prior="lasso", J=1, cuts=None, chains=5, iterations=60000,
                    burn_in=10000, thin=50, seed=2024, init="default", jobs=1,
                    time_col="time", status_col="status", x_cols=None, z_cols=None,
                    categorical=None, min_time=None, time_divisor=None, drop_missing=False,
                    strata=None, grid_points=100, hyper=None, out="smcure_out")
SIM_DEFAULTS = dict(scenario=None, n=None, reps=2, models="smcm", prior="lasso", chains=3,
                    iterations=15000, burn_in=2500, thin=25, seed=None, jobs=1,
                    j_sweep=False, J=None, out="smcure_study")
HYPER_FIELDS = {"a", "b_rate", "r1", "delta1", "r2", "delta2", "c", "d", "sigma_b_sq",
                "sigma_beta_sq"}
LOWER_IS_BETTER = ("dic", "looic", "aic", "bic")


class UsageError(ValueError):
    pass


def load_config(path) -> dict:
    """Flat mapping from a JSON or TOML file (dashes in keys become underscores)."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a flat mapping")
    return {k.replace("-", "_"): v for k, v in raw.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = load_config(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    return cfg


def _int_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _hyper(spec) -> Hyperparameters:
    if not spec:
        return Hyperparameters()
    if isinstance(spec, dict):
        items = spec
    else:
        if isinstance(spec, str):
            spec = [spec]
        items = {}
        for entry in spec:
            for part in str(entry).split(","):
                if "=" not in part:
                    raise UsageError(f"hyperparameter override must be key=value: {part!r}")
                k, v = part.split("=", 1)
                items[k.strip()] = float(v)
    unknown = set(items) - HYPER_FIELDS
    if unknown:
        raise UsageError(f"unknown hyperparameters: {sorted(unknown)}")
    return Hyperparameters(**{k: float(v) for k, v in items.items()})


def _load_data(cfg: dict, need_covariates: bool = True):
    if not cfg.get("data"):
        raise UsageError("--data is required")
    if not Path(cfg["data"]).exists():
        raise UsageError(f"data file not found: {cfg['data']}")
    extra = [cfg["strata"]] if cfg.get("strata") else []
    ds, cols = ingest_csv(cfg["data"], cfg["time_col"], cfg["status_col"], cfg["x_cols"],
                          cfg["z_cols"], cfg["categorical"], cfg["min_time"],
                          cfg["time_divisor"], cfg["drop_missing"], extra_cols=extra)
    strata = cols[cfg["strata"]] if cfg.get("strata") else None
    return ds, strata


def _partition(ds, cfg, J=None) -> TimePartition:
    if cfg.get("cuts") and J is None:
        return TimePartition.with_interior(_float_list(cfg["cuts"]), ds.times)
    J = int(cfg["J"] if J is None else J)
    if J < 1:
        raise UsageError("J must be >= 1")
    return TimePartition.from_quantiles(ds.times, ds.status, J)


def _sampler(cfg) -> SamplerConfig:
    return SamplerConfig(n_chains=int(cfg["chains"]), n_iterations=int(cfg["iterations"]),
                         burn_in=int(cfg["burn_in"]), thin=int(cfg["thin"]),
                         master_seed=int(cfg["seed"]), init=cfg.get("init", "default"))


def _settings(cfg) -> dict:
    return {k: v for k, v in sorted(cfg.items())}


def _manifest(command: str, cfg: dict, extra: dict) -> dict:
    return dict(command=command, version=__version__, backend=kernels.BACKEND,
                argv=sys.argv[1:], config=_settings(cfg), **extra)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_fit(cfg: dict) -> int:
    ds, strata = _load_data(cfg)
    partition = _partition(ds, cfg)
    spec = ModelSpec(family=cfg["model"], prior=cfg["prior"], partition=partition,
                     hyper=_hyper(cfg["hyper"]))
    sampler = _sampler(cfg)
    t0 = time.perf_counter()
    draws = run_fit(ds, spec, sampler, n_jobs=int(cfg["jobs"]))
    elapsed = time.perf_counter() - t0
    summaries = summarize_draws(draws, ds)
    summaries.append(uncured_rate_summary(draws, ds, cure=True))
    report = criteria_report(draws, ds, partition)
    grid = np.linspace(0.0, float(ds.times.max()), int(cfg["grid_points"]))
    curves = curve_table(draws, ds, partition, grid, strata)
    out = Path(cfg["out"])
    write_atomic(out / "draws.csv", draws_table(draws))
    summary = dict(
        parameters=[s.to_dict() for s in summaries],
        criteria=report.to_dict(),
        acceptance={k: v.tolist() for k, v in draws.acceptance_rates().items()},
        settings=_settings(cfg),
        seed=int(cfg["seed"]),
        cut_points=partition.cut_points.tolist(),
        n=ds.n, x_names=ds.x_names, z_names=ds.z_names,
        n_chains=draws.n_chains, n_draws=draws.n_draws,
    )
    write_atomic(out / "summary.json", canonical_json(summary))
    write_atomic(out / "curves.csv", rows_csv(curves))
    write_atomic(out / "manifest.json", canonical_json(_manifest(
        "fit", cfg, dict(seeds=[list(s) for s in draws.seeds], seconds=round(elapsed, 3)))))
    for s in summaries:
        print(f"{s.name:>16s}  mean {s.mean: .4f}  sd {s.sd:.4f}  "
              f"HPD [{s.hpd_low: .4f}, {s.hpd_high: .4f}]  psrf {s.psrf:.3f}")
    print(f"DIC {report.dic:.4f}  LPML {report.lpml:.4f}  LOOIC {report.looic:.4f}  "
          f"BIC {report.bic:.4f}")
    return 0


def mark_best(rows: list) -> list:
    """Add best_<criterion> flags (lowest DIC/LOOIC/AIC/BIC, highest LPML)."""
    for key in LOWER_IS_BETTER + ("lpml",):
        vals = [r.get(key) for r in rows]
        finite = [v for v in vals if isinstance(v, float) and math.isfinite(v)]
        target = None
        if finite:
            target = max(finite) if key == "lpml" else min(finite)
        for r, v in zip(rows, vals):
            r[f"best_{key}"] = int(target is not None and v == target)
    return rows


def cmd_compare(cfg: dict) -> int:
    ds, _ = _load_data(cfg)
    sampler = _sampler(cfg)
    rows = []
    for family in [m.strip() for m in str(cfg["model"]).split(",") if m.strip()]:
        for J in _int_list(cfg["J"]):
            row = dict(model=family, J=J)
            try:
                partition = _partition(ds, cfg, J)
                spec = ModelSpec(family=family, prior=cfg["prior"], partition=partition,
                                 hyper=_hyper(cfg["hyper"]))
                draws = run_fit(ds, spec, sampler, n_jobs=int(cfg["jobs"]))
                rep = criteria_report(draws, ds, partition).to_dict()
                row.update({k: rep[k] for k in ("bic", "aic", "dic", "p_d", "lpml", "looic")})
                row["error"] = ""
            except Exception as exc:  # recorded as NA, the sweep continues
                row.update({k: float("nan") for k in ("bic", "aic", "dic", "p_d", "lpml",
                                                      "looic")})
                row["error"] = str(exc)
            rows.append(row)
    mark_best(rows)
    out = Path(cfg["out"])
    write_atomic(out / "criteria.csv", rows_csv(rows))
    write_atomic(out / "manifest.json", canonical_json(_manifest("compare", cfg, {})))
    for r in rows:
        print(f"{r['model']:>6s} J={r['J']:<3d} BIC {r['bic']:.3f}  DIC {r['dic']:.3f}  "
              f"LPML {r['lpml']:.3f}  LOOIC {r['looic']:.3f}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    if cfg["scenario"] is None:
        raise UsageError("--scenario is required")
    key = int(cfg["scenario"])
    if key not in SCENARIOS:
        raise UsageError(f"unknown scenario {cfg['scenario']!r}; choose from {sorted(SCENARIOS)}")
    changes = {}
    if cfg["seed"] is not None:
        changes["seed"] = int(cfg["seed"])
    scenario = get_scenario(key, cfg["n"], **changes)
    setups = []
    for family in [m.strip() for m in str(cfg["models"]).split(",") if m.strip()]:
        base = FitSetup(label=family.upper(), family=family, prior=cfg["prior"],
                        J=int(cfg["J"]) if cfg["J"] else None, n_chains=int(cfg["chains"]),
                        n_iterations=int(cfg["iterations"]), burn_in=int(cfg["burn_in"]),
                        thin=int(cfg["thin"]))
        if cfg["j_sweep"] or (scenario.latency == "weibull" and not cfg["J"]):
            setups += j_sweep_setups(base, SCENARIO4_J_GRID)
        else:
            setups.append(base)

    def progress(done, total):
        print(f"replicate {done}/{total}", file=sys.stderr)

    result = run_study(scenario, setups, int(cfg["reps"]), n_jobs=int(cfg["jobs"]),
                       progress=progress)
    out = Path(cfg["out"])
    table = result.parameter_table()
    write_atomic(out / "study.csv", rows_csv(table))
    crit = result.criteria_table()
    if crit:
        write_atomic(out / "study_criteria.csv", rows_csv(crit))
    write_atomic(out / "manifest.json", canonical_json(_manifest("simulate", cfg,
                                                                 result.manifest())))
    for r in table:
        print(f"{r['method']:>10s} {r['parameter']:>9s}  true {r['true']: .4f}  "
              f"mean {r['mean']: .4f}  MAE {r['mae']:.4f}  SD {r['sd']:.4f}")
    if result.failures():
        print(f"{len(result.failures())} replicate fits failed; see manifest.json",
              file=sys.stderr)
    return 0


def cmd_km(cfg: dict) -> int:
    ds, strata = _load_data(cfg)
    rows = []
    groups = {"all": kaplan_meier(ds.times, ds.status)}
    if strata is not None:
        groups.update({str(k): v for k, v in kaplan_meier(ds.times, ds.status, strata).items()})
    for label, curve in groups.items():
        for t, s in zip(curve.times, curve.values):
            rows.append(dict(stratum=label, t=float(t), survival=float(s)))
    write_atomic(Path(cfg["out"]) / "km.csv", rows_csv(rows, ["stratum", "t", "survival"]))
    for r in rows:
        print(f"{r['stratum']}\t{r['t']:g}\t{r['survival']:.6f}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="input CSV with a header row")
    g.add_argument("--time-col", dest="time_col")
    g.add_argument("--status-col", dest="status_col")
    g.add_argument("--x-cols", dest="x_cols", help="comma-separated latency covariates")
    g.add_argument("--z-cols", dest="z_cols",
                   help="comma-separated incidence covariates (default: the x columns)")
    g.add_argument("--categorical", help="comma-separated columns to dummy-code")
    g.add_argument("--min-time", dest="min_time", type=float,
                   help="drop rows with time below this value (raw units)")
    g.add_argument("--time-divisor", dest="time_divisor", type=float,
                   help="divide times by this value, e.g. 365.25 for days to years")
    g.add_argument("--drop-missing", dest="drop_missing", action="store_true", default=None)
    g.add_argument("--strata", help="column used to stratify curves")


def _model_args(p, j_help="number of PE intervals"):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="smcm or smcfm (comma-separated for compare)")
    g.add_argument("--prior", choices=("lasso", "normal"))
    g.add_argument("--J", dest="J", help=j_help)
    g.add_argument("--hyper", action="append", help="hyperparameter override key=value")


def _sampler_args(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--burn-in", dest="burn_in", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcure",
                                     description="Bayesian mixture cure models with a "
                                                 "piecewise-exponential baseline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one model and write draws, summary and curves")
    fit.add_argument("--config", help="JSON or TOML file with default settings")
    _data_args(fit)
    _model_args(fit)
    fit.add_argument("--cuts", help="explicit interior cut points (comma-separated)")
    _sampler_args(fit)
    fit.add_argument("--init", choices=("default", "fixed", "prior"))
    fit.add_argument("--grid-points", dest="grid_points", type=int)
    fit.add_argument("--out")

    cmp_ = sub.add_parser("compare", help="criteria table over J values and families")
    cmp_.add_argument("--config")
    _data_args(cmp_)
    _model_args(cmp_, "comma-separated J values")
    _sampler_args(cmp_)
    cmp_.add_argument("--out")

    sim = sub.add_parser("simulate", help="replicate study on a built-in scenario")
    sim.add_argument("--config")
    sim.add_argument("--scenario", choices=[str(k) for k in SCENARIOS])
    sim.add_argument("--n", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--models", help="comma-separated families, e.g. smcm,smcfm")
    sim.add_argument("--prior", choices=("lasso", "normal"))
    sim.add_argument("--J", dest="J", type=int, help="fitted J (default: the generating J)")
    sim.add_argument("--j-sweep", dest="j_sweep", action="store_true", default=None,
                     help="fit every J in 1,2,3,4,5,7,10 and emit criteria rows")
    _sampler_args(sim)
    sim.add_argument("--out")

    km = sub.add_parser("km", help="Kaplan-Meier curves, optionally stratified")
    km.add_argument("--config")
    _data_args(km)
    km.add_argument("--out")
    return parser


COMMANDS = {
    "fit": (cmd_fit, FIT_DEFAULTS),
    "compare": (cmd_compare, dict(FIT_DEFAULTS, J="1,2,3,4")),
    "simulate": (cmd_simulate, SIM_DEFAULTS),
    "km": (cmd_km, dict(FIT_DEFAULTS, out="smcure_km")),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, defaults = COMMANDS[args.command]
    defaults = dict(defaults, data=None) if args.command != "simulate" else defaults
    try:
        cfg = resolve(args, defaults)
        return func(cfg)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
