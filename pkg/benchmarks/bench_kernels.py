"""Time the numba and numpy likelihood kernels side by side.

    python benchmarks/bench_kernels.py --n 1000 --repeat 2000

Also times a short end-to-end fit under each backend (the backend is
fixed at import, so each fit runs in a fresh interpreter).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from smcure import kernels
from smcure._accel import HAS_NUMBA

FIT_SNIPPET = """
import time, numpy as np
from smcure.datagen import SCENARIOS, generate_dataset
from smcure.model import ModelSpec, TimePartition
from smcure.sampler import SamplerConfig, run_fit
sim = generate_dataset(SCENARIOS[1].with_(n={n}), np.random.default_rng(0))
part = TimePartition.with_interior((), sim.dataset.times)
spec = ModelSpec("smcm", "lasso", part)
run_fit(sim.dataset, spec, SamplerConfig(n_chains=1, n_iterations=20, burn_in=0, thin=1))
t = time.perf_counter()
run_fit(sim.dataset, spec, SamplerConfig(n_chains=1, n_iterations={iters}, burn_in=0, thin=1))
print(time.perf_counter() - t)
"""


def inputs(n, J=3, seed=0):
    rng = np.random.default_rng(seed)
    zb, xb = rng.normal(0, 1, n), rng.normal(0, 1, n)
    H0 = rng.exponential(1.0, n)
    jidx = rng.integers(0, J, n).astype(np.int64)
    loglam = np.log(rng.gamma(2, 0.5, J))
    status = (rng.random(n) < 0.6).astype(np.int64)
    zcol, xcol = rng.normal(size=(2, n))
    ecol = np.abs(rng.normal(size=n))
    return zb, zcol, xb, xcol, H0, ecol, jidx, loglam, status


def time_call(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat


def bench_kernels(n, repeat, frailty):
    zb, zcol, xb, xcol, H0, ecol, jidx, loglam, status = inputs(n)
    theta = 2.0
    out = np.empty(n)
    grid = np.linspace(0, 3, 100)
    cases = {
        "loglik_sum": lambda impl: lambda: impl(zb, zcol, 0.1, xb, xcol, 0.0, H0, ecol, 0.0,
                                                jidx, loglam, theta, frailty, status),
        "loglik_obs": lambda impl: lambda: impl(zb, xb, H0, jidx, loglam, theta, frailty,
                                                status, out),
        "marginal_survival": lambda impl: lambda: impl(grid, xb, zb, theta, frailty),
    }
    impls = {"loglik_sum": (kernels.np_loglik_sum, kernels.nb_loglik_sum),
             "loglik_obs": (kernels.np_loglik_obs, kernels.nb_loglik_obs),
             "marginal_survival": (kernels.np_marginal_survival, kernels.nb_marginal_survival)}
    rows = []
    for name, make in cases.items():
        np_impl, nb_impl = impls[name]
        reps = max(1, repeat // 20) if name == "marginal_survival" else repeat
        t_np = time_call(make(np_impl), reps)
        t_nb = time_call(make(nb_impl), reps) if HAS_NUMBA else float("nan")
        rows.append((name, t_np, t_nb))
    return rows


def bench_fit(n, iters):
    code = FIT_SNIPPET.format(n=n, iters=iters)
    times = {}
    for label, flag in (("numba", ""), ("numpy", "1")):
        if label == "numba" and not HAS_NUMBA:
            continue
        env = dict(os.environ, SMCURE_DISABLE_NUMBA=flag)
        if not flag:
            env.pop("SMCURE_DISABLE_NUMBA")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        times[label] = float(out.stdout.strip().splitlines()[-1])
    return times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000, help="observations")
    ap.add_argument("--repeat", type=int, default=2000, help="calls per timing")
    ap.add_argument("--fit-iterations", type=int, default=500,
                    help="sweeps for the end-to-end fit (0 skips it)")
    args = ap.parse_args()

    print(f"n = {args.n}, numba available: {HAS_NUMBA}")
    print(f"{'kernel':<28s}{'numpy (us)':>12s}{'numba (us)':>12s}{'speed-up':>10s}")
    for frailty in (False, True):
        for name, t_np, t_nb in bench_kernels(args.n, args.repeat, frailty):
            label = name + (" [frailty]" if frailty else "")
            print(f"{label:<28s}{t_np * 1e6:12.1f}{t_nb * 1e6:12.1f}{t_np / t_nb:9.1f}x")
    if args.fit_iterations:
        times = bench_fit(args.n, args.fit_iterations)
        print(f"\nfit, 1 chain x {args.fit_iterations} sweeps:")
        for label, secs in times.items():
            print(f"  {label:<6s} {secs:8.2f} s")


if __name__ == "__main__":
    main()
