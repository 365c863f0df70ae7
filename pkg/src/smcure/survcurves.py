"""Kaplan-Meier curves and posterior population-survival curves."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .diagnostics import hpd_interval
from .model import DataError, SurvivalDataset, TimePartition
from .sampler import PosteriorDraws


@dataclass
class StepCurve:
    """Right-continuous step function equal to 1 before the first jump."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if np.any(np.diff(self.values) > 0) or np.any(self.values > 1) or np.any(self.values < 0):
            raise ValueError("values must be nonincreasing within [0, 1]")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.values.size == 0:
            vals = np.ones_like(t)
        else:
            idx = np.searchsorted(self.times, t, side="right") - 1
            vals = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 1.0)
        return vals if vals.ndim else float(vals)


def kaplan_meier(times, status, strata=None):
    """Product-limit estimate; a dict of curves keyed by stratum when ``strata`` is given."""
    times = np.asarray(times, dtype=float).ravel()
    status = np.asarray(status).ravel()
    if times.shape != status.shape:
        raise DataError("times and status must have the same length")
    if strata is not None:
        strata = np.asarray(strata).ravel()
        if strata.shape != times.shape:
            raise DataError("strata must have one label per subject")
        return {s: kaplan_meier(times[strata == s], status[strata == s])
                for s in sorted(np.unique(strata).tolist())}
    if times.size == 0:
        raise DataError("cannot estimate a curve from an empty stratum")
    if not np.all(np.isin(status, (0, 1))):
        raise DataError("status must be 0 or 1")
    event_times = np.unique(times[status == 1])
    if event_times.size == 0:
        return StepCurve(np.zeros(0), np.zeros(0))
    sorted_t = np.sort(times)
    at_risk = sorted_t.size - np.searchsorted(sorted_t, event_times, side="left")
    deaths = np.array([np.count_nonzero((times == t) & (status == 1)) for t in event_times])
    return StepCurve(event_times, np.cumprod(1.0 - deaths / at_risk))


@dataclass
class CurveBand:
    grid: np.ndarray
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray
    per_draw: Optional[np.ndarray] = None


def survival_draws(draws: PosteriorDraws, dataset: SurvivalDataset,
                   partition: TimePartition, grid) -> np.ndarray:
    """Subject-averaged S_pop on ``grid`` for every pooled draw: (draws, len(grid))."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > partition.end):
        raise DataError(f"grid must lie in [0, {partition.end}]")
    expo = partition.exposure(grid)
    b = draws.b.reshape(-1, draws.b.shape[-1])
    beta = draws.beta.reshape(-1, draws.beta.shape[-1])
    lam = draws.lam.reshape(-1, draws.lam.shape[-1])
    theta = draws.theta.ravel() if draws.frailty else None
    out = np.empty((b.shape[0], grid.shape[0]))
    zero = np.zeros(dataset.n)
    for d in range(b.shape[0]):
        zb = dataset.z @ b[d]
        xb = dataset.x @ beta[d] if beta.shape[1] else zero
        H0 = np.ascontiguousarray(expo @ lam[d])
        th = float(theta[d]) if theta is not None else 1.0
        out[d] = kernels.marginal_survival(H0, xb, zb, th, theta is not None)
    return out


def posterior_survival_curve(draws: PosteriorDraws, dataset: SurvivalDataset,
                             partition: TimePartition, grid, level: float = 0.95,
                             keep_draws: bool = False) -> CurveBand:
    """Pointwise posterior mean and HPD band of the subject-averaged population survival.

    Pass a one-row dataset to evaluate at a fixed covariate profile.
    """
    curves = survival_draws(draws, dataset, partition, grid)
    mean = curves.mean(axis=0)
    if curves.shape[0] >= 20:
        band = np.array([hpd_interval(curves[:, g], level) for g in range(curves.shape[1])])
        low, high = band[:, 0], band[:, 1]
    else:
        low, high = curves.min(axis=0), curves.max(axis=0)
    return CurveBand(np.asarray(grid, dtype=float), mean, low, high,
                     curves if keep_draws else None)


def curve_table(draws: PosteriorDraws, dataset: SurvivalDataset, partition: TimePartition,
                grid, strata=None, level: float = 0.95) -> list:
    """Rows (stratum, t, km, post_mean, hpd_low, hpd_high), overall plus per stratum."""
    grid = np.asarray(grid, dtype=float)
    groups = [("all", np.ones(dataset.n, dtype=bool))]
    if strata is not None:
        strata = np.asarray(strata)
        groups += [(str(s), strata == s) for s in sorted(np.unique(strata).tolist())]
    rows = []
    for label, mask in groups:
        sub = dataset.subset(mask)
        km = kaplan_meier(sub.times, sub.status)
        band = posterior_survival_curve(draws, sub, partition, grid, level)
        for g, t in enumerate(grid):
            rows.append(dict(stratum=label, t=float(t), km=float(km(t)),
                             post_mean=float(band.mean[g]), hpd_low=float(band.low[g]),
                             hpd_high=float(band.high[g])))
    return rows
