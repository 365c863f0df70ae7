"""Convergence diagnostics and posterior summaries."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import SurvivalDataset
from .sampler import PosteriorDraws


@dataclass
class ParameterSummary:
    name: str
    mean: float
    sd: float
    hpd_low: float
    hpd_high: float
    psrf: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def psrf(chains, split: bool = False) -> float:
    """Gelman-Rubin potential scale reduction factor.

    ``chains`` is (m, n): m chains of n draws. With ``split=True`` every
    chain is halved first (split-R-hat). The value is floored at 1.
    """
    x = np.asarray(chains, dtype=float)
    if split:
        half = x.shape[1] // 2
        x = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    m, n = x.shape
    if m < 2 or n < 10:
        raise ValueError("psrf needs at least 2 chains of at least 10 draws")
    chain_means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * chain_means.var(ddof=1)
    scale = max(np.max(np.abs(x)), 1.0)
    if W <= (1e-14 * scale) ** 2:
        return 1.0 if B <= (1e-14 * scale) ** 2 * n else math.inf
    var_hat = (n - 1) / n * W + B / n
    # the pooled estimate dips below W when chains agree better than chance
    return max(1.0, float(math.sqrt(var_hat / W)))


def hpd_interval(draws, level: float = 0.95):
    """Shortest window containing ceil(level * n) of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.shape[0]
    if n < 20:
        raise ValueError("hpd_interval needs at least 20 draws")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    k = int(math.ceil(level * n))
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def summarize(name: str, chains, level: float = 0.95) -> ParameterSummary:
    """Mean, SD, HPD and PSRF of one scalar parameter given (chains, draws)."""
    c = np.atleast_2d(np.asarray(chains, dtype=float))
    flat = c.ravel()
    if np.ptp(flat) == 0.0:
        # avoid rounding noise from summing identical values
        mean, sd = float(flat[0]), 0.0
    else:
        mean, sd = float(flat.mean()), float(flat.std(ddof=1))
    if flat.size >= 20:
        lo, hi = hpd_interval(flat, level)
    else:
        lo, hi = float(flat.min()), float(flat.max())
    degenerate = not hi > lo
    r = psrf(c) if c.shape[0] >= 2 and c.shape[1] >= 10 else float("nan")
    return ParameterSummary(name, mean, sd, lo, hi, r, degenerate)


def uncured_rate_draws(draws: PosteriorDraws, dataset: SurvivalDataset) -> np.ndarray:
    """Subject-averaged pi(z_i; b) for every draw: shape (chains, draws)."""
    eta = np.einsum("cdk,nk->cdn", draws.b, dataset.z)
    return (1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))).mean(axis=2)


def uncured_rate_summary(draws: PosteriorDraws, dataset: SurvivalDataset,
                         cure: bool = False, level: float = 0.95) -> ParameterSummary:
    """Summary of the average uncured probability, or of 1 - it when ``cure``."""
    pbar = uncured_rate_draws(draws, dataset)
    if cure:
        return summarize("cure_rate", 1.0 - pbar, level)
    return summarize("pi_bar", pbar, level)


def summarize_draws(draws: PosteriorDraws, dataset: SurvivalDataset = None,
                    level: float = 0.95) -> list:
    """One ParameterSummary per likelihood parameter, plus pi_bar when data is given."""
    arr = draws.parameter_array()
    out = [summarize(name, arr[:, :, k], level) for k, name in enumerate(draws.parameter_names())]
    if dataset is not None:
        out.append(uncured_rate_summary(draws, dataset, level=level))
    return out
