"""Mixture cure model with a piecewise-exponential baseline hazard.

Incidence is logistic in ``z`` (first column is the intercept), latency is
proportional hazards in ``x``. With a gamma frailty of mean one and
precision ``theta`` the latency survival is the Laplace-transform form
``(1 + e^{x'beta} H0(t) / theta) ** -theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels

FAMILIES = ("smcm", "smcfm")
PRIOR_FAMILIES = ("lasso", "normal")


class DataError(ValueError):
    """Invalid survival data or covariate layout."""


def _as_matrix(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((n, 0))
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError("covariates must be a matrix")
    return a


@dataclass
class SurvivalDataset:
    times: np.ndarray
    status: np.ndarray
    x: np.ndarray
    z: np.ndarray
    x_names: Optional[list] = None
    z_names: Optional[list] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.status = np.asarray(self.status).ravel()
        n = self.times.shape[0]
        if n < 1:
            raise DataError("dataset needs at least one observation")
        self.x = _as_matrix(self.x, n)
        self.z = _as_matrix(self.z, n)
        if self.status.shape[0] != n or self.x.shape[0] != n or self.z.shape[0] != n:
            raise DataError("times, status, x and z must have the same number of rows")
        if not np.all(np.isfinite(self.times)) or np.any(self.times <= 0):
            raise DataError("all times must be finite and strictly positive")
        if not np.all(np.isin(self.status, (0, 1))):
            raise DataError("status must be 0 (censored) or 1 (event)")
        self.status = self.status.astype(np.int64)
        if self.z.shape[1] < 1 or not np.all(self.z[:, 0] == 1.0):
            raise DataError("first column of z must be the all-ones intercept")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.z))):
            raise DataError("covariates must be finite")
        if self.x_names is None:
            self.x_names = [f"x{k + 1}" for k in range(self.p2)]
        if self.z_names is None:
            self.z_names = ["intercept"] + [f"z{k}" for k in range(1, self.z.shape[1])]

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p1(self) -> int:
        """Number of incidence covariates, excluding the intercept."""
        return self.z.shape[1] - 1

    @property
    def p2(self) -> int:
        return self.x.shape[1]

    def subset(self, mask) -> "SurvivalDataset":
        return SurvivalDataset(self.times[mask], self.status[mask], self.x[mask],
                               self.z[mask], list(self.x_names), list(self.z_names))


@dataclass
class TimePartition:
    """Cut points ``0 = s_1 < ... < s_{J+1}``; intervals are ``(s_j, s_{j+1}]``."""

    cut_points: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cut_points, dtype=float).ravel()
        if c.shape[0] < 2 or c[0] != 0.0 or np.any(np.diff(c) <= 0):
            raise DataError("cut points must start at 0 and be strictly increasing")
        self.cut_points = c

    @property
    def J(self) -> int:
        return self.cut_points.shape[0] - 1

    @property
    def end(self) -> float:
        return float(self.cut_points[-1])

    def check_covers(self, times) -> None:
        if np.max(times) >= self.end:
            raise DataError(f"partition end {self.end} must exceed the largest time {np.max(times)}")

    def interval_index(self, t) -> np.ndarray:
        """0-based index j with s_j < t <= s_{j+1}; t = 0 maps to the first interval."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.end):
            raise DataError(f"time outside the partition range [0, {self.end}]")
        j = np.searchsorted(self.cut_points, t, side="left") - 1
        return np.maximum(j, 0)

    def exposure(self, t) -> np.ndarray:
        """Time spent in each interval up to ``t``: shape (len(t), J)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = self.cut_points[:-1]
        width = np.diff(self.cut_points)
        return np.clip(t[:, None] - lo[None, :], 0.0, width[None, :])

    @classmethod
    def from_quantiles(cls, times, status, J: int, end_factor: float = 1.001) -> "TimePartition":
        """Interior cuts at the j/J quantiles of the event times; end past max(times)."""
        if J < 1:
            raise DataError("J must be >= 1")
        times = np.asarray(times, dtype=float)
        status = np.asarray(status)
        end = end_factor * float(np.max(times))
        events = times[status == 1]
        if J == 1 or events.size == 0:
            interior = np.quantile(times, np.arange(1, J) / J) if J > 1 else np.array([])
        else:
            interior = np.quantile(events, np.arange(1, J) / J)
        cuts = np.unique(np.concatenate([[0.0], interior, [end]]))
        cuts = cuts[(cuts >= 0.0) & (cuts <= end)]
        if cuts.shape[0] - 1 != J:
            raise DataError(f"could not build {J} distinct intervals from the event times")
        return cls(cuts)

    @classmethod
    def with_interior(cls, interior: Sequence[float], times, end_factor: float = 1.001):
        """Given interior cut points, close the partition just past max(times)."""
        end = end_factor * float(np.max(times))
        interior = [c for c in interior if 0.0 < c < end]
        return cls(np.concatenate([[0.0], interior, [end]]))


@dataclass
class CureParameters:
    b: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    theta: Optional[float] = None

    def __post_init__(self):
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)) if np.size(self.beta) else np.zeros(0)
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if self.theta is not None:
            self.theta = float(self.theta)

    @property
    def frailty(self) -> bool:
        return self.theta is not None

    def copy(self) -> "CureParameters":
        return CureParameters(self.b.copy(), self.beta.copy(), self.lam.copy(), self.theta)

    def is_valid(self) -> bool:
        ok = np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.beta))
        ok = ok and np.all(self.lam > 0) and np.all(np.isfinite(self.lam))
        if self.theta is not None:
            ok = ok and np.isfinite(self.theta) and self.theta > 0
        return bool(ok)


@dataclass
class Hyperparameters:
    a: float = 0.1
    b_rate: float = 0.1
    r1: float = 1.0
    delta1: float = 0.1
    r2: float = 1.0
    delta2: float = 0.1
    c: float = 0.01
    d: float = 0.01
    sigma_b_sq: float = 100.0
    sigma_beta_sq: float = 100.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"hyperparameter {name} must be strictly positive")


@dataclass
class ModelSpec:
    """Model family, prior family, partition and hyperparameters."""

    family: str = "smcm"
    prior: str = "lasso"
    partition: Optional[TimePartition] = None
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.prior not in PRIOR_FAMILIES:
            raise ValueError(f"prior must be one of {PRIOR_FAMILIES}")

    @property
    def frailty(self) -> bool:
        return self.family == "smcfm"


# --------------------------------------------------------------------------
# model functions
# --------------------------------------------------------------------------


def _check_lambda(partition: TimePartition, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (partition.J,):
        raise DataError(f"lambda must have length J={partition.J}")
    return lam


def incidence_probability(z_row, b) -> float:
    """Logistic uncured probability pi(z) = e^{z'b} / (1 + e^{z'b})."""
    z_row = np.asarray(z_row, dtype=float)
    b = np.asarray(b, dtype=float)
    if z_row.shape[-1] != b.shape[0]:
        raise DataError("z and b have different lengths")
    eta = np.clip(z_row @ b, -kernels.CLAMP, kernels.CLAMP)
    # exp(-logaddexp(0, -eta)) never overflows
    return np.exp(-np.logaddexp(0.0, -eta))


def baseline_hazard_at(t, partition: TimePartition, lam):
    lam = _check_lambda(partition, lam)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DataError("hazard is defined for t > 0")
    return lam[partition.interval_index(t_arr)]


def baseline_cumhaz_at(t, partition: TimePartition, lam):
    """H0(t) = sum over intervals of lambda_j times the time spent in interval j."""
    lam = _check_lambda(partition, lam)
    t_arr = np.asarray(t, dtype=float)
    partition.interval_index(t_arr)  # range check
    out = partition.exposure(t_arr.ravel()) @ lam
    return out.reshape(t_arr.shape) if t_arr.ndim else float(out[0])


def _log_latency_survival(cumhaz, xb, theta):
    a = cumhaz * np.exp(np.clip(xb, -kernels.CLAMP, kernels.CLAMP))
    if theta is None:
        return -a
    if theta <= 0:
        raise DataError("theta must be positive")
    return -theta * np.log1p(a / theta)


def latency_survival(t, x_row, beta, partition: TimePartition, lam, theta=None):
    """Survival of uncured subjects, plain PH or gamma-frailty marginal."""
    x_row = np.asarray(x_row, dtype=float)
    beta = np.asarray(beta, dtype=float)
    xb = x_row @ beta if beta.size else 0.0
    return np.exp(_log_latency_survival(baseline_cumhaz_at(t, partition, lam), xb, theta))


def population_survival(t, x_row, z_row, params: CureParameters, partition: TimePartition):
    pi = incidence_probability(z_row, params.b)
    s = latency_survival(t, x_row, params.beta, partition, params.lam, params.theta)
    return 1.0 - pi + pi * s


def population_density(t, x_row, z_row, params: CureParameters, partition: TimePartition):
    """f_pop(t) = -dS_pop/dt."""
    pi = incidence_probability(z_row, params.b)
    x_row = np.asarray(x_row, dtype=float)
    xb = x_row @ params.beta if params.beta.size else 0.0
    h0 = baseline_hazard_at(t, partition, params.lam)
    H0 = baseline_cumhaz_at(t, partition, params.lam)
    a = H0 * np.exp(xb)
    if params.theta is None:
        g = np.exp(-a)
    else:
        g = np.exp(-(params.theta + 1.0) * np.log1p(a / params.theta))
    return pi * h0 * np.exp(xb) * g


class LogLikelihood(NamedTuple):
    total: float
    contributions: np.ndarray
    clamped: int


class LikelihoodCache:
    """Per-subject quantities reused by the likelihood kernels."""

    def __init__(self, dataset: SurvivalDataset, partition: TimePartition):
        if not (np.all(np.isfinite(dataset.x)) and np.all(np.isfinite(dataset.z))):
            raise DataError("covariates must be finite")
        partition.check_covers(dataset.times)
        self.status = np.ascontiguousarray(dataset.status, dtype=np.int64)
        self.z = np.ascontiguousarray(dataset.z)
        self.x = np.ascontiguousarray(dataset.x)
        # column-major copies so coordinate columns are contiguous
        self.zcols = np.ascontiguousarray(dataset.z.T)
        self.xcols = np.ascontiguousarray(dataset.x.T)
        self.exposure = partition.exposure(dataset.times)
        self.ecols = np.ascontiguousarray(self.exposure.T)
        self.jidx = np.ascontiguousarray(partition.interval_index(dataset.times), dtype=np.int64)
        self.n = dataset.n
        self._zero = np.zeros(self.n)

    def linear_predictors(self, params: CureParameters):
        zb = self.z @ params.b
        xb = self.x @ params.beta if params.beta.size else np.zeros(self.n)
        H0 = self.exposure @ params.lam
        return zb, xb, H0

    def contributions(self, params: CureParameters):
        zb, xb, H0 = self.linear_predictors(params)
        out = np.empty(self.n)
        theta = params.theta if params.theta is not None else 1.0
        clamped = kernels.loglik_obs(zb, xb, H0, self.jidx, np.log(params.lam), theta,
                                     params.theta is not None, self.status, out)
        return out, int(clamped)


def log_likelihood(dataset: SurvivalDataset, params: CureParameters,
                   partition: TimePartition, family: str = "smcm") -> LogLikelihood:
    """Observed-data log-likelihood and its per-subject contributions.

    ``family`` must agree with the presence of ``params.theta``
    ("smcfm" needs a theta, "smcm" must not have one).
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    if (family == "smcfm") != (params.theta is not None):
        raise ValueError("theta must be given exactly when family is 'smcfm'")
    if params.b.shape[0] != dataset.z.shape[1] or params.beta.shape[0] != dataset.p2:
        raise DataError("coefficient lengths do not match the covariates")
    _check_lambda(partition, params.lam)
    cache = LikelihoodCache(dataset, partition)
    contrib, clamped = cache.contributions(params)
    return LogLikelihood(float(np.sum(contrib)), contrib, clamped)
