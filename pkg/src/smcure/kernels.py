"""Hot likelihood kernels with a numba path and a pure-numpy path.

Every kernel works on cached per-subject quantities:

``zb``      incidence linear predictor z'b
``xb``      latency linear predictor x'beta
``H0``      baseline cumulative hazard at the observed time
``jidx``    index of the partition interval containing the observed time
``loglam``  log interval hazards

The sum kernels take an optional coordinate shift (``zstep * zcol``,
``xstep * xcol``, ``hstep * ecol``) so a Metropolis proposal can be scored
without materialising the shifted arrays.

Linear predictors are clamped to +/-``CLAMP`` and so is log(H0 e^{x'b}).
"""
import math

import numpy as np

from ._accel import USE_NUMBA, HAS_NUMBA, njit

CLAMP = 700.0


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------


def _np_terms(zb, xb, H0, loghaz, status, theta, frailty):
    eta_z = np.clip(zb, -CLAMP, CLAMP)
    eta_x = np.clip(xb, -CLAMP, CLAMP)
    with np.errstate(divide="ignore"):
        log_a = np.log(H0) + eta_x
    log_a = np.minimum(log_a, CLAMP)
    a = np.exp(log_a)
    if frailty:
        l1 = np.log1p(a / theta)
        log_s = -theta * l1
        log_g = -(theta + 1.0) * l1
    else:
        log_s = -a
        log_g = -a
    event = -np.logaddexp(0.0, -eta_z) + loghaz + eta_x + log_g
    cens = np.logaddexp(0.0, eta_z + log_s) - np.logaddexp(0.0, eta_z)
    return np.where(status == 1, event, cens)


def np_loglik_sum(zb, zcol, zstep, xb, xcol, xstep, H0, ecol, hstep,
                  jidx, loglam, theta, frailty, status):
    zz = zb + zstep * zcol if zstep != 0.0 else zb
    xx = xb + xstep * xcol if xstep != 0.0 else xb
    hh = H0 + hstep * ecol if hstep != 0.0 else H0
    return float(np.sum(_np_terms(zz, xx, hh, loglam[jidx], status, theta, frailty)))


def np_loglik_obs(zb, xb, H0, jidx, loglam, theta, frailty, status, out):
    out[:] = _np_terms(zb, xb, H0, loglam[jidx], status, theta, frailty)
    clamped = (np.abs(zb) > CLAMP) | (np.abs(xb) > CLAMP)
    with np.errstate(divide="ignore"):
        clamped |= (np.log(H0) + np.clip(xb, -CLAMP, CLAMP)) > CLAMP
    return int(np.count_nonzero(clamped))


def np_marginal_survival(H0_grid, xb, zb, theta, frailty):
    eta_z = np.clip(zb, -CLAMP, CLAMP)
    pi = 1.0 / (1.0 + np.exp(-eta_z))
    a = np.exp(np.minimum(np.log(np.maximum(H0_grid[:, None], 1e-300))
                          + np.clip(xb, -CLAMP, CLAMP)[None, :], CLAMP))
    a = np.where(H0_grid[:, None] > 0.0, a, 0.0)
    if frailty:
        s = np.exp(-theta * np.log1p(a / theta))
    else:
        s = np.exp(-a)
    return np.mean(1.0 - pi + pi * s, axis=1)


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------


def _log1pexp(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _clamp(x):
    if x > CLAMP:
        return CLAMP
    if x < -CLAMP:
        return -CLAMP
    return x


def _obs_term(eta_z, eta_x, h, loghaz, event, theta, frailty):
    if h > 0.0:
        log_a = math.log(h) + eta_x
        if log_a > CLAMP:
            log_a = CLAMP
        a = math.exp(log_a)
    else:
        a = 0.0
    if frailty:
        l1 = math.log1p(a / theta)
        log_s = -theta * l1
        log_g = -(theta + 1.0) * l1
    else:
        log_s = -a
        log_g = -a
    if event:
        return -_log1pexp(-eta_z) + loghaz + eta_x + log_g
    return _log1pexp(eta_z + log_s) - _log1pexp(eta_z)


def _nb_loglik_sum(zb, zcol, zstep, xb, xcol, xstep, H0, ecol, hstep,
                   jidx, loglam, theta, frailty, status):
    total = 0.0
    for i in range(zb.shape[0]):
        eta_z = _clamp(zb[i] + zstep * zcol[i])
        eta_x = _clamp(xb[i] + xstep * xcol[i])
        h = H0[i] + hstep * ecol[i]
        total += _obs_term(eta_z, eta_x, h, loglam[jidx[i]], status[i] == 1,
                           theta, frailty)
    return total


def _nb_loglik_obs(zb, xb, H0, jidx, loglam, theta, frailty, status, out):
    clamped = 0
    for i in range(zb.shape[0]):
        hit = abs(zb[i]) > CLAMP or abs(xb[i]) > CLAMP
        eta_x = _clamp(xb[i])
        if H0[i] > 0.0 and math.log(H0[i]) + eta_x > CLAMP:
            hit = True
        if hit:
            clamped += 1
        out[i] = _obs_term(_clamp(zb[i]), eta_x, H0[i], loglam[jidx[i]],
                           status[i] == 1, theta, frailty)
    return clamped


def _nb_marginal_survival(H0_grid, xb, zb, theta, frailty):
    n = zb.shape[0]
    out = np.empty(H0_grid.shape[0])
    pi = np.empty(n)
    ex = np.empty(n)
    for i in range(n):
        pi[i] = 1.0 / (1.0 + math.exp(-_clamp(zb[i])))
        ex[i] = _clamp(xb[i])
    for g in range(H0_grid.shape[0]):
        h = H0_grid[g]
        if h <= 0.0:
            out[g] = 1.0
            continue
        log_h = math.log(h)
        acc = 0.0
        for i in range(n):
            log_a = log_h + ex[i]
            if log_a > CLAMP:
                log_a = CLAMP
            a = math.exp(log_a)
            if frailty:
                s = math.exp(-theta * math.log1p(a / theta))
            else:
                s = math.exp(-a)
            acc += pi[i] * (s - 1.0)
        out[g] = 1.0 + acc / n
    return out


if HAS_NUMBA:
    _log1pexp = njit(_log1pexp)
    _clamp = njit(_clamp)
    _obs_term = njit(_obs_term)
    nb_loglik_sum = njit(_nb_loglik_sum)
    nb_loglik_obs = njit(_nb_loglik_obs)
    nb_marginal_survival = njit(_nb_marginal_survival)
else:  # pragma: no cover
    nb_loglik_sum = nb_loglik_obs = nb_marginal_survival = None


if USE_NUMBA:
    loglik_sum = nb_loglik_sum
    loglik_obs = nb_loglik_obs
    marginal_survival = nb_marginal_survival
    BACKEND = "numba"
else:
    loglik_sum = np_loglik_sum
    loglik_obs = np_loglik_obs
    marginal_survival = np_marginal_survival
    BACKEND = "numpy"
