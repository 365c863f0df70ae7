"""Bayesian semiparametric mixture cure models with optional gamma frailty."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .model import (CureParameters, DataError, Hyperparameters, ModelSpec, SurvivalDataset,
                    TimePartition, log_likelihood)
from .priors import ShrinkageState, log_joint_posterior, log_prior
from .sampler import PosteriorDraws, SamplerConfig, run_chain, run_fit
from .diagnostics import ParameterSummary, hpd_interval, psrf, summarize_draws
from .criteria import CriteriaReport, criteria_report, dic, lpml, psis_loo, aic_bic
from .survcurves import StepCurve, kaplan_meier, posterior_survival_curve

__all__ = [
    "BACKEND", "CureParameters", "DataError", "Hyperparameters", "ModelSpec",
    "SurvivalDataset", "TimePartition", "log_likelihood", "ShrinkageState",
    "log_joint_posterior", "log_prior", "PosteriorDraws", "SamplerConfig", "run_chain",
    "run_fit", "ParameterSummary", "hpd_interval", "psrf", "summarize_draws",
    "CriteriaReport", "criteria_report", "dic", "lpml", "psis_loo", "aic_bic", "StepCurve",
    "kaplan_meier", "posterior_survival_curve",
]
