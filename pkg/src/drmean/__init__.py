"""Estimators of a population mean from incomplete data.

Inverse-propensity weighting, propensity stratification, regression
prediction and several doubly robust combinations, plus a synthetic
population with known truth and a Monte Carlo harness to compare them.
"""

from drmean.datagen import Dataset, Truth, draw_sample, transform_covariates, true_structures
from drmean.glm import LinearFit, Link, PropensityFit, fit_binary, fit_linear, link_test, predict_propensity
from drmean.estimators import (
    EstimateResult,
    EstimationError,
    StratumAssignment,
    bc_ols,
    ipw_nr,
    ipw_pop,
    make_strata,
    naive_mean,
    ols_reg,
    pi_cov_reg,
    strat_pi,
    strat_pi_m,
    wls_reg,
)
from drmean.simbench import MetricsRow, ScenarioConfig, run_replicate, run_study, summarize

__version__ = "0.1.0"
