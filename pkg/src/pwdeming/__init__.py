"""Precision-profile weighted Deming regression for method-comparison studies."""

from .baselines import BaselineFit, linnet_ccv, ml_constant_cv, passing_bablok
from .data import MCDataset, PairedSample, parse_csv
from .deming_known import DemingFit, fit_known, latent_mu, minus2loglik
from .deming_rl import RLFit, fit_rl, rl_minus2loglik
from .diagnostics import (ResidualProfileFit, ResidualSet, fit_residual_profile, qq_normality,
                          residuals)
from .errors import (ConfigError, ConvergenceError, DataError, DegenerateFitError, InferenceError,
                     OutlierError, ProfileError, PWDError, SimulationError)
from .inference import InferenceResult, Prediction, jackknife, known_fitter, predict, rl_fitter
from .outliers import OutlierReport, detect_outliers
from .profiles import PrecisionProfile, evaluate, scale
from .simlab import SimDesign, SimResult, generate, run_study

__all__ = [
    "BaselineFit", "ConfigError", "ConvergenceError", "DataError", "DegenerateFitError",
    "DemingFit", "InferenceError", "InferenceResult", "MCDataset", "OutlierError", "OutlierReport",
    "PairedSample", "PrecisionProfile", "Prediction", "ProfileError", "PWDError", "RLFit",
    "ResidualProfileFit", "ResidualSet", "SimDesign", "SimResult", "SimulationError",
    "detect_outliers", "evaluate", "fit_known", "fit_residual_profile", "fit_rl", "generate",
    "jackknife", "known_fitter", "latent_mu", "linnet_ccv", "minus2loglik", "ml_constant_cv",
    "parse_csv", "passing_bablok", "predict", "qq_normality", "residuals", "rl_fitter",
    "rl_minus2loglik", "run_study", "scale",
]
