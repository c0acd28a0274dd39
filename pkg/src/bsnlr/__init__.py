"""Birnbaum-Saunders nonlinear regression with second-order bias correction."""

__version__ = "0.1.0"

from .bias import bias_alpha, bias_beta, correct
from .estimate import FitConfig, FitResult, fit, fit_bfgs, fit_scoring, residuals
from .model import Dataset, MeanModel, builtin, check_rank, eval_bundle, parse_model
from .signorm import BSParams, SinhNormalParams, psi1, sn_cdf, sn_pdf, sn_sample

__all__ = [
    "BSParams",
    "Dataset",
    "FitConfig",
    "FitResult",
    "MeanModel",
    "SinhNormalParams",
    "bias_alpha",
    "bias_beta",
    "builtin",
    "check_rank",
    "correct",
    "eval_bundle",
    "fit",
    "fit_bfgs",
    "fit_scoring",
    "parse_model",
    "psi1",
    "residuals",
    "sn_cdf",
    "sn_pdf",
    "sn_sample",
]
