"""Bivariate log-symmetric ACD modeling: simulation, estimation, diagnostics."""

from .data import (
    SeasonalCurve,
    TradeTape,
    bid_ask_range,
    build_pairs,
    describe,
    diurnal_adjust,
)
from .diagnostics import (
    PredictionBand,
    ResidualSeries,
    acf_pacf,
    ks_test,
    marginal_quantile,
    predict_intervals,
    qq_points,
    reference_cdf,
    residuals,
)
from .estimate import FitResult, default_start, fit, fit_profile_nu, info_criteria, standard_errors
from .exceptions import (
    BlsacdError,
    DataError,
    DivergenceError,
    NumericError,
    SingularHessianError,
)
from .generators import GeneratorSpec
from .model import BiSeries, MedianPaths, ModelSpec, ParamVector, loglik, quad_form, recurse_medians, score
from .simulate import McDesign, McReport, run_mc_study, sample_innovation_pair, simulate_series

__version__ = "0.1.0"

__all__ = [
    "BiSeries",
    "BlsacdError",
    "DataError",
    "DivergenceError",
    "FitResult",
    "GeneratorSpec",
    "McDesign",
    "McReport",
    "MedianPaths",
    "ModelSpec",
    "NumericError",
    "ParamVector",
    "PredictionBand",
    "ResidualSeries",
    "SeasonalCurve",
    "SingularHessianError",
    "TradeTape",
    "__version__",
    "acf_pacf",
    "bid_ask_range",
    "build_pairs",
    "default_start",
    "describe",
    "diurnal_adjust",
    "fit",
    "fit_profile_nu",
    "info_criteria",
    "ks_test",
    "loglik",
    "marginal_quantile",
    "predict_intervals",
    "qq_points",
    "quad_form",
    "recurse_medians",
    "reference_cdf",
    "residuals",
    "run_mc_study",
    "sample_innovation_pair",
    "score",
    "simulate_series",
    "standard_errors",
]
