"""Generalised Wishart processes for time-varying covariance matrices."""

__version__ = "0.1.0"

from .errors import (ConvergenceFailure, FactorisationFailure, GWPError, InsufficientData,
                     NotPositiveDefinite, ParseError, SamplerStall, ShapeError)
from .kernels import (BlockDiagonalPrior, GramMatrix, KernelFamily, KernelSpec,
                      block_cholesky, build_gram, evaluate_kernel)
from .wishart import (CovariancePath, GWPState, build_sigma, invert_path, sample_gwp_prior,
                      wishart_log_density)
from .inference import (LogNormalPrior, ObservationSet, PosteriorSamples, SamplerConfig,
                        ess_update, log_likelihood, mh_update_L, run_gibbs,
                        slice_update_theta)
from .prediction import (LatentMode, PredictiveRequest, condition_latents, one_step_forecast,
                         predict_sigma)
from .bekk import BekkFitConfig, BekkParams, bekk_filter, bekk_log_likelihood, fit_bekk
from .data import (CsvConfig, SyntheticSpec, generate_equity_like_path, generate_periodic_path,
                   load_returns_csv, realized_proxy, simulate_returns)
from .evaluation import ExperimentConfig, ResultTable, forecast_loglik, mse_paths, run_experiment

__all__ = [
    "ConvergenceFailure",
    "FactorisationFailure",
    "GWPError",
    "InsufficientData",
    "NotPositiveDefinite",
    "ParseError",
    "SamplerStall",
    "ShapeError",
    "BlockDiagonalPrior",
    "GramMatrix",
    "KernelFamily",
    "KernelSpec",
    "block_cholesky",
    "build_gram",
    "evaluate_kernel",
    "CovariancePath",
    "GWPState",
    "build_sigma",
    "invert_path",
    "sample_gwp_prior",
    "wishart_log_density",
    "LogNormalPrior",
    "ObservationSet",
    "PosteriorSamples",
    "SamplerConfig",
    "ess_update",
    "log_likelihood",
    "mh_update_L",
    "run_gibbs",
    "slice_update_theta",
    "LatentMode",
    "PredictiveRequest",
    "condition_latents",
    "one_step_forecast",
    "predict_sigma",
    "BekkFitConfig",
    "BekkParams",
    "bekk_filter",
    "bekk_log_likelihood",
    "fit_bekk",
    "CsvConfig",
    "SyntheticSpec",
    "generate_equity_like_path",
    "generate_periodic_path",
    "load_returns_csv",
    "realized_proxy",
    "simulate_returns",
    "ExperimentConfig",
    "ResultTable",
    "forecast_loglik",
    "mse_paths",
    "run_experiment",
]
