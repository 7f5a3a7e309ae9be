"""Bayesian Full / Reward / Rank click models for non-personalized slates."""

from ._meta import SPEC_VERSION
from .core import (
    Dataset,
    LogPosterior,
    ModelKind,
    ModelParams,
    PriorConfig,
    Slate,
    SlateRecord,
    full_probs,
    gamma_logpdf,
    grad_log_posterior,
    log_multinomial_pmf,
    log_posterior,
    log_prior,
    rank_probs,
    reward_probs,
)
from .data import (
    GeneratorSpec,
    enumerate_slates,
    make_true_params,
    simulate,
    to_rank_view,
    to_reward_view,
    view_for,
)
from .inference import MapConfig, MapResult, McmcConfig, PosteriorSamples, map_estimate, mcmc_sample
from .metrics import L1Report, l1_click_rank_error, l1_nonclick_error

__all__ = [
    "Dataset",
    "GeneratorSpec",
    "L1Report",
    "LogPosterior",
    "MapConfig",
    "MapResult",
    "McmcConfig",
    "ModelKind",
    "ModelParams",
    "PosteriorSamples",
    "PriorConfig",
    "SPEC_VERSION",
    "Slate",
    "SlateRecord",
    "enumerate_slates",
    "full_probs",
    "gamma_logpdf",
    "grad_log_posterior",
    "l1_click_rank_error",
    "l1_nonclick_error",
    "log_multinomial_pmf",
    "log_posterior",
    "log_prior",
    "make_true_params",
    "map_estimate",
    "mcmc_sample",
    "rank_probs",
    "reward_probs",
    "simulate",
    "to_rank_view",
    "to_reward_view",
    "view_for",
]

__version__ = "0.1.0"
