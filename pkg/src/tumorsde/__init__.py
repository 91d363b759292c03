"""Bayesian inference for SDE mixed-effects models of tumor growth.

Exact inference uses pseudo-marginal MCMC with particle-filter likelihood
estimates; approximate inference uses Bayesian synthetic likelihoods on
summary statistics. See the README for the CLI front end.
"""

from tumorsde.model import (
    Dataset,
    ObservationDesign,
    PriorSpec,
    RandomEffects,
    SubjectData,
    Theta,
    default_priors,
    default_start,
    simulate_dataset,
)
from tumorsde.smc import SmcConfig, dataset_loglik
from tumorsde.pmm import Chain, McmcConfig, run_pmm
from tumorsde.bsl import BslConfig, run_bsl, summarize_dataset

__all__ = [
    "Dataset",
    "ObservationDesign",
    "PriorSpec",
    "RandomEffects",
    "SubjectData",
    "Theta",
    "default_priors",
    "default_start",
    "simulate_dataset",
    "SmcConfig",
    "dataset_loglik",
    "Chain",
    "McmcConfig",
    "run_pmm",
    "BslConfig",
    "run_bsl",
    "summarize_dataset",
]

__version__ = "0.1.0"
