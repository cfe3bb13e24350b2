"""Negative-binomial factor model for count matrices with gene-specific and
between-sample random effects, fitted by a blocked Gibbs sampler."""
from .distributions import RngStream
from .gibbs import ChainConfig, ChainOutput, gibbs_sweep, initial_state, run_chain, sample_prior
from .model import (AugmentedStats, CountMatrix, Hyperparameters, ModelState, full_log_likelihood,
                    model_mean, nb_log_pmf)
from .posterior import PosteriorSummary, dominant_subclone, log_scale_view, rank_de_genes, summarize
from .selection import SelectionReport, estimate_loglik, second_difference, select_k
from .synthetic import SyntheticTruth, generate_scenario1, generate_scenario2, recovery_metrics

__version__ = "0.1.0"

__all__ = [
    "AugmentedStats", "ChainConfig", "ChainOutput", "CountMatrix", "Hyperparameters", "ModelState",
    "PosteriorSummary", "RngStream", "SelectionReport", "SyntheticTruth", "dominant_subclone",
    "estimate_loglik", "full_log_likelihood", "generate_scenario1", "generate_scenario2",
    "gibbs_sweep", "initial_state", "log_scale_view", "model_mean", "nb_log_pmf", "rank_de_genes",
    "recovery_metrics", "run_chain", "sample_prior", "second_difference", "select_k", "summarize",
]
