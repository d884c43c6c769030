"""Online Gaussian LDA for unsupervised pattern mining from utility usage data."""

from .core import (GlobalState, LearningSchedule, LocalState, ModelConfig, NiwPosterior,
                   NumericalError, PatternWindow, elbo, expected_log_gaussian, fit_online,
                   global_step, intermediate_global, learning_rate, load_checkpoint, local_step,
                   save_checkpoint)
from .evaluation import (EnergyMap, PatternMatrix, SyntheticCorpus, fit_energy_map,
                         pattern_matrix, per_pattern_energy, perplexity, predict_energy,
                         sample_corpus)

__version__ = "0.1.0"

__all__ = [
    "EnergyMap", "GlobalState", "LearningSchedule", "LocalState", "ModelConfig", "NiwPosterior",
    "NumericalError", "PatternMatrix", "PatternWindow", "SyntheticCorpus", "elbo",
    "expected_log_gaussian", "fit_energy_map", "fit_online", "global_step", "intermediate_global",
    "learning_rate", "load_checkpoint", "local_step", "pattern_matrix", "per_pattern_energy",
    "perplexity", "predict_energy", "sample_corpus", "save_checkpoint",
]
