from .counts import CountModel, TransitionCounts, empirical_success_prob, record_transition
from .fitting import FitConfig, FitReport, OptimizerState, fit, fit_generative, reset_weights
from .io import load_dataset, load_weights, save_dataset, save_weights
from .network import Encoder, GenerativeModel, NumericalError, ParametricModel, next_state_distribution

__all__ = [
    "CountModel", "TransitionCounts", "empirical_success_prob", "record_transition",
    "FitConfig", "FitReport", "OptimizerState", "fit", "fit_generative", "reset_weights",
    "load_dataset", "load_weights", "save_dataset", "save_weights",
    "Encoder", "GenerativeModel", "NumericalError", "ParametricModel", "next_state_distribution",
]
