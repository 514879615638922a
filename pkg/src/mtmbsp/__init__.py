"""Bayesian multivariate regression with mixed-type responses and global-local shrinkage."""
from .errors import (ChecksumError, ContractError, InputError, MtMBSPError, NumericalError,
                     ParameterError, ValidationError)
from .gibbs import ChainConfig, Hyperparameters, PosteriorSamples, run_chain
from .model import Dataset, ResponseKind, ResponseSchema
from .rng import RandomStream
from .selection import CredibleSummary, SelectionSets, TwoStepEstimate, select_active, two_step_fit

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "ChecksumError", "ContractError", "CredibleSummary", "Dataset",
    "Hyperparameters", "InputError", "MtMBSPError", "NumericalError", "ParameterError",
    "PosteriorSamples", "RandomStream", "ResponseKind", "ResponseSchema", "SelectionSets",
    "TwoStepEstimate", "ValidationError", "run_chain", "select_active", "two_step_fit",
]
