"""Equation recognition with a per-glyph CNN whose raw predictions are
refined by an exactly-constrained structured predictor."""

__version__ = "0.1.0"

from .dataset import DatasetBundle, EquationSample, NoiseConfig, generate_dataset
from .features import StructuredWeights
from .solver import ChainScore, brute_force_map, solve_map, validate

__all__ = [
    "ChainScore",
    "DatasetBundle",
    "EquationSample",
    "NoiseConfig",
    "StructuredWeights",
    "brute_force_map",
    "generate_dataset",
    "solve_map",
    "validate",
]
