"""Discrete mode decomposition, Shapley mode valuation and mode-aware forecasting."""

from .dmd import DecompositionResult, DmdConfig, Mode, decompose, extract_one_mode
from .errors import (
    ConfigError,
    DegenerateSpectrumError,
    IngestionError,
    InputError,
    ModeshapError,
    ParameterError,
    SizeError,
    StructuralError,
    WindowingError,
)
from .metrics import accuracy, psnr, rmse, timing_stats
from .predictor import ChannelBundle, PredictorSpec, Split, run_horizon, run_sweep
from .smv import ModeDataset, ShapleyReport, exact_shapley, monte_carlo_shapley, shapley
from .spectrum import DiscreteSignal, analytic, forward_half_spectrum, hilbert_transform, inverse_real

__version__ = "0.1.0"

__all__ = [
    "ChannelBundle", "ConfigError", "DecompositionResult", "DegenerateSpectrumError", "DiscreteSignal",
    "DmdConfig", "IngestionError", "InputError", "Mode", "ModeDataset", "ModeshapError", "ParameterError",
    "PredictorSpec", "ShapleyReport", "SizeError", "Split", "StructuralError", "WindowingError",
    "accuracy", "analytic", "decompose", "exact_shapley", "extract_one_mode", "forward_half_spectrum",
    "hilbert_transform", "inverse_real", "monte_carlo_shapley", "psnr", "rmse", "run_horizon",
    "run_sweep", "shapley", "timing_stats",
]
