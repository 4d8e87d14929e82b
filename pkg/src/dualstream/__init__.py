"""
Desk-scale dual-stream text-to-video diffusion on numpy.

A content stream (per-frame 2-D U-Net with a frozen base and low-rank
increments) and a motion stream (3-D U-Net) are denoised in lockstep and
exchange information through bidirectional cross-attention.  Motion latents
are obtained from content latents by a temporal-difference decomposer and
fused back by a combiner before decoding.
"""
from .errors import (ConfigError, ContractError, DimensionError, FormatError, NumericalError,
                     StateError, TrainingError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "FormatError", "NumericalError",
    "StateError", "TrainingError", "__version__",
]
