"""Frequency-aware conditional diffusion imputer for multivariate time series."""

from . import (  # noqa: F401
    checkpoint,
    config,
    data,
    denoiser,
    diffusion,
    evaluate,
    fbp,
    layers,
    numerics,
    spectral,
    training,
)

__version__ = "0.1.0"
