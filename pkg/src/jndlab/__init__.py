"""Perceptual-domain JND estimation toolkit.

A learned lossy codec stands in for the signal degradation of the human
visual system; saliency priors extracted from it guide a JND generator,
whose output noise is injected at calibrated PSNR levels and judged in a
blinded pairwise viewing test.
"""

__version__ = "0.1.0"

from jndlab.errors import (
    CalibrationError,
    ConfigurationError,
    IdenticalImagesError,
    ImageLoadError,
    IngestionError,
    ShapeMismatchError,
    TrainingDivergedError,
)

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "IdenticalImagesError",
    "ImageLoadError",
    "IngestionError",
    "ShapeMismatchError",
    "TrainingDivergedError",
    "__version__",
]
