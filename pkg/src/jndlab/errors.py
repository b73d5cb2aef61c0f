"""Exception types shared across the toolkit."""


class ImageLoadError(RuntimeError):
    """A file could not be decoded as an 8-bit RGB image."""


class ShapeMismatchError(ValueError):
    """Two arrays that must share a shape do not."""


class IdenticalImagesError(ValueError):
    """PSNR requested for identical inputs (MSE is zero, PSNR unbounded)."""


class ConfigurationError(ValueError):
    """Invalid configuration value or model used outside its contract."""


class TrainingDivergedError(RuntimeError):
    """Non-finite values appeared during training or inference."""

    def __init__(self, message, step=None, layer=None):
        super().__init__(message)
        self.step = step
        self.layer = layer


class CalibrationError(RuntimeError):
    """Noise-level calibration cannot reach the requested PSNR."""

    def __init__(self, message, floor_psnr=None):
        super().__init__(message)
        self.floor_psnr = floor_psnr


class IngestionError(RuntimeError):
    """A dataset directory yielded no usable images."""
