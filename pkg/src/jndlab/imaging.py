"""Image data model, lossless file I/O, fidelity metrics and gradient operators.

Images are H x W x 3 float arrays with values in [0, 1], converted from
8-bit by division by 255. All metrics use peak 1.0 on that scale.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from jndlab.errors import IdenticalImagesError, ImageLoadError, ShapeMismatchError

# Codec applies three 2x downsamplings; CAM extraction needs a non-empty latent.
MIN_SIDE = 16

# Rec.601 luminance weights.
_LUMA = np.array([0.299, 0.587, 0.114])

# 3x3 Sobel kernels scaled by 1/8. Peak magnitude response is 1.0 on [0,1] inputs.
_SOBEL_V = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]) / 8.0
_SOBEL_H = _SOBEL_V.T


@dataclasses.dataclass(frozen=True)
class GradientField:
    """Vertical/horizontal Sobel responses and their magnitude, each H x W."""

    g0: np.ndarray
    g1: np.ndarray
    magnitude: np.ndarray


def validate_image(x, name="image") -> np.ndarray:
    """Check the H x W x 3, finite, [0,1], min-side contract; return as float32."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeMismatchError(f"{name}: expected H x W x 3, got shape {x.shape}")
    if x.shape[0] < MIN_SIDE or x.shape[1] < MIN_SIDE:
        raise ShapeMismatchError(
            f"{name}: sides must be >= {MIN_SIDE}, got {x.shape[0]}x{x.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(
            f"{name}: values outside [0,1] (min {x.min():.4g}, max {x.max():.4g})"
        )
    return x.astype(np.float32, copy=False)


def clip01(x) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def load_image(path, grayscale="error") -> np.ndarray:
    """Load an 8-bit RGB PNG/BMP as a [0,1] float image (value / 255 exactly).

    grayscale: "error" rejects non-RGB content; "replicate" expands 8-bit
    grayscale to three identical channels.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            elif mode == "L" and grayscale == "replicate":
                arr = np.asarray(im, dtype=np.uint8)
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                raise ImageLoadError(
                    f"{path}: unsupported mode {mode!r}, need 8-bit RGB"
                )
    except ImageLoadError:
        raise
    except Exception as exc:
        raise ImageLoadError(f"{path}: cannot decode image ({exc})") from exc
    return validate_image(arr.astype(np.float32) / 255.0, name=str(path))


def save_image(x, path) -> None:
    """Quantize with round(value * 255) and write PNG or BMP by extension."""
    x = validate_image(x)
    q = np.rint(np.asarray(x, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(Path(path))


def mse(a, b) -> float:
    """Mean over all elements of (a - b)^2; works for images and maps alike."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10*log10(1 / mse) in dB with peak 1.0.

    Identical inputs have unbounded PSNR and raise IdenticalImagesError so the
    condition is reported distinctly rather than as a number.
    """
    m = mse(a, b)
    if m == 0.0:
        raise IdenticalImagesError("psnr: inputs are identical (mse = 0)")
    return 10.0 * math.log10(1.0 / m)


def psnr_to_mse(psnr_db: float) -> float:
    return 10.0 ** (-psnr_db / 10.0)


def luminance(x) -> np.ndarray:
    """Rec.601 luminance plane of an H x W x 3 image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    return x @ _LUMA


def spatial_gradient(x) -> GradientField:
    """Sobel gradients of the luminance plane with replicate border padding.

    g0 responds to vertical variation (rows), g1 to horizontal variation
    (columns); magnitude is sqrt(g0^2 + g1^2) elementwise.
    """
    y = luminance(x)
    g0 = ndimage.correlate(y, _SOBEL_V, mode="nearest")
    g1 = ndimage.correlate(y, _SOBEL_H, mode="nearest")
    return GradientField(g0=g0, g1=g1, magnitude=np.sqrt(g0 * g0 + g1 * g1))
