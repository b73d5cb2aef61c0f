"""Differentiable training objectives: magnitude loss, IQA bank, attention
loss, and their weighted combination.

All functions operate on torch tensors (NCHW batches or plain maps) and stay
differentiable end-to-end into the generator.
"""

from __future__ import annotations

import dataclasses

import torch
import torch.nn.functional as F

from jndlab.errors import ConfigurationError, ShapeMismatchError

DEFAULT_T0 = 1e-4
DEFAULT_WEIGHTS = (0.1, 1.0, 0.1)
DEFAULT_IQA_WEIGHTS = (0.5, 0.5)

_LUMA = (0.299, 0.587, 0.114)
_SOBEL_V = torch.tensor(
    [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]
) / 8.0


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")


def mean_squared_error(a, b):
    _check_same_shape(a, b, "mean_squared_error")
    return ((a - b) ** 2).mean()


def gradient_magnitude(images):
    """Sobel gradient magnitude of the Rec.601 luminance plane.

    images: (B, 3, H, W) -> (B, 1, H, W). Replicate border padding, kernels
    scaled by 1/8, matching the numpy-side spatial_gradient operator.
    """
    w = torch.tensor(_LUMA, dtype=images.dtype, device=images.device).view(1, 3, 1, 1)
    luma = (images * w).sum(1, keepdim=True)
    kv = _SOBEL_V.to(dtype=images.dtype, device=images.device).view(1, 1, 3, 3)
    kh = kv.transpose(2, 3)
    padded = F.pad(luma, (1, 1, 1, 1), mode="replicate")
    g0 = F.conv2d(padded, kv)
    g1 = F.conv2d(padded, kh)
    return torch.sqrt(g0 * g0 + g1 * g1)


def magnitude_loss(xj, grad_mag, t0=DEFAULT_T0):
    """Pulls the JND magnitude toward the local gradient magnitude:

        mean( ln(G^2 + xj^2 + t0) - ln(2*G*|xj| + t0) )

    Nonnegative elementwise (AM-GM), zero exactly where |xj| = G. grad_mag
    broadcasts across the channel dimension.
    """
    if t0 <= 0:
        raise ConfigurationError(f"magnitude_loss: t0 must be > 0, got {t0}")
    g = grad_mag
    term = torch.log(g * g + xj * xj + t0) - torch.log(2.0 * g * xj.abs() + t0)
    return term.mean()


def _gaussian_window(size, sigma, dtype, device):
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean-pooled SSIM on [0,1] images, 11x11 Gaussian window, valid region.

    Accepts (B, C, H, W) or (H, W) / (C, H, W) maps; returns a scalar tensor.
    """
    _check_same_shape(a, b, "ssim")
    while a.dim() < 4:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    channels = a.shape[1]
    if a.shape[2] < window_size or a.shape[3] < window_size:
        raise ShapeMismatchError(
            f"ssim: spatial sides must be >= window {window_size}, got {tuple(a.shape)}"
        )
    win = _gaussian_window(window_size, sigma, a.dtype, a.device)
    win = win.expand(channels, 1, window_size, window_size).contiguous()
    c1 = k1 * k1
    c2 = k2 * k2

    mu_a = F.conv2d(a, win, groups=channels)
    mu_b = F.conv2d(b, win, groups=channels)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = F.conv2d(a * a, win, groups=channels) - mu_aa
    var_b = F.conv2d(b * b, win, groups=channels) - mu_bb
    cov = F.conv2d(a * b, win, groups=channels) - mu_ab

    ssim_map = ((2 * mu_ab + c1) * (2 * cov + c2)) / (
        (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    )
    return ssim_map.mean()


def iqa_bank(a, b):
    """Dissimilarity vector [mse, 1 - ssim]; each entry >= 0 and 0 iff a == b."""
    _check_same_shape(a, b, "iqa_bank")
    return [mean_squared_error(a, b), 1.0 - ssim(a, b)]


def aic_loss(a, b, weights=DEFAULT_IQA_WEIGHTS):
    """Fixed-weight combination of the IQA bank entries."""
    entries = iqa_bank(a, b)
    if len(weights) != len(entries):
        raise ConfigurationError(
            f"aic_loss: {len(weights)} weights for a bank of {len(entries)}"
        )
    if any(w < 0 for w in weights):
        raise ConfigurationError(f"aic_loss: negative weight in {weights}")
    total = weights[0] * entries[0]
    for w, e in zip(weights[1:], entries[1:]):
        total = total + w * e
    return total


def attention_loss(xc, yc):
    """MSE between the two attention maps."""
    return mean_squared_error(xc, yc)


@dataclasses.dataclass
class LossBreakdown:
    loss1: object
    loss2: object
    loss3: object
    total: object
    weights: tuple

    def detached(self):
        def _f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return LossBreakdown(
            _f(self.loss1), _f(self.loss2), _f(self.loss3), _f(self.total), self.weights
        )


def total_loss(parts, alpha=DEFAULT_WEIGHTS[0], beta=DEFAULT_WEIGHTS[1], gamma=DEFAULT_WEIGHTS[2]):
    """total = alpha*loss1 + beta*loss2 + gamma*loss3."""
    if alpha < 0 or beta < 0 or gamma < 0:
        raise ConfigurationError("loss weights must be >= 0")
    l1, l2, l3 = parts
    total = alpha * l1 + beta * l2 + gamma * l3
    return LossBreakdown(l1, l2, l3, total, (alpha, beta, gamma))
