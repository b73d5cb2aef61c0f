"""Attention and sensitivity priors extracted from the frozen codec.

The scalar target is the codec's own reconstruction error for the input. The
attention map weights the deepest analysis activation magnitudes by the
spatial mean gradient magnitude of the target there; the sensitivity map is
the gated input gradient scaled by the un-normalized attention map.
"""

from __future__ import annotations

import contextlib
import dataclasses

import numpy as np
import torch
import torch.nn.functional as F

from jndlab import data as datamod
from jndlab.codec import DOWNSAMPLE_FACTOR, pad_to_multiple
from jndlab.errors import ShapeMismatchError

# spread below this fraction of the map's scale counts as constant; covers
# float32 border-path ripples that min-max normalization would explode
_DEGENERATE_REL = 1e-5
_DEGENERATE_ABS = 1e-12


@dataclasses.dataclass
class PriorMaps:
    """cam: H x W x 1 in [0,1]; guided: H x W x 3 finite reals; target_scalar:
    the reconstruction-error value the gradients were taken from."""

    cam: np.ndarray
    guided: np.ndarray
    target_scalar: float


@contextlib.contextmanager
def _guided_gates(codec):
    codec.guided_gates(True)
    try:
        yield
    finally:
        codec.guided_gates(False)


def _forward_with_latent(codec, x):
    """Reconstruction-error target per image plus the pre-quantization latent,
    both connected to the autograd graph."""
    xp = pad_to_multiple(x, DOWNSAMPLE_FACTOR)
    z = codec.analysis(xp)
    q = codec.quantize(z, "eval")
    recon = codec.synthesis(q)[:, :, : x.shape[2], : x.shape[3]]
    t = ((x - recon) ** 2).mean(dim=(1, 2, 3))
    return t, z


def _zero_if_constant(maps):
    """Per-image: replace spatially (near-)constant maps by zeros."""
    flat = maps.flatten(1)
    spread = flat.amax(1) - flat.amin(1)
    scale = flat.abs().amax(1)
    keep = (spread > _DEGENERATE_ABS + _DEGENERATE_REL * scale).view(-1, 1, 1, 1)
    return torch.where(keep, maps, torch.zeros_like(maps))


def _raw_cam(codec, x, differentiable):
    """Un-normalized attention map upsampled to input size, (B,1,H,W).

    Channel weights are the spatial means of the target gradient's magnitude
    at the deepest analysis layer, and activations enter by magnitude: the
    codec's latent is signed and the target is a minimized error, so the
    classification-style signed weighting collapses to an all-zero map (the
    global "shrink everything" gradient component anti-aligns with the
    activations). The magnitude form keeps the weighted-activation structure
    and highlights where reconstruction error is sensitive to the latent.

    Channel weights are always detached; with differentiable=True the map
    stays connected to x through the latent activations.
    """
    with torch.enable_grad():
        x_in = x if differentiable else x.detach().requires_grad_(True)
        t, z = _forward_with_latent(codec, x_in)
        grads = torch.autograd.grad(t.sum(), z, retain_graph=differentiable, create_graph=False)[0]
    alpha = grads.abs().mean(dim=(2, 3), keepdim=True).detach()
    acts = z if differentiable else z.detach()
    raw = F.relu((alpha * acts.abs()).sum(dim=1, keepdim=True))
    raw = F.interpolate(raw, size=(x.shape[2], x.shape[3]), mode="bilinear", align_corners=False)
    return raw, t.detach()


def _minmax_normalize(maps):
    guarded = _zero_if_constant(maps)
    flat = guarded.flatten(1)
    lo = flat.amin(1).view(-1, 1, 1, 1)
    hi = flat.amax(1).view(-1, 1, 1, 1)
    return (guarded - lo) / (hi - lo + _DEGENERATE_ABS)


def cam_batch(codec, x, differentiable=False):
    """Attention maps for a batch, (B,3,H,W) -> (B,1,H,W) in [0,1].

    Upsample-then-normalize order. A constant raw map yields an all-zero
    attention map rather than an error.
    """
    codec.require_trained("attention-map extraction")
    raw, _ = _raw_cam(codec, x, differentiable)
    cam = _minmax_normalize(raw)
    return cam if differentiable else cam.detach()


def guided_batch(codec, x):
    """Sensitivity maps for a batch, (B,3,H,W) -> (B,3,H,W) finite reals.

    Input gradient of the reconstruction error with negative backward signals
    zeroed at every GDN/iGDN output, scaled elementwise by the un-normalized
    attention map (zeroed when degenerate).
    """
    codec.require_trained("sensitivity-map extraction")
    raw, _ = _raw_cam(codec, x.detach(), differentiable=False)
    with torch.enable_grad(), _guided_gates(codec):
        x_leaf = x.detach().clone().requires_grad_(True)
        t, _ = _forward_with_latent(codec, x_leaf)
        input_grad = torch.autograd.grad(t.sum(), x_leaf)[0]
    guided = input_grad * _zero_if_constant(raw)
    if not torch.isfinite(guided).all():
        raise RuntimeError("guided map contains non-finite values")
    return guided.detach()


def prior_maps_batch(codec, x):
    """(cam, guided) for a batch, sharing one raw-map computation.

    Both outputs are detached; this is the generator-input path.
    """
    codec.require_trained("prior extraction")
    raw, _ = _raw_cam(codec, x.detach(), differentiable=False)
    cam = _minmax_normalize(raw).detach()
    with torch.enable_grad(), _guided_gates(codec):
        x_leaf = x.detach().clone().requires_grad_(True)
        t, _ = _forward_with_latent(codec, x_leaf)
        input_grad = torch.autograd.grad(t.sum(), x_leaf)[0]
    guided = (input_grad * _zero_if_constant(raw)).detach()
    if not torch.isfinite(guided).all():
        raise RuntimeError("guided map contains non-finite values")
    return cam, guided


def extract_priors(codec, image) -> PriorMaps:
    """Numpy convenience wrapper for a single H x W x 3 image."""
    codec.require_trained("prior extraction")
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"extract_priors: expected H x W x 3, got {image.shape}")
    x = datamod.image_to_tensor(image)
    cam, guided = prior_maps_batch(codec, x)
    with torch.no_grad():
        recon = codec.degrade(x, mode="eval")
        target = float(((x - recon) ** 2).mean())
    return PriorMaps(
        cam=np.transpose(cam[0].numpy(), (1, 2, 0)).astype(np.float32),
        guided=datamod.from_batch(guided)[0].astype(np.float32),
        target_scalar=target,
    )
