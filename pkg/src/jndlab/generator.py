"""JND map generator: an autoencoder mapping (image, sensitivity, attention)
to a nonnegative per-pixel noise-magnitude map, plus its training loop
against the frozen degradation codec.
"""

from __future__ import annotations

import copy
import dataclasses
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from jndlab import data as datamod
from jndlab import imaging, losses, priors
from jndlab.codec import pad_to_multiple, param_hash
from jndlab.errors import ConfigurationError, ShapeMismatchError, TrainingDivergedError

GENERATOR_DOWNSAMPLE = 16  # four stride-2 stages
INPUT_CHANNELS = 7  # 3 image + 3 sensitivity + 1 attention
_ENC_CHANNELS = (64, 128, 256, 512)


class JndGenerator(nn.Module):
    """Four-down/four-up strided autoencoder, 7 input channels, 3-channel
    nonnegative output capped at `amplitude`."""

    def __init__(self, amplitude=0.2, activation="sigmoid"):
        super().__init__()
        if activation not in ("sigmoid", "softplus"):
            raise ConfigurationError(f"unknown output activation {activation!r}")
        self.amplitude = float(amplitude)
        self.activation = activation
        enc = []
        cin = INPUT_CHANNELS
        for cout in _ENC_CHANNELS:
            enc.append(nn.Conv2d(cin, cout, 5, stride=2, padding=2, padding_mode="replicate"))
            cin = cout
        self.encoder = nn.ModuleList(enc)
        dec = []
        chain = list(reversed(_ENC_CHANNELS[:-1])) + [3]
        for cout in chain:
            dec.append(nn.ConvTranspose2d(cin, cout, 5, stride=2, padding=2, output_padding=1))
            cin = cout
        self.decoder = nn.ModuleList(dec)

    def forward(self, x0, guided, cam):
        if x0.shape[1] != 3 or guided.shape[1] != 3 or cam.shape[1] != 1:
            raise ShapeMismatchError(
                f"generator: expected channels 3/3/1, got "
                f"{x0.shape[1]}/{guided.shape[1]}/{cam.shape[1]}"
            )
        if x0.shape[2:] != guided.shape[2:] or x0.shape[2:] != cam.shape[2:]:
            raise ShapeMismatchError("generator: image and prior maps disagree spatially")
        if x0.shape[2] % GENERATOR_DOWNSAMPLE or x0.shape[3] % GENERATOR_DOWNSAMPLE:
            raise ShapeMismatchError(
                f"generator: sides must be divisible by {GENERATOR_DOWNSAMPLE}, "
                f"got {x0.shape[2]}x{x0.shape[3]} (generate() pads arbitrary sizes)"
            )
        h = torch.cat([x0, guided, cam], dim=1)
        for layer in self.encoder:
            h = F.relu(layer(h))
        for layer in self.decoder[:-1]:
            h = F.relu(layer(h))
        raw = self.decoder[-1](h)
        if self.activation == "sigmoid":
            return self.amplitude * torch.sigmoid(raw)
        return self.amplitude * torch.tanh(F.softplus(raw))


def distort(x0, xj) -> np.ndarray:
    """clip(x0 + xj, 0, 1) on numpy images/maps."""
    x0 = np.asarray(x0, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if x0.shape != xj.shape:
        raise ShapeMismatchError(f"distort: shapes differ, {x0.shape} vs {xj.shape}")
    return np.clip(x0 + xj, 0.0, 1.0).astype(np.float32)


def generate(codec, generator, image) -> np.ndarray:
    """Full-image JND map for an H x W x 3 image (arbitrary size, padded and
    cropped internally). Returns a nonnegative H x W x 3 map."""
    codec.require_trained("JND generation")
    pm = priors.extract_priors(codec, image)
    x0 = datamod.image_to_tensor(image)
    cam = torch.from_numpy(np.transpose(pm.cam, (2, 0, 1)))[None]
    guided = torch.from_numpy(np.transpose(pm.guided, (2, 0, 1)))[None]
    x0p = pad_to_multiple(x0, GENERATOR_DOWNSAMPLE)
    camp = pad_to_multiple(cam, GENERATOR_DOWNSAMPLE)
    guidedp = pad_to_multiple(guided, GENERATOR_DOWNSAMPLE)
    generator.eval()
    with torch.no_grad():
        xj = generator(x0p, guidedp, camp)
    xj = xj[:, :, : x0.shape[2], : x0.shape[3]]
    return datamod.from_batch(xj)[0].astype(np.float32)


# -- prior sources -------------------------------------------------------------


class CodecPriorSource:
    """Per-crop attention/sensitivity maps from the frozen codec (baseline)."""

    def __init__(self, codec):
        self.codec = codec

    def maps(self, x0, positions):
        return priors.prior_maps_batch(self.codec, x0)


class ExternalPriorSource:
    """User-supplied full-image attention/sensitivity maps, cropped to match
    the sampled batch (prior-substitution ablation)."""

    def __init__(self, attention, sensitivity):
        # attention: {name: H x W (x1)}, sensitivity: {name: H x W x 3}
        self.attention = {k: np.asarray(v, dtype=np.float32).reshape(v.shape[0], v.shape[1], -1)[:, :, :1] for k, v in attention.items()}
        self.sensitivity = {k: np.asarray(v, dtype=np.float32) for k, v in sensitivity.items()}
        self.names = None  # bound at training start

    def bind(self, collection):
        missing = [n for n in collection.names if Path(n).stem not in self.attention]
        if missing:
            raise ConfigurationError(f"external prior maps missing for: {missing}")
        self.names = [Path(n).stem for n in collection.names]

    def maps(self, x0, positions):
        b, _, c, _ = x0.shape
        cam = np.empty((b, c, c, 1), dtype=np.float32)
        guided = np.empty((b, c, c, 3), dtype=np.float32)
        for i, (idx, top, left) in enumerate(positions):
            stem = self.names[idx]
            cam[i] = self.attention[stem][top : top + c, left : left + c]
            guided[i] = self.sensitivity[stem][top : top + c, left : left + c]
        cam_t = torch.from_numpy(cam).permute(0, 3, 1, 2).contiguous()
        guided_t = torch.from_numpy(guided).permute(0, 3, 1, 2).contiguous()
        return cam_t.to(x0.dtype), guided_t.to(x0.dtype)


def load_external_priors(directory, collection):
    """Load <stem>.va.{png,npy} and <stem>.pc.{png,npy} map files for every
    image in the collection."""
    directory = Path(directory)
    attention, sensitivity = {}, {}
    for name in collection.names:
        stem = Path(name).stem
        attention[stem] = _load_map(directory, f"{stem}.va", channels=1)
        sensitivity[stem] = _load_map(directory, f"{stem}.pc", channels=3)
    src = ExternalPriorSource(attention, sensitivity)
    src.bind(collection)
    return src


def _load_map(directory, base, channels):
    npy = directory / f"{base}.npy"
    if npy.exists():
        return np.load(npy)
    png = directory / f"{base}.png"
    if png.exists():
        from PIL import Image

        arr = np.asarray(Image.open(png), dtype=np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.shape[2] < channels:
            arr = np.repeat(arr[:, :, :1], channels, axis=2)
        return arr[:, :, :channels]
    raise ConfigurationError(f"no prior map file {base}.npy/.png in {directory}")


# -- training ------------------------------------------------------------------

ABLATIONS = (None, "bl-p", "bl-cam", "bl-l3")


@dataclasses.dataclass
class JndTrainConfig:
    steps: int = 50
    batch: int = 32
    crop: int = 176
    lr: float = 1e-5
    alpha: float = 0.1
    beta: float = 1.0
    gamma: float = 0.1
    t0: float = losses.DEFAULT_T0
    iqa_weights: tuple = losses.DEFAULT_IQA_WEIGHTS
    amplitude: float = 0.2
    activation: str = "sigmoid"
    seed: int = 0
    ablation: str = None
    checkpoint_every: int = 25
    log_every: int = 10

    def __post_init__(self):
        if self.crop % GENERATOR_DOWNSAMPLE:
            raise ConfigurationError(f"crop must be divisible by {GENERATOR_DOWNSAMPLE}")
        if self.batch < 1 or self.steps < 1:
            raise ConfigurationError("batch and steps must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.t0 <= 0:
            raise ConfigurationError("t0 must be > 0")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"unknown ablation {self.ablation!r}, pick from {ABLATIONS[1:]}")


@dataclasses.dataclass
class JndTrainResult:
    generator: JndGenerator
    trace: list  # rows of (step, loss1, loss2, loss3, total)
    codec_hash_checks: int
    grad_covered: set
    grad_missing: set
    duration_s: float
    resume_state: dict = None  # feed back as `state` to continue the run


def jnd_training_step(codec, generator, x0, prior_source, positions, cfg):
    """One forward pass of the full objective on a prepared batch; returns the
    LossBreakdown (tensor-valued, ready for backward)."""
    gamma = 0.0 if cfg.ablation == "bl-l3" else cfg.gamma
    grad_mag = losses.gradient_magnitude(x0)
    xc, xg = prior_source.maps(x0, positions)
    xj = generator(x0, xg, xc)
    y0 = torch.clamp(x0 + xj, 0.0, 1.0)

    loss1 = losses.magnitude_loss(xj, grad_mag, cfg.t0)

    if cfg.ablation == "bl-p":
        # signal-domain ablation: quality judged on the displayed images
        loss2 = losses.aic_loss(x0, y0, cfg.iqa_weights)
    else:
        with torch.no_grad():
            x2 = codec.degrade(x0, mode="eval")
        y2 = codec.degrade(y0, mode="eval")
        loss2 = losses.aic_loss(x2, y2, cfg.iqa_weights)

    if gamma == 0.0:
        with torch.no_grad():
            yc = priors.cam_batch(codec, y0.detach(), differentiable=False)
            loss3 = losses.attention_loss(xc, yc)
    else:
        yc = priors.cam_batch(codec, y0, differentiable=True)
        loss3 = losses.attention_loss(xc, yc)

    return losses.total_loss((loss1, loss2, loss3), cfg.alpha, cfg.beta, gamma)


def train_jnd(codec, collection, cfg: JndTrainConfig, external_priors=None, log=print, state=None):
    """Train the generator on crops from `collection` with the codec frozen.

    The codec parameter hash is verified after every optimizer step; any
    change is a hard failure. Gradient coverage over generator parameters is
    tracked for the whole run.
    """
    codec.require_trained("JND training")
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    frozen_hash = param_hash(codec)

    if cfg.ablation == "bl-cam":
        if external_priors is None:
            raise ConfigurationError("bl-cam ablation needs external prior maps")
        if external_priors.names is None:
            external_priors.bind(collection)
        prior_source = external_priors
    else:
        prior_source = CodecPriorSource(codec)

    torch.manual_seed(cfg.seed)
    rng = datamod.make_rng(cfg.seed)
    if state is None:
        generator = JndGenerator(amplitude=cfg.amplitude, activation=cfg.activation)
        opt = torch.optim.Adam(generator.parameters(), lr=cfg.lr)
        start_step = 0
        trace = []
    else:
        generator = state["generator"]
        opt = torch.optim.Adam(generator.parameters(), lr=cfg.lr)
        opt.load_state_dict(state["optimizer"])
        start_step = state["step"]
        trace = list(state["trace"])
        rng.bit_generator.state = state["rng_state"]
        torch.set_rng_state(state["torch_rng_state"])

    generator.train()
    last_good = copy.deepcopy(generator.state_dict())
    grad_covered = set()
    hash_checks = 0
    t0 = time.time()

    for step in range(start_step + 1, cfg.steps + 1):
        crops, positions = datamod.sample_crops(collection, cfg.crop, cfg.batch, rng)
        x0 = datamod.to_batch(crops)
        opt.zero_grad()
        try:
            breakdown = jnd_training_step(codec, generator, x0, prior_source, positions, cfg)
        except TrainingDivergedError as exc:
            generator.load_state_dict(last_good)
            raise TrainingDivergedError(
                f"JND training diverged at step {step}: {exc}", step=step, layer=exc.layer
            ) from exc
        total = breakdown.total
        parts = breakdown.detached()
        if not all(np.isfinite([parts.loss1, parts.loss2, parts.loss3, parts.total])):
            generator.load_state_dict(last_good)
            raise TrainingDivergedError(
                f"JND training diverged at step {step}: {parts}", step=step
            )
        total.backward()
        for name, p in generator.named_parameters():
            if p.grad is not None and float(p.grad.abs().max()) > 0.0:
                grad_covered.add(name)
        opt.step()
        trace.append((step, parts.loss1, parts.loss2, parts.loss3, parts.total))

        if param_hash(codec) != frozen_hash:
            raise AssertionError(f"frozen codec parameters changed at step {step}")
        hash_checks += 1

        if step % cfg.checkpoint_every == 0:
            last_good = copy.deepcopy(generator.state_dict())
        if log is not None and step % cfg.log_every == 0:
            log(
                f"jnd step {step}/{cfg.steps} "
                f"loss1 {parts.loss1:.4f} loss2 {parts.loss2:.5f} "
                f"loss3 {parts.loss3:.5f} total {parts.total:.5f}"
            )

    all_names = {name for name, _ in generator.named_parameters()}
    return JndTrainResult(
        generator=generator,
        trace=trace,
        codec_hash_checks=hash_checks,
        grad_covered=grad_covered,
        grad_missing=all_names - grad_covered,
        duration_s=time.time() - t0,
        resume_state={
            "generator": generator,
            "optimizer": opt.state_dict(),
            "step": cfg.steps,
            "trace": list(trace),
            "rng_state": rng.bit_generator.state,
            "torch_rng_state": torch.get_rng_state(),
        },
    )
