"""Learned lossy degradation codec: analysis/synthesis transforms with GDN,
additive-noise/rounding quantizer, and a per-channel factorized rate model.

The codec is trained offline to high fidelity and then frozen; downstream
modules treat it as the fixed mapping from a displayed image to its
perceived counterpart.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
import time

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from jndlab import data as datamod
from jndlab import imaging
from jndlab.errors import ConfigurationError, ShapeMismatchError, TrainingDivergedError

LATENT_CHANNELS = 128
DOWNSAMPLE_FACTOR = 8
BETA_MIN = 1e-6
GAMMA_PEDESTAL = 1e-4
LIKELIHOOD_FLOOR = 2.0 ** -50


class _RoundSTE(torch.autograd.Function):
    """Round to nearest integer; identity gradient so JND training can
    propagate through the frozen codec's eval-mode quantizer."""

    @staticmethod
    def forward(ctx, x):
        return torch.round(x)

    @staticmethod
    def backward(ctx, grad):
        return grad


class _NonNegativeGrad(torch.autograd.Function):
    """Identity forward; clamps negative backward signals to zero.
    Applied at GDN outputs during guided backpropagation."""

    @staticmethod
    def forward(ctx, x):
        return x

    @staticmethod
    def backward(ctx, grad):
        return grad.clamp(min=0.0)


class GDN(nn.Module):
    """Generalized divisive normalization, y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).

    inverse=True gives the multiplicative form y_i = x_i * sqrt(...). Both
    beta and gamma are reparameterized as squares so beta >= BETA_MIN and
    gamma >= GAMMA_PEDESTAL hold for any parameter value, keeping every
    denominator at or above BETA_MIN.
    """

    def __init__(self, channels, inverse=False):
        super().__init__()
        self.inverse = inverse
        self.beta_raw = nn.Parameter(torch.ones(channels))
        gamma0 = 0.1 * torch.eye(channels) + GAMMA_PEDESTAL
        self.gamma_raw = nn.Parameter(gamma0.sqrt())
        self.gate_backward = False
        self.last_min_denominator = float("inf")

    def forward(self, x):
        beta = BETA_MIN + self.beta_raw * self.beta_raw
        gamma = self.gamma_raw * self.gamma_raw
        weight = gamma.view(gamma.shape[0], gamma.shape[1], 1, 1)
        denom_sq = F.conv2d(x * x, weight, beta)
        with torch.no_grad():
            self.last_min_denominator = float(denom_sq.min())
        scale = denom_sq.sqrt()
        out = x * scale if self.inverse else x / scale
        if self.gate_backward:
            out = _NonNegativeGrad.apply(out)
        return out


class FactorizedRateModel(nn.Module):
    """Per-channel monotone CDF built from a small chain of nonnegative-weight
    layers; likelihood of an integer symbol q is c(q + 0.5) - c(q - 0.5).
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for k in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            m = nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init))
            b = nn.Parameter(torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5))
            self.matrices.append(m)
            self.biases.append(b)
            if k < len(dims) - 2:
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))
        self.floor_hits = 0

    def _logits(self, v):
        # v: (channels, 1, n) -> logits of the cumulative at each value
        x = v
        for k, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.bmm(F.softplus(m), x) + b
            if k < len(self.factors):
                x = x + torch.tanh(self.factors[k]) * torch.tanh(x)
        return x

    def likelihood(self, q):
        """q: (B, C, h, w) quantized latent -> per-element likelihood, floored."""
        b, c, h, w = q.shape
        v = q.permute(1, 0, 2, 3).reshape(c, 1, b * h * w)
        lower = self._logits(v - 0.5)
        upper = self._logits(v + 0.5)
        sign = -torch.sign(lower + upper).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        with torch.no_grad():
            self.floor_hits += int((p < LIKELIHOOD_FLOOR).sum())
        p = p.clamp(min=LIKELIHOOD_FLOOR)
        return p.reshape(c, b, h, w).permute(1, 0, 2, 3)

    def bits(self, q):
        """Total information content of a quantized latent batch, in bits."""
        p = self.likelihood(q)
        return -torch.log2(p).sum()


def _conv(cin, cout):
    return nn.Conv2d(cin, cout, 5, stride=2, padding=2, padding_mode="replicate")


def _deconv(cin, cout):
    return nn.ConvTranspose2d(cin, cout, 5, stride=2, padding=2, output_padding=1)


DEFAULT_QUANTIZATION_STEP = 1.0 / 16.0


class DegradationCodec(nn.Module):
    """Three-stage strided codec (w,h,3 -> w/8,h/8,128 -> w,h,3) with GDN/iGDN
    nonlinearities and a factorized rate model over the quantized latent.

    The latent is scaled by 1/quantization_step before integer quantization
    (and back on the synthesis side): a small step is the low-QP/high-fidelity
    regime, spending rate to keep rounding noise far below the signal."""

    def __init__(self, latent_channels=LATENT_CHANNELS, quantization_step=DEFAULT_QUANTIZATION_STEP):
        super().__init__()
        n = latent_channels
        self.analysis_layers = nn.ModuleList(
            [_conv(3, n), GDN(n), _conv(n, n), GDN(n), _conv(n, n)]
        )
        self.synthesis_layers = nn.ModuleList(
            [_deconv(n, n), GDN(n, inverse=True), _deconv(n, n), GDN(n, inverse=True), _deconv(n, 3)]
        )
        self.rate_model = FactorizedRateModel(n)
        self.register_buffer("quantization_step", torch.tensor(float(quantization_step)))
        self.latent_channels = n
        self.trained = False
        self.train_steps = 0
        self.fidelity_db = None
        self._identity_carry_init()

    def _identity_carry_init(self):
        """Start the transform pair as a low-pass image pyramid.

        Three latent channels carry an anti-aliased decimation of RGB through
        the analysis stack and bilinear upsampling back through synthesis, so
        training begins from a coarse-identity codec and spends its budget on
        residual detail instead of rediscovering reconstruction from scratch.
        The remaining channels keep (damped) random init and learn freely.
        """
        binomial = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
        decimate = torch.outer(binomial, binomial)
        tent = torch.tensor([0.0, 0.5, 1.0, 0.5, 0.0])
        upsample = torch.outer(tent, tent)
        with torch.no_grad():
            first = self.analysis_layers[0].weight  # (128, 3, 5, 5)
            first.mul_(0.1)
            for i in range(3):
                first[i, i] = decimate
            self.analysis_layers[0].bias.zero_()
            for li in (2, 4):
                w = self.analysis_layers[li].weight  # (128, 128, 5, 5)
                w.mul_(0.1)
                for i in range(3):
                    w[i].zero_()
                    w[i, i] = decimate
                self.analysis_layers[li].bias.zero_()
            for li in (0, 2):
                w = self.synthesis_layers[li].weight  # (in=128, out=128, 5, 5)
                w.mul_(0.1)
                for i in range(3):
                    w[i].zero_()
                    w[i, i] = upsample
                self.synthesis_layers[li].bias.zero_()
            last = self.synthesis_layers[4].weight  # (128, 3, 5, 5)
            last.mul_(0.05)
            for i in range(3):
                last[i].zero_()
                last[i, i] = upsample
            self.synthesis_layers[4].bias.zero_()

    # -- transforms ---------------------------------------------------------

    def analysis(self, x):
        """Analysis transform; x is (B, 3, H, W) with H, W divisible by 8."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeMismatchError(f"analysis: expected (B,3,H,W), got {tuple(x.shape)}")
        if x.shape[2] % DOWNSAMPLE_FACTOR or x.shape[3] % DOWNSAMPLE_FACTOR:
            raise ShapeMismatchError(
                f"analysis: spatial sides must be divisible by {DOWNSAMPLE_FACTOR}, "
                f"got {x.shape[2]}x{x.shape[3]} (degrade() pads arbitrary sizes)"
            )
        h = x
        for idx, layer in enumerate(self.analysis_layers):
            h = layer(h)
            if not torch.isfinite(h).all():
                raise TrainingDivergedError(
                    f"analysis produced non-finite values at layer {idx}", layer=idx
                )
        return h / self.quantization_step

    def quantize(self, z, mode="eval"):
        """eval: round to nearest integer (straight-through gradient);
        train: additive uniform noise in (-0.5, 0.5)."""
        if mode == "eval":
            return _RoundSTE.apply(z)
        if mode == "train":
            return z + (torch.rand_like(z) - 0.5)
        raise ConfigurationError(f"quantize: unknown mode {mode!r}")

    def rate_estimate(self, q):
        """Estimated bits to code q under the factorized density (scalar tensor)."""
        return self.rate_model.bits(q)

    def _synthesize_raw(self, q):
        h = q * self.quantization_step
        offset = len(self.analysis_layers)
        for idx, layer in enumerate(self.synthesis_layers):
            h = layer(h)
            if not torch.isfinite(h).all():
                raise TrainingDivergedError(
                    f"synthesis produced non-finite values at layer {idx}",
                    layer=offset + idx,
                )
        return h

    def synthesis(self, q):
        """Synthesis transform; output clipped to [0,1]."""
        if q.dim() != 4 or q.shape[1] != self.latent_channels:
            raise ShapeMismatchError(
                f"synthesis: expected (B,{self.latent_channels},h,w), got {tuple(q.shape)}"
            )
        return self._synthesize_raw(q).clamp(0.0, 1.0)

    def degrade(self, x, mode="eval"):
        """synthesis(quantize(analysis(x))); arbitrary sizes are replicate-padded
        up to a multiple of 8 and cropped back, so output shape equals input shape."""
        h0, w0 = x.shape[2], x.shape[3]
        xp = pad_to_multiple(x, DOWNSAMPLE_FACTOR)
        z = self.analysis(xp)
        q = self.quantize(z, mode)
        y = self.synthesis(q)
        return y[:, :, :h0, :w0]

    def forward(self, x, mode="train"):
        """Training forward: unclamped reconstruction plus total rate in bits."""
        z = self.analysis(x)
        q = self.quantize(z, mode)
        x_hat = self._synthesize_raw(q)
        bits = self.rate_estimate(q)
        return x_hat, bits

    # -- contracts ----------------------------------------------------------

    def require_trained(self, who="downstream module"):
        if not self.trained:
            raise ConfigurationError(
                f"{who} requires a trained codec; this model has not completed training"
            )

    def mark_trained(self, fidelity_db=None, steps=None):
        self.trained = True
        if fidelity_db is not None:
            self.fidelity_db = float(fidelity_db)
        if steps is not None:
            self.train_steps = int(steps)

    def min_gdn_denominator(self):
        """Smallest squared GDN/iGDN denominator observed in the last forwards."""
        layers = [m for m in self.modules() if isinstance(m, GDN)]
        return min(m.last_min_denominator for m in layers)

    def guided_gates(self, enabled):
        for m in self.modules():
            if isinstance(m, GDN):
                m.gate_backward = enabled

    def first_nonfinite_layer(self, x):
        """Replay the transform chain on x and return the index (analysis then
        synthesis, 0-based) of the first layer producing non-finite values."""
        with torch.no_grad():
            h = pad_to_multiple(x, DOWNSAMPLE_FACTOR)
            idx = 0
            for layer in self.analysis_layers:
                h = layer(h)
                if not torch.isfinite(h).all():
                    return idx
                idx += 1
            h = self.quantize(h, "eval")
            for layer in self.synthesis_layers:
                h = layer(h)
                if not torch.isfinite(h).all():
                    return idx
                idx += 1
        return None


def pad_to_multiple(x, multiple):
    """Replicate-pad bottom/right so both spatial sides divide `multiple`."""
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


def param_hash(module) -> str:
    """Content hash of all parameters and buffers, for frozen-model checks."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


# -- training ----------------------------------------------------------------


@dataclasses.dataclass
class CodecTrainConfig:
    steps: int = 2000
    batch: int = 2
    crop: int = 176
    lr: float = 1e-4
    lr_final: float = 1e-5
    lambda_rate: float = 5e-4
    seed: int = 0
    target_psnr: float = 40.0
    checkpoint_every: int = 200
    log_every: int = 50

    def __post_init__(self):
        if self.crop % DOWNSAMPLE_FACTOR:
            raise ConfigurationError(f"crop must be divisible by {DOWNSAMPLE_FACTOR}")
        if self.batch < 1 or self.steps < 1:
            raise ConfigurationError("batch and steps must be >= 1")
        if self.lambda_rate < 0:
            raise ConfigurationError("lambda_rate must be >= 0")


@dataclasses.dataclass
class CodecTrainResult:
    codec: DegradationCodec
    trace: list  # rows of (step, distortion, rate_bits, total)
    eval_psnr: float
    duration_s: float
    resume_state: dict = None  # feed back as `state` to continue the run


def evaluate_codec_psnr(codec, images, crop=None):
    """Mean eval-mode reconstruction PSNR over center crops of `images`."""
    codec.eval()
    vals = []
    with torch.no_grad():
        for img in images:
            if crop is not None:
                img = datamod.center_crop(img, crop)
            x = datamod.to_batch(img[None])
            y = codec.degrade(x, mode="eval")
            vals.append(imaging.psnr(datamod.from_batch(x)[0], datamod.from_batch(y)[0]))
    return float(np.mean(vals))


def train_codec(collection, cfg: CodecTrainConfig, log=print, state=None):
    """Overfit/train the codec on crops from `collection`, minimizing
    255^2-scaled MSE plus lambda_rate times the estimated rate.

    `state` optionally carries (codec, optimizer_state, start_step, rng_state,
    torch_rng_state, trace) to resume a checkpointed run.
    """
    torch.manual_seed(cfg.seed)
    rng = datamod.make_rng(cfg.seed)
    if state is None:
        codec = DegradationCodec()
        start_step = 0
        trace = []
        opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr)
    else:
        codec = state["codec"]
        start_step = state["step"]
        trace = list(state["trace"])
        opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr)
        opt.load_state_dict(state["optimizer"])
        rng.bit_generator.state = state["rng_state"]
        torch.set_rng_state(state["torch_rng_state"])

    codec.train()
    last_good = copy.deepcopy(codec.state_dict())
    t0 = time.time()
    for step in range(start_step + 1, cfg.steps + 1):
        # linear LR decay toward lr_final stabilizes the late overfit phase
        frac = step / cfg.steps
        for group in opt.param_groups:
            group["lr"] = cfg.lr + (cfg.lr_final - cfg.lr) * frac
        crops, _ = datamod.sample_crops(collection, cfg.crop, cfg.batch, rng)
        x = datamod.to_batch(crops)
        opt.zero_grad()
        try:
            x_hat, bits = codec(x, mode="train")
        except TrainingDivergedError as exc:
            codec.load_state_dict(last_good)
            raise TrainingDivergedError(
                f"codec training diverged at step {step}: {exc}",
                step=step,
                layer=exc.layer,
            ) from exc
        distortion = ((x_hat - x) ** 2).mean() * (255.0 ** 2)
        rate = bits / cfg.batch
        loss = distortion + cfg.lambda_rate * rate
        if not torch.isfinite(loss):
            codec.load_state_dict(last_good)
            raise TrainingDivergedError(
                f"codec training diverged at step {step}",
                step=step,
                layer=codec.first_nonfinite_layer(x),
            )
        loss.backward()
        opt.step()
        trace.append(
            (step, float(distortion.detach()), float(rate.detach()), float(loss.detach()))
        )
        if codec.min_gdn_denominator() < BETA_MIN:
            raise TrainingDivergedError(
                f"GDN denominator below {BETA_MIN} at step {step}", step=step
            )
        if step % cfg.checkpoint_every == 0:
            last_good = copy.deepcopy(codec.state_dict())
        if log is not None and step % cfg.log_every == 0:
            log(
                f"codec step {step}/{cfg.steps} "
                f"distortion {trace[-1][1]:.2f} rate {trace[-1][2]:.0f} bits "
                f"loss {trace[-1][3]:.2f}"
            )

    resume_state = {
        "codec": codec,
        "optimizer": opt.state_dict(),
        "step": cfg.steps,
        "trace": list(trace),
        "rng_state": rng.bit_generator.state,
        "torch_rng_state": torch.get_rng_state(),
    }
    fidelity = evaluate_codec_psnr(codec, collection.images, crop=cfg.crop)
    codec.mark_trained(fidelity_db=fidelity, steps=cfg.steps)
    if log is not None:
        log(f"codec training done: eval PSNR {fidelity:.2f} dB (target {cfg.target_psnr})")
    return CodecTrainResult(
        codec=codec,
        trace=trace,
        eval_psnr=fidelity,
        duration_s=time.time() - t0,
        resume_state=resume_state,
    )
