"""Experiment configuration: defaults, validation, and key-value file loading."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from jndlab.codec import CodecTrainConfig
from jndlab.errors import ConfigurationError
from jndlab.generator import JndTrainConfig

CKPT_DIR_ENV = "JNDLAB_CKPT_DIR"


@dataclasses.dataclass
class ExperimentConfig:
    """One config for the two-stage run: offline codec training, then
    generator training against the frozen codec."""

    data_dir: str = ""
    out_dir: str = "runs/experiment"
    seed: int = 0
    crop: int = 176
    # stage 1: codec
    codec_steps: int = 2000
    codec_batch: int = 2
    codec_lr: float = 1e-4
    codec_lr_final: float = 1e-5
    lambda_rate: float = 5e-4
    codec_target_psnr: float = 40.0
    # stage 2: generator
    jnd_steps: int = 50
    batch: int = 32
    lr: float = 1e-5
    alpha: float = 0.1
    beta: float = 1.0
    gamma: float = 0.1
    t0: float = 1e-4
    jnd_amplitude: float = 0.2
    jnd_activation: str = "sigmoid"
    ablation: str = None
    prior_maps_dir: str = None
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.crop % 16:
            raise ConfigurationError("crop must be divisible by 16")
        if self.batch < 1 or self.codec_batch < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigurationError("loss weights must be >= 0")

    def codec_config(self) -> CodecTrainConfig:
        return CodecTrainConfig(
            steps=self.codec_steps,
            batch=self.codec_batch,
            crop=self.crop,
            lr=self.codec_lr,
            lr_final=self.codec_lr_final,
            lambda_rate=self.lambda_rate,
            seed=self.seed,
            target_psnr=self.codec_target_psnr,
            checkpoint_every=self.checkpoint_every,
        )

    def jnd_config(self) -> JndTrainConfig:
        return JndTrainConfig(
            steps=self.jnd_steps,
            batch=self.batch,
            crop=self.crop,
            lr=self.lr,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            t0=self.t0,
            amplitude=self.jnd_amplitude,
            activation=self.jnd_activation,
            seed=self.seed,
            ablation=self.ablation,
            checkpoint_every=self.checkpoint_every,
        )


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path, overrides=None) -> ExperimentConfig:
    """Build a config from a YAML key-value file plus explicit overrides."""
    values = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: expected a key-value mapping")
        unknown = set(raw) - _FIELDS
        if unknown:
            raise ConfigurationError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig(**values)
