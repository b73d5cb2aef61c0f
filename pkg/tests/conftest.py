import os
from pathlib import Path

import numpy as np
import pytest
import torch

import synthimages
from jndlab import checkpoint, codec as codecmod, data, generator as genmod

# Optional cache for the expensive desk-scale fixtures across local runs:
# set JNDLAB_TEST_CACHE to a directory to reuse trained checkpoints.
_CACHE = os.environ.get("JNDLAB_TEST_CACHE")


def _cache_path(name):
    if not _CACHE:
        return None
    path = Path(_CACHE) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def tiny_collection(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    synthimages.write_images(
        [
            ("a_ramp", synthimages.ramp(64)),
            ("b_grating", synthimages.grating(64, freq=4.0)),
            ("c_blobs", synthimages.blobs(64, n=6, seed=3)),
            ("d_smooth", synthimages.smooth_noise(64, sigma=3.0, seed=5)),
        ],
        root,
    )
    return data.ingest(root, 48)


@pytest.fixture(scope="session")
def tiny_codec(tiny_collection):
    """A quickly overfit codec for unit tests that need a trained model."""
    cached = _cache_path("tiny_codec.ckpt")
    if cached and cached.exists():
        codec, _ = checkpoint.load_codec(cached)
        return codec
    cfg = codecmod.CodecTrainConfig(
        steps=150, batch=2, crop=48, lr=3e-4, lr_final=1e-4, seed=0, log_every=1000
    )
    result = codecmod.train_codec(tiny_collection, cfg, log=None)
    if cached:
        checkpoint.save_checkpoint(cached, "codec", result.codec, cfg, step=cfg.steps)
    return result.codec


@pytest.fixture(scope="session")
def tiny_generator(tiny_codec, tiny_collection):
    """A generator trained for a few steps, for calibration/CLI tests."""
    cached = _cache_path("tiny_generator.ckpt")
    if cached and cached.exists():
        gen, _ = checkpoint.load_generator(cached)
        return gen
    cfg = genmod.JndTrainConfig(steps=3, batch=2, crop=48, seed=0, log_every=100)
    result = genmod.train_jnd(tiny_codec, tiny_collection, cfg, log=None)
    if cached:
        checkpoint.save_checkpoint(cached, "generator", result.generator, cfg, step=cfg.steps)
    return result.generator


# -- desk-scale fixtures (acceptance suite) ------------------------------------


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_data")
    synthimages.write_images(synthimages.desk_set(176), root)
    return root


@pytest.fixture(scope="session")
def desk_collection(desk_dir):
    return data.ingest(desk_dir, 176)


DESK_CODEC_CONFIG = dict(steps=2000, batch=8, crop=176, lr=4e-4, lr_final=8e-5, seed=0)


def _progress(message):
    print(message, flush=True)


@pytest.fixture(scope="session")
def desk_codec_result(desk_collection):
    """Desk-scale codec training run (the convergence acceptance criterion)."""
    cfg = codecmod.CodecTrainConfig(**DESK_CODEC_CONFIG, log_every=200)
    cached = _cache_path("desk_codec.ckpt")
    if cached and cached.exists():
        codec, payload = checkpoint.load_codec(cached)
        return codecmod.CodecTrainResult(
            codec=codec,
            trace=payload["extra"]["full_trace"],
            eval_psnr=payload["extra"]["fidelity_db"],
            duration_s=0.0,
        )
    _progress("\n[fixture] training desk-scale codec (2000 steps, ~1 h on one CPU core)")
    result = codecmod.train_codec(desk_collection, cfg, log=_progress)
    if cached:
        checkpoint.save_checkpoint(
            cached, "codec", result.codec, cfg, step=cfg.steps,
            extra={"full_trace": result.trace},
        )
    return result


@pytest.fixture(scope="session")
def desk_codec(desk_codec_result):
    return desk_codec_result.codec


SMOKE_JND_CONFIG = dict(
    steps=50, batch=32, crop=48, lr=1e-5, alpha=0.1, beta=1.0, gamma=0.1, seed=0
)


@pytest.fixture(scope="session")
def smoke_jnd_result(desk_codec, desk_collection):
    """50-step generator training run at the paper's optimizer settings."""
    cfg = genmod.JndTrainConfig(**SMOKE_JND_CONFIG, log_every=10)
    cached = _cache_path("smoke_generator.ckpt")
    if cached and cached.exists():
        gen, payload = checkpoint.load_generator(cached)
        extra = payload["extra"]
        return genmod.JndTrainResult(
            generator=gen,
            trace=extra["full_trace"],
            codec_hash_checks=extra["hash_checks"],
            grad_covered=set(extra["grad_covered"]),
            grad_missing=set(extra["grad_missing"]),
            duration_s=0.0,
        )
    _progress("\n[fixture] 50-step generator run (batch 32, ~7 min on one CPU core)")
    result = genmod.train_jnd(desk_codec, desk_collection, cfg, log=_progress)
    if cached:
        checkpoint.save_checkpoint(
            cached, "generator", result.generator, cfg, step=cfg.steps,
            extra={
                "full_trace": result.trace,
                "hash_checks": result.codec_hash_checks,
                "grad_covered": sorted(result.grad_covered),
                "grad_missing": sorted(result.grad_missing),
            },
        )
    return result


@pytest.fixture(scope="session")
def eval12_images():
    return synthimages.eval_set(176, count=12)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)
