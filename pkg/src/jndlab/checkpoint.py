"""Self-describing checkpoint containers with atomic writes.

A checkpoint stores the parameter arrays, a config snapshot, the step count,
the tail of the loss trace, and a format-version tag; reloading reproduces
eval-mode outputs exactly.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
from pathlib import Path

import torch

from jndlab.codec import DegradationCodec
from jndlab.errors import ConfigurationError
from jndlab.generator import JndGenerator

FORMAT_VERSION = 1
TRACE_TAIL = 50


def _config_snapshot(config):
    if config is None:
        return {}
    if dataclasses.is_dataclass(config):
        return dataclasses.asdict(config)
    return dict(config)


def save_checkpoint(path, kind, model, config=None, step=0, trace=None, extra=None):
    """Atomically write a checkpoint (write to temp file, rename over path)."""
    if kind not in ("codec", "generator"):
        raise ConfigurationError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "state_dict": model.state_dict(),
        "config": _config_snapshot(config),
        "step": int(step),
        "trace_tail": list(trace[-TRACE_TAIL:]) if trace else [],
        "extra": dict(extra or {}),
    }
    if kind == "codec":
        payload["extra"].setdefault("trained", bool(getattr(model, "trained", False)))
        payload["extra"].setdefault("fidelity_db", getattr(model, "fidelity_db", None))
        payload["extra"].setdefault("train_steps", getattr(model, "train_steps", 0))
    if kind == "generator":
        payload["extra"].setdefault("amplitude", model.amplitude)
        payload["extra"].setdefault("activation", model.activation)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_payload(path):
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(
            f"{path}: unsupported checkpoint format version {version!r}"
        )
    return payload


def load_codec(path):
    """Rebuild a DegradationCodec plus its payload from a checkpoint file."""
    payload = load_payload(path)
    if payload["kind"] != "codec":
        raise ConfigurationError(f"{path}: expected a codec checkpoint, got {payload['kind']!r}")
    codec = DegradationCodec()
    codec.load_state_dict(payload["state_dict"])
    codec.eval()
    extra = payload["extra"]
    if extra.get("trained"):
        codec.mark_trained(fidelity_db=extra.get("fidelity_db"), steps=extra.get("train_steps"))
    return codec, payload


def load_generator(path):
    """Rebuild a JndGenerator plus its payload from a checkpoint file."""
    payload = load_payload(path)
    if payload["kind"] != "generator":
        raise ConfigurationError(
            f"{path}: expected a generator checkpoint, got {payload['kind']!r}"
        )
    generator = JndGenerator(
        amplitude=payload["extra"].get("amplitude", 0.2),
        activation=payload["extra"].get("activation", "sigmoid"),
    )
    generator.load_state_dict(payload["state_dict"])
    generator.eval()
    return generator, payload
