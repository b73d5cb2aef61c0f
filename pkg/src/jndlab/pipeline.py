"""Two-stage experiment orchestration: offline codec training, then generator
training against the frozen codec, with checkpoints, traces, and figures."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from jndlab import checkpoint, codec as codecmod, data, generator as genmod, report
from jndlab.codec import param_hash
from jndlab.config import ExperimentConfig
from jndlab.errors import ConfigurationError


@dataclasses.dataclass
class ExperimentArtifacts:
    codec_ckpt: Path
    generator_ckpt: Path
    codec_trace_csv: Path
    jnd_trace_csv: Path
    summary_path: Path
    codec_psnr: float


def run_experiment(cfg: ExperimentConfig, log=print) -> ExperimentArtifacts:
    """Stage 1 trains the codec; stage 2 trains the generator with the codec
    frozen (hash-verified every step). Both degradation paths share the single
    codec instance."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    collection = data.ingest(cfg.data_dir, cfg.crop)
    if log is not None and collection.skipped_small:
        log(f"ingest: skipped {collection.skipped_small} undersized images")

    codec_result = codecmod.train_codec(collection, cfg.codec_config(), log=log)
    codec_ckpt = out / "codec.ckpt"
    checkpoint.save_checkpoint(
        codec_ckpt, "codec", codec_result.codec, cfg, step=cfg.codec_steps,
        trace=codec_result.trace,
    )
    codec_csv = report.write_codec_trace(out / "codec_trace.csv", codec_result.trace)
    report.plot_codec_trace(codec_result.trace, out / "codec_trace.png")

    hash_before = param_hash(codec_result.codec)
    external = None
    if cfg.ablation == "bl-cam":
        if not cfg.prior_maps_dir:
            raise ConfigurationError("bl-cam ablation requires prior_maps_dir")
        external = genmod.load_external_priors(cfg.prior_maps_dir, collection)
    jnd_result = genmod.train_jnd(
        codec_result.codec, collection, cfg.jnd_config(), external_priors=external, log=log
    )
    if param_hash(codec_result.codec) != hash_before:
        raise AssertionError("codec parameters changed across stage 2")

    gen_ckpt = out / "generator.ckpt"
    checkpoint.save_checkpoint(
        gen_ckpt, "generator", jnd_result.generator, cfg, step=cfg.jnd_steps,
        trace=jnd_result.trace,
    )
    jnd_csv = report.write_jnd_trace(out / "jnd_trace.csv", jnd_result.trace)
    report.plot_jnd_trace(jnd_result.trace, out / "jnd_trace.png")

    summary = {
        "codec_psnr_db": codec_result.eval_psnr,
        "codec_steps": cfg.codec_steps,
        "jnd_steps": cfg.jnd_steps,
        "codec_hash_checks": jnd_result.codec_hash_checks,
        "generator_params_without_gradient": sorted(jnd_result.grad_missing),
        "final_losses": dict(
            zip(["step", "loss1", "loss2", "loss3", "total"], jnd_result.trace[-1])
        ),
        "config": dataclasses.asdict(cfg),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2))
    if log is not None:
        log(f"experiment complete: {summary_path}")
    return ExperimentArtifacts(
        codec_ckpt=codec_ckpt,
        generator_ckpt=gen_ckpt,
        codec_trace_csv=codec_csv,
        jnd_trace_csv=jnd_csv,
        summary_path=summary_path,
        codec_psnr=codec_result.eval_psnr,
    )
