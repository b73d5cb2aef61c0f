"""Command-line entry point.

Subcommands: train-codec, train-jnd, generate, extract-priors, inject,
evaluate, serve. Checkpoint paths without a directory component resolve
against $JNDLAB_CKPT_DIR when it is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from jndlab.config import CKPT_DIR_ENV, load_config


def resolve_ckpt(path, for_write=False):
    p = Path(path)
    if p.is_absolute() or p.parent != Path("."):
        return p
    env = os.environ.get(CKPT_DIR_ENV)
    if env and (for_write or not p.exists()):
        return Path(env) / p
    return p


def _load_jnd_map(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as bundle:
            return bundle["jnd"]
    if path.suffix == ".npy":
        return np.load(path)
    raise SystemExit(f"unsupported JND map container {path} (use .npz/.npy)")


def _save_jnd_map(xj, out_path):
    from jndlab import imaging

    out_path = Path(out_path)
    if out_path.suffix != ".npz":
        out_path = out_path.with_suffix(".npz")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out_path, jnd=xj.astype(np.float32))
    viz = out_path.with_suffix(".png")
    peak = float(xj.max())
    scaled = xj / peak if peak > 0 else xj
    imaging.save_image(np.clip(scaled, 0, 1), viz)
    return out_path, viz


def cmd_train_codec(args):
    from jndlab import checkpoint, codec as codecmod, data, report

    cfg_all = load_config(
        args.config,
        {
            "data_dir": args.data,
            "codec_steps": args.steps,
            "codec_batch": args.batch,
            "lambda_rate": args.lambda_rate,
            "codec_lr": args.lr,
            "crop": args.crop,
            "seed": args.seed,
        },
    )
    cfg = cfg_all.codec_config()
    collection = data.ingest(cfg_all.data_dir, cfg.crop)
    result = codecmod.train_codec(collection, cfg)
    out = resolve_ckpt(args.out, for_write=True)
    checkpoint.save_checkpoint(out, "codec", result.codec, cfg, step=cfg.steps, trace=result.trace)
    trace_csv = out.with_suffix(".trace.csv")
    report.write_codec_trace(trace_csv, result.trace)
    report.plot_codec_trace(result.trace, out.with_suffix(".trace.png"))
    print(f"saved codec checkpoint {out} (eval PSNR {result.eval_psnr:.2f} dB)")
    return 0


def cmd_train_jnd(args):
    from jndlab import checkpoint, data, generator as genmod, report

    cfg_all = load_config(
        args.config,
        {
            "data_dir": args.data,
            "jnd_steps": args.steps,
            "batch": args.batch,
            "lr": args.lr,
            "alpha": args.alpha,
            "beta": args.beta,
            "gamma": args.gamma,
            "crop": args.crop,
            "seed": args.seed,
            "ablation": args.ablate,
            "prior_maps_dir": args.prior_maps,
        },
    )
    cfg = cfg_all.jnd_config()
    codec, _ = checkpoint.load_codec(resolve_ckpt(args.codec))
    collection = data.ingest(cfg_all.data_dir, cfg.crop)
    external = None
    if cfg.ablation == "bl-cam":
        if not cfg_all.prior_maps_dir:
            raise SystemExit("--ablate bl-cam requires --prior-maps DIR")
        external = genmod.load_external_priors(cfg_all.prior_maps_dir, collection)
    result = genmod.train_jnd(codec, collection, cfg, external_priors=external)
    out = resolve_ckpt(args.out, for_write=True)
    checkpoint.save_checkpoint(out, "generator", result.generator, cfg, step=cfg.steps, trace=result.trace)
    trace_csv = out.with_suffix(".trace.csv")
    report.write_jnd_trace(trace_csv, result.trace)
    report.plot_jnd_trace(result.trace, out.with_suffix(".trace.png"))
    print(f"saved generator checkpoint {out} ({result.codec_hash_checks} frozen-codec checks)")
    return 0


def cmd_generate(args):
    from jndlab import checkpoint, generator as genmod, imaging

    codec, _ = checkpoint.load_codec(resolve_ckpt(args.codec))
    gen, _ = checkpoint.load_generator(resolve_ckpt(args.gen))
    image = imaging.load_image(args.image)
    xj = genmod.generate(codec, gen, image)
    container, viz = _save_jnd_map(xj, args.out_jnd)
    print(f"saved JND map {container} (visualization {viz})")
    return 0


def cmd_extract_priors(args):
    from jndlab import checkpoint, imaging, priors

    codec, _ = checkpoint.load_codec(resolve_ckpt(args.ckpt))
    image = imaging.load_image(args.image)
    maps = priors.extract_priors(codec, image)
    from PIL import Image

    cam8 = np.rint(maps.cam[:, :, 0] * 255.0).astype(np.uint8)
    Image.fromarray(cam8, mode="L").save(args.out_cam)
    g = maps.guided
    lo, hi = float(g.min()), float(g.max())
    scaled = (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)
    imaging.save_image(scaled, args.out_guided)
    print(
        f"saved priors: cam {args.out_cam}, guided {args.out_guided} "
        f"(target mse {maps.target_scalar:.3e})"
    )
    return 0


def cmd_inject(args):
    from jndlab import imaging, injection

    image = imaging.load_image(args.image)
    xj = _load_jnd_map(args.jnd)
    r = injection.rademacher(image.shape, args.seed)
    result = injection.calibrate_epsilon(image, xj, r, args.psnr)
    imaging.save_image(result.y0, args.out)
    print(
        f"saved {args.out}: epsilon {result.epsilon:.6g}, "
        f"achieved {result.achieved_psnr:.3f} dB (target {result.target_psnr}), "
        f"clipped fraction {result.clipped_fraction:.4f}, seed {result.seed}"
    )
    return 0


def cmd_evaluate(args):
    from jndlab import checkpoint, data, generator as genmod, injection, report

    codec, _ = checkpoint.load_codec(resolve_ckpt(args.codec))
    collection = data.ingest(args.images, crop_size=16)
    named_images = list(zip(collection.names, collection.images))
    model_maps = {}
    for ckpt_path in args.models:
        gen, _ = checkpoint.load_generator(resolve_ckpt(ckpt_path))
        label = Path(ckpt_path).stem
        model_maps[label] = {
            name: genmod.generate(codec, gen, img) for name, img in named_images
        }
        print(f"generated {len(named_images)} JND maps with {label}")
    rows = injection.evaluate_models(named_images, model_maps, args.psnr, args.seed)
    report.write_injection_report(args.report, rows)
    figure = Path(args.report).with_suffix(".png")
    report.plot_injection_report(rows, figure)
    print(f"wrote report {args.report} and figure {figure}")
    return 0


def cmd_serve(args):
    import uvicorn

    from jndlab.service import create_app
    from jndlab.subjective import ScoreStore, load_plan

    plan = load_plan(args.plan)
    store = ScoreStore(args.store)
    app = create_app(plan, store, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="jndlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-codec", help="stage-1 offline codec training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lambda", dest="lambda_rate", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-jnd", help="stage-2 generator training (frozen codec)")
    p.add_argument("--codec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablate", choices=["bl-p", "bl-cam", "bl-l3"], default=None)
    p.add_argument("--prior-maps", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train_jnd)

    p = sub.add_parser("generate", help="JND map for one image")
    p.add_argument("--codec", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-jnd", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract-priors", help="attention/sensitivity maps for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-cam", required=True)
    p.add_argument("--out-guided", required=True)
    p.set_defaults(func=cmd_extract_priors)

    p = sub.add_parser("inject", help="calibrated noise injection at a target PSNR")
    p.add_argument("--image", required=True)
    p.add_argument("--jnd", required=True)
    p.add_argument("--psnr", type=float, default=26.06)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("evaluate", help="matched-PSNR comparison report for several models")
    p.add_argument("--images", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--psnr", type=float, default=26.06)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the viewing-test service")
    p.add_argument("--plan", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
