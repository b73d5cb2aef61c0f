"""Delimited reports and their companion figures.

Every CSV the toolkit emits gets a rendered PNG next to it: loss traces as
curves, injection reports as per-image bars.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

JND_TRACE_HEADER = ["step", "loss1", "loss2", "loss3", "total"]
CODEC_TRACE_HEADER = ["step", "distortion", "rate_bits", "total"]
INJECTION_HEADER = ["image", "model", "epsilon", "achieved_psnr", "clipped_fraction", "seed"]


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_jnd_trace(path, rows):
    return _write_csv(path, JND_TRACE_HEADER, rows)


def write_codec_trace(path, rows):
    return _write_csv(path, CODEC_TRACE_HEADER, rows)


def read_trace(path):
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, rows


def plot_jnd_trace(rows, path):
    steps = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for idx, label in [(1, "magnitude"), (2, "quality"), (3, "attention"), (4, "total")]:
        ax.plot(steps, [r[idx] for r in rows], label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("generator training losses")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_codec_trace(rows, path):
    steps = [r[0] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].plot(steps, [r[1] for r in rows], linewidth=1.0)
    axes[0].set_title("distortion (255$^2$ MSE)")
    axes[0].set_yscale("log")
    axes[1].plot(steps, [r[2] for r in rows], linewidth=1.0, color="tab:orange")
    axes[1].set_title("rate (bits/image)")
    for ax in axes:
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_injection_report(path, rows):
    """rows: (image, model, epsilon, achieved_psnr, clipped_fraction, seed)."""
    return _write_csv(path, INJECTION_HEADER, rows)


def plot_injection_report(rows, path):
    images = sorted({r[0] for r in rows})
    models = sorted({r[1] for r in rows})
    width = 0.8 / max(len(models), 1)
    xs = np.arange(len(images))
    fig, axes = plt.subplots(2, 1, figsize=(max(7, 0.7 * len(images) * len(models)), 6), sharex=True)
    for mi, model in enumerate(models):
        eps = [next(r[2] for r in rows if r[0] == img and r[1] == model) for img in images]
        clip = [next(r[4] for r in rows if r[0] == img and r[1] == model) for img in images]
        offset = (mi - (len(models) - 1) / 2) * width
        axes[0].bar(xs + offset, eps, width=width, label=model)
        axes[1].bar(xs + offset, clip, width=width, label=model)
    axes[0].set_ylabel("calibrated epsilon")
    axes[1].set_ylabel("clipped fraction")
    axes[1].set_xticks(xs)
    axes[1].set_xticklabels(images, rotation=45, ha="right", fontsize=7)
    axes[0].legend(fontsize=8)
    target = rows[0][3] if rows else 0.0
    axes[0].set_title(f"noise calibration at matched PSNR (achieved ~{target:.2f} dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_summary_table(rows, averages) -> str:
    """Markdown table in the viewing-test layout: one row per image, Mean/Std
    per comparison, bold Average row.

    rows: SummaryRow-like objects; averages: {comparison: grand mean}.
    """
    comparisons = sorted({r.comparison for r in rows})
    images = sorted({r.image_id for r in rows})
    by_cell = {(r.image_id, r.comparison): r for r in rows}
    header = ["Index"]
    for comp in comparisons:
        header += [f"{comp} Mean", f"{comp} Std"]
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "---|" * len(header))
    for image_id in images:
        cells = [image_id]
        for comp in comparisons:
            row = by_cell.get((image_id, comp))
            if row is None:
                cells += ["-", "-"]  # gap marker for an empty cell
            else:
                cells += [f"{row.mean:.2f}", f"{row.std:.2f}"]
        lines.append("| " + " | ".join(cells) + " |")
    avg_cells = ["**Average**"]
    for comp in comparisons:
        avg = averages.get(comp)
        avg_cells += [f"**{avg:.2f}**" if avg is not None else "-", "-"]
    lines.append("| " + " | ".join(avg_cells) + " |")
    return "\n".join(lines)
