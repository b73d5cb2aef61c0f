"""Evaluation-time noise injection at a calibrated PSNR level.

Injected noise is epsilon * r * xj where r is a +-1 sign field and epsilon is
found by bisection so that the post-clip PSNR of the distorted image hits the
requested target, letting maps from different models be compared at an
identical noise level.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from jndlab import imaging
from jndlab.errors import CalibrationError, ShapeMismatchError

EPSILON_MAX = 10.0
PSNR_TOLERANCE_DB = 0.01
_BISECT_TOL_DB = 1e-4
_MAX_ITERATIONS = 100


@dataclasses.dataclass(frozen=True)
class RademacherField:
    """Sign field of +-1 values with the seed that produced it."""

    values: np.ndarray
    seed: int


@dataclasses.dataclass
class InjectionResult:
    y0: np.ndarray
    epsilon: float
    achieved_psnr: float
    target_psnr: float
    clipped_fraction: float
    seed: int


def rademacher(shape, seed) -> RademacherField:
    """Reproducible +-1 field from a counter-based generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    values = rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return RademacherField(values=values, seed=int(seed))


def inject(x0, xj, epsilon, r: RademacherField) -> np.ndarray:
    """clip(x0 + epsilon * r * xj, 0, 1)."""
    x0 = np.asarray(x0, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if x0.shape != xj.shape or x0.shape != r.values.shape:
        raise ShapeMismatchError(
            f"inject: shapes differ, image {x0.shape}, map {xj.shape}, signs {r.values.shape}"
        )
    if epsilon < 0:
        raise ValueError(f"inject: epsilon must be >= 0, got {epsilon}")
    signs = np.asarray(r.values, dtype=np.float64)
    return np.clip(x0 + float(epsilon) * signs * xj, 0.0, 1.0)


def _clipped_fraction(x0, xj, epsilon, r):
    signs = np.asarray(r.values, dtype=np.float64)
    pre = np.asarray(x0, dtype=np.float64) + float(epsilon) * signs * np.asarray(
        xj, dtype=np.float64
    )
    return float(np.mean((pre < 0.0) | (pre > 1.0)))


def calibrate_epsilon(x0, xj, r: RademacherField, target_psnr, epsilon_max=EPSILON_MAX) -> InjectionResult:
    """Bisection on epsilon so the post-clip PSNR matches target_psnr.

    Post-clip MSE is non-decreasing in epsilon (clipping only shortens each
    element's excursion), so the bracket [0, epsilon_max] is valid whenever
    the target is reachable at all.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if not np.any(xj != 0.0):
        raise CalibrationError("calibrate_epsilon: JND map is identically zero")

    def achieved(eps):
        y = inject(x0, xj, eps, r)
        m = imaging.mse(x0, y)
        return (float("inf") if m == 0.0 else 10.0 * np.log10(1.0 / m)), y

    psnr_at_max, _ = achieved(epsilon_max)
    if psnr_at_max > target_psnr + _BISECT_TOL_DB:
        raise CalibrationError(
            f"target {target_psnr:.2f} dB unreachable: PSNR floor at epsilon={epsilon_max} "
            f"is {psnr_at_max:.2f} dB",
            floor_psnr=psnr_at_max,
        )

    lo, hi = 0.0, float(epsilon_max)
    eps = hi
    for _ in range(_MAX_ITERATIONS):
        eps = 0.5 * (lo + hi)
        p, _ = achieved(eps)
        if abs(p - target_psnr) <= _BISECT_TOL_DB:
            break
        if p > target_psnr:
            lo = eps
        else:
            hi = eps

    p, y = achieved(eps)
    if abs(p - target_psnr) > PSNR_TOLERANCE_DB:
        raise CalibrationError(
            f"calibration stalled at {p:.4f} dB for target {target_psnr:.4f} dB",
            floor_psnr=p,
        )
    return InjectionResult(
        y0=y.astype(np.float32),
        epsilon=float(eps),
        achieved_psnr=float(p),
        target_psnr=float(target_psnr),
        clipped_fraction=_clipped_fraction(x0, xj, eps, r),
        seed=r.seed,
    )


def evaluate_pair(x0, xj_a, xj_b, target_psnr, seed):
    """Calibrate two maps on the same image with a shared sign field.

    Sharing r removes sign-pattern luck from the comparison; both results
    land within the calibration tolerance of the same target.
    """
    r = rademacher(np.asarray(x0).shape, seed)
    try:
        res_a = calibrate_epsilon(x0, xj_a, r, target_psnr)
    except CalibrationError as exc:
        raise CalibrationError(f"model A: {exc}", floor_psnr=exc.floor_psnr) from exc
    try:
        res_b = calibrate_epsilon(x0, xj_b, r, target_psnr)
    except CalibrationError as exc:
        raise CalibrationError(f"model B: {exc}", floor_psnr=exc.floor_psnr) from exc
    return res_a, res_b


def evaluate_models(named_images, model_maps, target_psnr, seed):
    """Batch comparison: every model's map for every image, shared r per image.

    named_images: [(image_name, image)]; model_maps: {model_name: {image_name: map}}.
    Returns report rows: (image, model, epsilon, achieved_psnr, clipped_fraction, seed).
    """
    rows = []
    for idx, (image_name, image) in enumerate(named_images):
        r = rademacher(np.asarray(image).shape, seed + idx)
        for model_name, maps in model_maps.items():
            xj = maps[image_name]
            try:
                res = calibrate_epsilon(image, xj, r, target_psnr)
            except CalibrationError as exc:
                raise CalibrationError(
                    f"model {model_name!r} on image {image_name!r}: {exc}",
                    floor_psnr=exc.floor_psnr,
                ) from exc
            rows.append(
                (
                    image_name,
                    model_name,
                    res.epsilon,
                    res.achieved_psnr,
                    res.clipped_fraction,
                    res.seed,
                )
            )
    return rows
