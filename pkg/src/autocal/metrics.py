"""Ground-truth comparison metrics used by the experiment reports and the
acceptance suite."""

from __future__ import annotations

import numpy as np

from . import geometry
from .camera import Intrinsics, SensorRig, backproject_points, project_points
from .geometry import RigidTransform

# Intrinsics whose true value is compared relatively in closure checks; k3 is
# excluded (its true value is zero in the presets).
CLOSURE_PARAMS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2")


def transform_errors(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation angle in radians, translation distance in meters)."""
    angle = geometry.rotation_angle(estimate.rotation, truth.rotation)
    dist = float(np.linalg.norm(estimate.translation - truth.translation))
    return angle, dist


def transform_relative_error(estimate: RigidTransform, truth: RigidTransform) -> float:
    """Scalar relative error of a transform: rotation angle plus translation
    error relative to the true translation magnitude (floored at 1 m)."""
    angle, dist = transform_errors(estimate, truth)
    return angle + dist / max(float(np.linalg.norm(truth.translation)), 1.0)


def relative_intrinsic_errors(estimate: Intrinsics, truth: Intrinsics,
                              params=CLOSURE_PARAMS) -> dict[str, float]:
    out = {}
    for name in params:
        true_val = getattr(truth, name)
        est_val = getattr(estimate, name)
        out[name] = abs(est_val - true_val) / max(abs(true_val), 1e-12)
    return out


def _pixel_grid(intr: Intrinsics, n: int = 9, margin: float = 0.1) -> np.ndarray:
    u = np.linspace(margin * intr.width, (1.0 - margin) * intr.width, n)
    v = np.linspace(margin * intr.height, (1.0 - margin) * intr.height, n)
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def intrinsic_model_error_px(truth: Intrinsics, estimate: Intrinsics,
                             depth: float = 1.5, n: int = 9) -> float:
    """RMS pixel disagreement between the true and estimated camera models.

    3D points are generated on the true model's rays over a grid covering the
    central 80% of the image, then projected through the estimated model.
    """
    px = _pixel_grid(truth, n)
    pts = backproject_points(truth, px, np.full(len(px), depth))
    uv = project_points(estimate, geometry.identity(), pts)
    truth_uv = project_points(truth, geometry.identity(), pts)
    return float(np.sqrt(np.mean(np.sum((uv - truth_uv) ** 2, axis=1))))


def registration_error_px(truth: SensorRig, estimate: SensorRig,
                          depths=(0.8, 1.5, 2.5), n: int = 7) -> float:
    """RMS pixel disagreement of depth-to-color registration between the true
    rig and the estimated rig (the paper's color/depth offset error)."""
    px = _pixel_grid(truth.ir, n)
    errors = []
    for depth in depths:
        raw = float(truth.depth_model.uncorrect(depth))
        pts_true = backproject_points(truth.ir, px, np.full(len(px), raw),
                                      truth.depth_model)
        uv_true = project_points(
            truth.color, geometry.identity(),
            geometry.apply_points(truth.color_from_ir, pts_true))
        pts_est = backproject_points(estimate.ir, px, np.full(len(px), raw),
                                     estimate.depth_model)
        uv_est = project_points(
            estimate.color, geometry.identity(),
            geometry.apply_points(estimate.color_from_ir, pts_est))
        errors.append(np.sum((uv_est - uv_true) ** 2, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(errors))))


def spearman_correlation(x, y) -> float:
    """Spearman rank correlation (no tie handling; inputs must be distinct)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0
