"""Pinhole projection with Brown-Conrady distortion, depth back-projection,
and the color-to-IR registration used by RGB-D sensors.

Pixel convention: origin at the top-left corner, u rightward, v downward,
pixel centers at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import geometry
from .errors import BehindCamera, NoConvergence, NonPositiveDepth
from .geometry import RigidTransform

MIN_DEPTH = 1e-9

INTRINSICS_FIELDS = ("fx", "fy", "cx", "cy", "skew",
                     "k1", "k2", "k3", "p1", "p2", "width", "height")


class Pixel(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters of one camera (color or IR), distortion included."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not 0.0 <= self.cx < self.width:
            raise ValueError("cx must lie within [0, width)")
        if not 0.0 <= self.cy < self.height:
            raise ValueError("cy must lie within [0, height)")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in INTRINSICS_FIELDS}
        d["width"] = int(self.width)
        d["height"] = int(self.height)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        unknown = set(d) - set(INTRINSICS_FIELDS)
        if unknown:
            raise ValueError(f"unknown intrinsics fields: {sorted(unknown)}")
        return Intrinsics(**{k: (int(v) if k in ("width", "height") else float(v))
                             for k, v in d.items()})


@dataclass(frozen=True)
class DepthModel:
    """Global linear depth correction: corrected = scale * raw + offset."""

    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    def correct(self, depth):
        return self.scale * np.asarray(depth, dtype=float) + self.offset

    def uncorrect(self, depth):
        """Raw sensor reading that would correct to the given depth."""
        return (np.asarray(depth, dtype=float) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": self.offset}

    @staticmethod
    def from_dict(d: dict) -> "DepthModel":
        return DepthModel(float(d["scale"]), float(d["offset"]))


@dataclass(frozen=True)
class SensorRig:
    """One RGB-D sensor: color + IR intrinsics, their relative pose, depth model."""

    color: Intrinsics
    ir: Intrinsics
    color_from_ir: RigidTransform
    depth_model: DepthModel

    def to_dict(self) -> dict:
        return {
            "color": self.color.to_dict(),
            "ir": self.ir.to_dict(),
            "color_from_ir": self.color_from_ir.matrix().tolist(),
            "depth_model": self.depth_model.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SensorRig":
        return SensorRig(
            color=Intrinsics.from_dict(d["color"]),
            ir=Intrinsics.from_dict(d["ir"]),
            color_from_ir=RigidTransform.from_matrix(np.asarray(d["color_from_ir"])),
            depth_model=DepthModel.from_dict(d["depth_model"]),
        )


def distort_normalized(intr: Intrinsics, xy: np.ndarray) -> np.ndarray:
    """Apply radial + tangential distortion to normalized (..., 2) coordinates."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def project_points(intr: Intrinsics, camera_from_world: RigidTransform,
                   pts: np.ndarray) -> np.ndarray:
    """Project (n, 3) world points to (n, 2) pixels. Raises BehindCamera if any
    point has camera-frame z <= 1e-9 m."""
    pc = geometry.apply_points(camera_from_world, np.asarray(pts, dtype=float))
    z = pc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera(f"{int((z <= MIN_DEPTH).sum())} point(s) at or behind the camera")
    xy = pc[:, :2] / z[:, None]
    xyd = distort_normalized(intr, xy)
    u = intr.fx * xyd[:, 0] + intr.skew * xyd[:, 1] + intr.cx
    v = intr.fy * xyd[:, 1] + intr.cy
    return np.stack([u, v], axis=-1)


def project(intr: Intrinsics, camera_from_world: RigidTransform, p) -> Pixel:
    """Project a single 3D point; see project_points."""
    uv = project_points(intr, camera_from_world, np.asarray(p, dtype=float).reshape(1, 3))
    return Pixel(float(uv[0, 0]), float(uv[0, 1]))


def undistort_points(intr: Intrinsics, px: np.ndarray,
                     tol: float = 1e-10, max_iterations: int = 50,
                     damping: float = 1.0) -> np.ndarray:
    """Invert the distortion map for (n, 2) pixels; returns normalized,
    distortion-free (n, 2) coordinates.

    Damped fixed-point iteration on the normalized plane; step tolerance in
    normalized units.
    """
    px = np.asarray(px, dtype=float).reshape(-1, 2)
    yd = (px[:, 1] - intr.cy) / intr.fy
    xd = (px[:, 0] - intr.cx - intr.skew * yd) / intr.fx
    x = xd.copy()
    y = yd.copy()
    for _ in range(max_iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
        dx = 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
        dy = intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
        x_new = x + damping * ((xd - dx) / radial - x)
        y_new = y + damping * ((yd - dy) / radial - y)
        step = max(np.abs(x_new - x).max(initial=0.0), np.abs(y_new - y).max(initial=0.0))
        x, y = x_new, y_new
        if step < tol:
            return np.stack([x, y], axis=-1)
    raise NoConvergence(f"undistortion did not converge within {max_iterations} iterations")


def undistort(intr: Intrinsics, px: Pixel, tol: float = 1e-10,
              max_iterations: int = 50) -> Pixel:
    """Single-pixel undistortion to normalized, distortion-free coordinates."""
    xy = undistort_points(intr, np.array([[px[0], px[1]]]), tol, max_iterations)
    return Pixel(float(xy[0, 0]), float(xy[0, 1]))


def backproject(intr: Intrinsics, px: Pixel, depth: float,
                model: DepthModel | None = None) -> np.ndarray:
    """Camera-frame 3D point on the undistorted ray of px at the corrected depth."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth must be > 0, got {depth}")
    z = float(model.correct(depth)) if model is not None else float(depth)
    if z <= 0.0:
        raise NonPositiveDepth(f"corrected depth must be > 0, got {z}")
    xy = undistort(intr, px)
    return np.array([xy[0] * z, xy[1] * z, z])


def backproject_points(intr: Intrinsics, px: np.ndarray, depths: np.ndarray,
                       model: DepthModel | None = None) -> np.ndarray:
    """Vectorized backproject for (n, 2) pixels and (n,) depths."""
    depths = np.asarray(depths, dtype=float)
    if np.any(depths <= 0.0):
        raise NonPositiveDepth("all depths must be > 0")
    z = model.correct(depths) if model is not None else depths
    if np.any(z <= 0.0):
        raise NonPositiveDepth("corrected depths must be > 0")
    xy = undistort_points(intr, px)
    return np.concatenate([xy * z[:, None], z[:, None]], axis=1)


def register_depth_to_color(rig: SensorRig, ir_px: Pixel, depth: float) -> Pixel:
    """Map an IR pixel with its raw depth reading into the color image."""
    p_ir = backproject(rig.ir, ir_px, depth, rig.depth_model)
    p_color = geometry.apply(rig.color_from_ir, p_ir)
    return project(rig.color, geometry.identity(), p_color)
