"""Calibration motion program: tilt-limit sweep, center-out staged rings over
the camera field of view, the 20%-deeper second pass, and reachability
filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry
from .camera import Intrinsics, Pixel, project_points, undistort
from .errors import BoardTooLarge, StartNotDetected
from .geometry import RigidTransform, rotation_about_axis
from .handeye import MountOffset
from .target import CheckerboardSpec

TILT_STEP = math.radians(5.0)
ROLL_CLAMP = math.radians(45.0)
PITCH_YAW_CAP = math.radians(85.0)
FAR_DEPTH_RATIO = 1.2
EDGE_MARGIN_PX = 1.0


@dataclass(frozen=True)
class TiltLimits:
    """Maximum allowed board tilt per axis and direction, radians.

    Roll spins the board about its normal; pitch tips it about the board's
    horizontal (x) axis; yaw turns it about the vertical (y) axis.
    """

    roll_min: float
    roll_max: float
    pitch_min: float
    pitch_max: float
    yaw_min: float
    yaw_max: float

    def __post_init__(self) -> None:
        for lo, hi, name in ((self.roll_min, self.roll_max, "roll"),
                             (self.pitch_min, self.pitch_max, "pitch"),
                             (self.yaw_min, self.yaw_max, "yaw")):
            if lo > 0.0 or hi < 0.0:
                raise ValueError(f"{name} limits must satisfy min <= 0 <= max")
        if self.roll_max > ROLL_CLAMP + 1e-12 or self.roll_min < -ROLL_CLAMP - 1e-12:
            raise ValueError("roll limits exceed the 45 degree clamp")


def tilt_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Board-local tilt: roll about the normal (z), pitch about x, yaw about y."""
    return (rotation_about_axis(2, roll)
            @ rotation_about_axis(1, yaw)
            @ rotation_about_axis(0, pitch))


def sweep_tilt_limits(probe: Callable[[RigidTransform], bool],
                      start_pose: RigidTransform,
                      step: float = TILT_STEP) -> TiltLimits:
    """Step each tilt axis in 5-degree increments until detection fails or the
    clamp is reached; the recorded limit is the last successful angle. The
    probe is called with absolute flange poses tilted in the flange frame."""
    if not probe(start_pose):
        raise StartNotDetected("board not detected at the sweep start pose")

    def sweep(axis: str, sign: float, clamp: float) -> float:
        last_ok = 0.0
        angle = step
        while angle <= clamp + 1e-12:
            args = {"roll": 0.0, "pitch": 0.0, "yaw": 0.0}
            args[axis] = sign * angle
            pose = geometry.compose(
                start_pose, RigidTransform(tilt_rotation(**args), np.zeros(3)))
            if not probe(pose):
                break
            last_ok = angle
            angle += step
        return sign * last_ok

    return TiltLimits(
        roll_max=sweep("roll", 1.0, ROLL_CLAMP),
        roll_min=sweep("roll", -1.0, ROLL_CLAMP),
        pitch_max=sweep("pitch", 1.0, PITCH_YAW_CAP),
        pitch_min=sweep("pitch", -1.0, PITCH_YAW_CAP),
        yaw_max=sweep("yaw", 1.0, PITCH_YAW_CAP),
        yaw_min=sweep("yaw", -1.0, PITCH_YAW_CAP),
    )


@dataclass(frozen=True)
class MotionTarget:
    """One planned board placement, camera frame.

    board_pose_cam maps board coordinates into the camera frame; the flange
    pose is derived later by to_flange_targets once an Eye-to-Hand estimate
    exists. depth is measured along the camera ray of intended_pixel.
    """

    board_pose_cam: RigidTransform
    intended_pixel: Pixel
    depth: float
    stage: int
    depth_pass: str
    tilt: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "board_pose_cam": self.board_pose_cam.matrix().tolist(),
            "intended_pixel": [self.intended_pixel.u, self.intended_pixel.v],
            "depth": self.depth,
            "stage": self.stage,
            "depth_pass": self.depth_pass,
            "tilt": list(self.tilt),
        }


@dataclass(frozen=True)
class MotionPlan:
    targets: tuple[MotionTarget, ...]
    board: CheckerboardSpec
    camera_id: str

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "board": self.board.to_dict(),
            "targets": [t.to_dict() for t in self.targets],
        }


def _ray_facing_rotation(ray: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the camera z axis onto the given ray direction;
    identity for the optical axis, so a centered board is fronto-parallel."""
    z = np.array([0.0, 0.0, 1.0])
    d = ray / np.linalg.norm(ray)
    axis = np.cross(z, d)
    s = np.linalg.norm(axis)
    c = float(np.dot(z, d))
    if s < 1e-15:
        return np.eye(3) if c > 0.0 else rotation_about_axis(0, math.pi)
    return geometry.so3_exp(axis / s * math.atan2(s, c))


def _board_pose_for(intr: Intrinsics, spec: CheckerboardSpec, pixel: Pixel,
                    depth: float, tilt: tuple[float, float, float]) -> RigidTransform:
    """Board pose whose center sits on the ray of `pixel` at ray-distance
    `depth`, facing the camera, with the tilt applied about the board center."""
    xy = undistort(intr, pixel)
    ray = np.array([xy[0], xy[1], 1.0])
    ray = ray / np.linalg.norm(ray)
    center = ray * depth
    rot = _ray_facing_rotation(ray) @ tilt_rotation(*tilt)
    translation = center - rot @ spec.board_center()
    return RigidTransform(rot, translation)


def _footprint_inside(intr: Intrinsics, spec: CheckerboardSpec,
                      pose: RigidTransform) -> bool:
    """True when the 4 projected outer board corners stay inside the image."""
    outer = spec.outer_corners()
    pts = geometry.apply_points(pose, outer)
    if np.any(pts[:, 2] <= 1e-9):
        return False
    uv = project_points(intr, geometry.identity(), pts)
    return bool(np.all((uv[:, 0] >= EDGE_MARGIN_PX)
                       & (uv[:, 0] <= intr.width - 1 - EDGE_MARGIN_PX)
                       & (uv[:, 1] >= EDGE_MARGIN_PX)
                       & (uv[:, 1] <= intr.height - 1 - EDGE_MARGIN_PX)))


def _tilt_cycle(limits: TiltLimits) -> list[tuple[float, float, float]]:
    """Tilt schedule cycled over positions: zero, then half and full limits per
    axis (skipping zero-limit entries)."""
    cycle = [(0.0, 0.0, 0.0)]
    axes = [("roll", limits.roll_max, limits.roll_min),
            ("pitch", limits.pitch_max, limits.pitch_min),
            ("yaw", limits.yaw_max, limits.yaw_min)]
    for frac in (0.5, 1.0):
        for name, hi, lo in axes:
            for value in (hi * frac, lo * frac):
                if abs(value) < 1e-12:
                    continue
                tilt = {"roll": 0.0, "pitch": 0.0, "yaw": 0.0}
                tilt[name] = value
                cycle.append((tilt["roll"], tilt["pitch"], tilt["yaw"]))
    return cycle


def generate_plan(intr: Intrinsics, spec: CheckerboardSpec, limits: TiltLimits,
                  base_depth: float, stages: int = 3, overlap: float = 0.0,
                  camera_id: str = "") -> MotionPlan:
    """Center-out staged ring layout over the field of view.

    Stage k places intended pixels on a concentric rectangular ring around the
    image center, spaced so adjacent board footprints abut (shrunk by the
    overlap factor). Each position carries a tilt from the cycling schedule,
    reduced or zeroed when the tilted footprint would leave the image, and the
    whole near sequence is duplicated at 1.2x depth as stages stages..2*stages-1.
    """
    if stages < 1:
        raise ValueError("stages must be >= 1")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    board_w = spec.squares_cols * spec.square_size
    board_h = spec.squares_rows * spec.square_size
    fp_u = intr.fx * board_w / base_depth
    fp_v = intr.fy * board_h / base_depth
    if fp_u >= intr.width - 2 * EDGE_MARGIN_PX or fp_v >= intr.height - 2 * EDGE_MARGIN_PX:
        raise BoardTooLarge(
            f"board footprint {fp_u:.0f}x{fp_v:.0f} px exceeds the "
            f"{intr.width}x{intr.height} image at depth {base_depth} m")
    step_u = fp_u * (1.0 - overlap)
    step_v = fp_v * (1.0 - overlap)
    center = Pixel((intr.width - 1) / 2.0, (intr.height - 1) / 2.0)

    cycle = _tilt_cycle(limits)
    pairs: list[tuple[MotionTarget, MotionTarget]] = []
    counter = 0
    for stage in range(stages):
        if stage == 0:
            offsets = [(0, 0)]
        else:
            ring = range(-stage, stage + 1)
            offsets = sorted({(i, j) for i in ring for j in ring
                              if max(abs(i), abs(j)) == stage})
        placed = []
        for i, j in offsets:
            px = Pixel(center.u + i * step_u, center.v + j * step_v)
            dist = math.hypot(px.u - center.u, px.v - center.v)
            placed.append((dist, j, i, px))
        placed.sort()
        for dist, j, i, px in placed:
            tilt = cycle[counter % len(cycle)]
            counter += 1
            chosen = None
            for candidate in (tilt, tuple(v / 2.0 for v in tilt), (0.0, 0.0, 0.0)):
                near_pose = _board_pose_for(intr, spec, px, base_depth, candidate)
                far_pose = _board_pose_for(intr, spec, px,
                                           base_depth * FAR_DEPTH_RATIO, candidate)
                if (_footprint_inside(intr, spec, near_pose)
                        and _footprint_inside(intr, spec, far_pose)):
                    chosen = (candidate, near_pose, far_pose)
                    break
            if chosen is None:
                continue
            tilt_used, near_pose, far_pose = chosen
            pairs.append((
                MotionTarget(near_pose, px, base_depth, stage, "near", tilt_used),
                MotionTarget(far_pose, px, base_depth * FAR_DEPTH_RATIO,
                             stage + stages, "far", tilt_used),
            ))

    targets = [near for near, _ in pairs] + [far for _, far in pairs]
    return MotionPlan(tuple(targets), spec, camera_id)


def to_flange_targets(plan_targets, camera_pose_estimate: RigidTransform,
                      offset: MountOffset) -> list[RigidTransform]:
    """Flange poses realizing the planned camera-frame board poses under the
    current Eye-to-Hand estimate and mount offset."""
    board_from_flange = geometry.invert(offset.flange_from_board)
    out = []
    for target in plan_targets:
        base_from_board = geometry.compose(camera_pose_estimate, target.board_pose_cam)
        out.append(geometry.compose(base_from_board, board_from_flange))
    return out


def filter_reachable(flange_poses, robot) -> tuple[list[int], list[int]]:
    """Split pose indices into (kept, skipped) by the robot's reachability
    check (spherical shell plus analytic IK feasibility)."""
    kept, skipped = [], []
    for i, pose in enumerate(flange_poses):
        (kept if robot.pose_reachable(pose) else skipped).append(i)
    return kept, skipped
