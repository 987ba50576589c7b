"""Ground-truth world model: a 6-DOF robot with repeatability noise, RGB-D
cameras with noise and detection-failure models, and synthetic observation
rendering. The oracle every calibration result is judged against."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .camera import DepthModel, Intrinsics, SensorRig, project_points
from .errors import Unreachable
from .geometry import RigidTransform
from .handeye import MountOffset
from .target import BoardObservation, CheckerboardSpec, corner_grid

# Substream tags for deriving independent RNG streams from the scene seed.
_STREAM_MOVE = 1
_STREAM_RENDER = 2


@dataclass(frozen=True)
class RobotModel:
    """Kinematic arm model: reachable shell, repeatability, joint limits.

    The IK feasibility check uses a simplified arm: base yaw, a planar
    shoulder/elbow pair with equal link lengths summing to reach_max, and a
    spherical wrist at the flange decomposed as ZYZ.
    """

    reach_max: float = 0.85
    reach_min: float = 0.15
    repeatability_sigma: float = 1e-4
    joint_limits: np.ndarray = field(
        default_factory=lambda: np.array([[-2.0 * math.pi, 2.0 * math.pi]] * 6))

    def __post_init__(self) -> None:
        if not 0.0 <= self.reach_min < self.reach_max:
            raise ValueError("need 0 <= reach_min < reach_max")
        if self.repeatability_sigma < 0.0:
            raise ValueError("repeatability_sigma must be >= 0")
        jl = np.array(self.joint_limits, dtype=float).reshape(6, 2)
        jl.setflags(write=False)
        object.__setattr__(self, "joint_limits", jl)

    def _within(self, joint: int, angle: float) -> bool:
        lo, hi = self.joint_limits[joint]
        return lo - 1e-12 <= angle <= hi + 1e-12

    def pose_reachable(self, flange_pose: RigidTransform) -> bool:
        p = flange_pose.translation
        r = float(np.linalg.norm(p))
        if not self.reach_min <= r <= self.reach_max:
            return False
        q1 = math.atan2(p[1], p[0])
        if not self._within(0, q1):
            return False
        # Planar 2R arm in the (radial, z) plane, equal links L = reach_max / 2.
        link = self.reach_max / 2.0
        cos_fold = (r * r - 2.0 * link * link) / (2.0 * link * link)
        cos_fold = max(-1.0, min(1.0, cos_fold))
        elbow = math.pi - math.acos(cos_fold)
        elevation = math.atan2(p[2], math.hypot(p[0], p[1]))
        half = math.acos(max(-1.0, min(1.0, r / (2.0 * link))))
        shoulder = elevation + half
        if not (self._within(1, shoulder) and self._within(2, elbow)):
            return False
        # Wrist: remaining rotation decomposed as ZYZ.
        arm_rot = geometry.rotation_about_axis(2, q1)
        wrist = arm_rot.T @ flange_pose.rotation
        beta = math.acos(max(-1.0, min(1.0, wrist[2, 2])))
        if abs(math.sin(beta)) < 1e-12:
            alpha, gamma = math.atan2(wrist[1, 0], wrist[0, 0]), 0.0
        else:
            alpha = math.atan2(wrist[1, 2], wrist[0, 2])
            gamma = math.atan2(wrist[2, 1], -wrist[2, 0])
        return (self._within(3, alpha) and self._within(4, beta)
                and self._within(5, gamma))

    def to_dict(self) -> dict:
        return {
            "reach_max_m": self.reach_max,
            "reach_min_m": self.reach_min,
            "repeatability_sigma_m": self.repeatability_sigma,
            "joint_limits_rad": self.joint_limits.tolist(),
        }


@dataclass(frozen=True)
class NoiseParams:
    """Sensor noise and detection-failure model of one simulated camera."""

    pixel_sigma: float = 0.0
    depth_sigma_base: float = 0.0
    depth_sigma_slope: float = 0.0
    outlier_rate: float = 0.0
    detect_tilt_limit: float = math.radians(40.0)
    detect_min_depth: float = 0.5
    detect_max_depth: float = 4.5

    def __post_init__(self) -> None:
        for name in ("pixel_sigma", "depth_sigma_base", "depth_sigma_slope",
                     "outlier_rate", "detect_tilt_limit", "detect_min_depth",
                     "detect_max_depth"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.outlier_rate >= 1.0:
            raise ValueError("outlier_rate must be < 1")

    def zeroed(self) -> "NoiseParams":
        return replace(self, pixel_sigma=0.0, depth_sigma_base=0.0,
                       depth_sigma_slope=0.0, outlier_rate=0.0)


@dataclass(frozen=True)
class SimCamera:
    """One simulated RGB-D sensor: ground-truth rig and world pose plus the
    nominal rig the calibration pipeline starts from.

    pose is base_from_camera for the sensor's reference (IR/depth) frame: the
    frame 3D points are measured in, hence the ground truth the Eye-to-Hand
    transform is judged against. The color camera sits at
    pose * inverse(color_from_ir)."""

    camera_id: str
    rig: SensorRig
    pose: RigidTransform
    noise: NoiseParams
    nominal: SensorRig


@dataclass
class SimScene:
    """Ground-truth world: cameras, robot, mount offset, board, seed.

    All state is immutable except the RNG bookkeeping: every robot move and
    every render draws from a substream derived from (seed, stream, index), so
    identical scenes produce bit-identical observation streams.
    """

    cameras: tuple[SimCamera, ...]
    robot: RobotModel
    mount_offset_true: MountOffset
    board: CheckerboardSpec
    seed: int = 0
    _move_count: int = field(default=0, repr=False)
    _frame_counts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.cameras = tuple(self.cameras)
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")

    def camera(self, camera_id: str) -> SimCamera:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(f"unknown camera id {camera_id!r}")

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))

    def robot_move(self, target: RigidTransform) -> RigidTransform:
        """Move to target; the achieved pose (what the encoders report) is the
        target perturbed by per-axis translation repeatability noise."""
        if not self.robot.pose_reachable(target):
            p = target.translation
            raise Unreachable(f"target at radius {np.linalg.norm(p):.3f} m "
                              "is outside the reachable workspace")
        rng = self._rng(_STREAM_MOVE, self._move_count)
        self._move_count += 1
        noise = rng.normal(0.0, self.robot.repeatability_sigma, size=3) \
            if self.robot.repeatability_sigma > 0.0 else np.zeros(3)
        return RigidTransform(target.rotation, target.translation + noise)

    def render_observation(self, camera_id: str, flange_pose: RigidTransform,
                           timestamp: int = 0):
        """Synthetic board detection for one camera at one robot pose.

        Returns a BoardObservation, or None when detection fails: any outer
        board corner out of the color image, board normal beyond the tilt
        limit, or (for the IR/depth part only) depth outside the sensor range.
        IR corners and depths are present only when the IR camera also sees
        the full board. Corner enumeration follows image scan order, so a
        rotated board arrives with reversed ordering and the marker index
        reports where the canonical corner 0 landed.
        """
        cam = self.camera(camera_id)
        frame_index = self._frame_counts.get(camera_id, 0)
        self._frame_counts[camera_id] = frame_index + 1
        cam_index = [c.camera_id for c in self.cameras].index(camera_id)
        rng = self._rng(_STREAM_RENDER, cam_index, frame_index)

        base_from_board = geometry.compose(flange_pose,
                                           self.mount_offset_true.flange_from_board)
        grid = corner_grid(self.board)
        corners_world = geometry.apply_points(base_from_board, grid.points)
        outer_world = geometry.apply_points(base_from_board,
                                            self.board.outer_corners())
        center_world = geometry.apply(base_from_board, self.board.board_center())
        normal_world = base_from_board.rotation[:, 2]

        ir_from_base = geometry.invert(cam.pose)
        color_from_base = geometry.compose(cam.rig.color_from_ir, ir_from_base)
        ray = center_world - cam.pose.translation
        ray_norm = float(np.linalg.norm(ray))
        if ray_norm < 1e-9:
            return None
        cos_tilt = abs(float(np.dot(normal_world, ray / ray_norm)))
        if math.acos(max(-1.0, min(1.0, cos_tilt))) > cam.noise.detect_tilt_limit:
            return None

        color_px = self._project_visible(cam.rig.color, color_from_base,
                                         corners_world, outer_world)
        if color_px is None:
            return None
        if cam.noise.pixel_sigma > 0.0:
            color_px = color_px + rng.normal(0.0, cam.noise.pixel_sigma,
                                             size=color_px.shape)

        ir_px = None
        depths = None
        ir_proj = self._project_visible(cam.rig.ir, ir_from_base,
                                        corners_world, outer_world)
        if ir_proj is not None:
            z_true = geometry.apply_points(ir_from_base, corners_world)[:, 2]
            center_depth = float(geometry.apply(ir_from_base, center_world)[2])
            if cam.noise.detect_min_depth <= center_depth <= cam.noise.detect_max_depth:
                ir_px = ir_proj
                if cam.noise.pixel_sigma > 0.0:
                    ir_px = ir_px + rng.normal(0.0, cam.noise.pixel_sigma,
                                               size=ir_px.shape)
                sigma = (cam.noise.depth_sigma_base
                         + cam.noise.depth_sigma_slope * z_true * z_true)
                z_noisy = z_true + rng.normal(0.0, 1.0, size=z_true.shape) * sigma \
                    if (cam.noise.depth_sigma_base > 0.0
                        or cam.noise.depth_sigma_slope > 0.0) else z_true.copy()
                if cam.noise.outlier_rate > 0.0:
                    bad = rng.random(len(z_noisy)) < cam.noise.outlier_rate
                    wild = rng.uniform(cam.noise.detect_min_depth,
                                       cam.noise.detect_max_depth, size=len(z_noisy))
                    z_noisy = np.where(bad, wild, z_noisy)
                depths = cam.rig.depth_model.uncorrect(z_noisy)

        # Detector enumerates corners in image scan order: a board seen upside
        # down arrives with the list reversed.
        n = len(color_px)
        first, last = color_px[0], color_px[-1]
        if (first[1], first[0]) <= (last[1], last[0]):
            marker = 0
        else:
            color_px = color_px[::-1].copy()
            if ir_px is not None:
                ir_px = ir_px[::-1].copy()
                depths = depths[::-1].copy()
            marker = n - 1
        return BoardObservation(
            camera_id=camera_id,
            timestamp=int(timestamp),
            corners_px=color_px,
            corners_ir_px=ir_px,
            corners_depth=depths,
            marker_corner=marker,
            orientation_resolved=False,
        )

    @staticmethod
    def _project_visible(intr: Intrinsics, cam_from_base: RigidTransform,
                         corners_world: np.ndarray, outer_world: np.ndarray):
        pts = geometry.apply_points(cam_from_base,
                                    np.vstack([corners_world, outer_world]))
        if np.any(pts[:, 2] <= 1e-9):
            return None
        uv = project_points(intr, geometry.identity(), pts)
        outer_uv = uv[len(corners_world):]
        inside = ((outer_uv[:, 0] >= 0.0) & (outer_uv[:, 0] <= intr.width - 1)
                  & (outer_uv[:, 1] >= 0.0) & (outer_uv[:, 1] <= intr.height - 1))
        if not inside.all():
            return None
        return uv[:len(corners_world)]


def inject_outliers(obs: BoardObservation, rate: float, seed: int,
                    magnitude_px: float = 20.0,
                    magnitude_m: float = 0.5) -> BoardObservation:
    """Corrupt each corner independently with the given probability.

    Corrupted corners are offset in pixel space (color and IR) and in depth by
    a magnitude drawn uniformly from [0.5, 1.0] x the configured magnitude, in
    a random direction, so corrupted points are genuine outliers. Deterministic
    for a given seed.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    n = obs.corner_count
    rng = np.random.default_rng(seed)
    bad = rng.random(n) < rate

    def offset_px(arr):
        if arr is None:
            return None
        angles = rng.uniform(0.0, 2.0 * math.pi, size=n)
        mags = magnitude_px * rng.uniform(0.5, 1.0, size=n)
        delta = np.stack([mags * np.cos(angles), mags * np.sin(angles)], axis=1)
        out = np.array(arr)
        out[bad] += delta[bad]
        return out

    new_color = offset_px(obs.corners_px)
    new_ir = offset_px(obs.corners_ir_px)
    new_depth = None
    if obs.corners_depth is not None:
        signs = rng.choice([-1.0, 1.0], size=n)
        mags = magnitude_m * rng.uniform(0.5, 1.0, size=n)
        new_depth = np.array(obs.corners_depth)
        new_depth[bad] = np.maximum(new_depth[bad] + signs[bad] * mags[bad], 0.05)
    return replace(obs, corners_px=new_color, corners_ir_px=new_ir,
                   corners_depth=new_depth)


# --- Kinect presets (Table-I-style resolutions, FOV and depth range) ----------

def _fov_intrinsics(width: int, height: int, fov_h_deg: float,
                    fov_v_deg: float, **distortion) -> Intrinsics:
    fx = (width / 2.0) / math.tan(math.radians(fov_h_deg) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(fov_v_deg) / 2.0)
    return Intrinsics(fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height, **distortion)


_PRESETS = {
    "kinect_v2": {
        "color_size": (1920, 1080), "ir_size": (512, 424), "fov": (70.0, 60.0),
        "baseline": (0.052, 0.0, 0.0),
        "true_color_distortion": dict(k1=-0.21, k2=0.055, k3=0.0, p1=8e-4, p2=-5e-4),
        "true_ir_distortion": dict(k1=-0.12, k2=0.030, k3=0.0, p1=-4e-4, p2=3e-4),
        "true_extrinsic_perturbation": ((0.0035, -0.0026, 0.0017), (0.0005, -0.0012, 0.0018)),
        "true_depth_model": DepthModel(scale=1.0035, offset=-0.0028),
        # pixel_sigma is subpixel corner-detection noise; the depth sigmas are
        # tuned so sigma_z ~ 1.3x the lateral (pixel-induced) sigma at 1.5 m.
        "noise": NoiseParams(pixel_sigma=0.3, depth_sigma_base=1.0e-3,
                             depth_sigma_slope=2.7e-4, outlier_rate=0.0,
                             detect_tilt_limit=math.radians(40.0),
                             detect_min_depth=0.5, detect_max_depth=4.5),
    },
    "kinect_v1": {
        "color_size": (640, 480), "ir_size": (320, 240), "fov": (57.0, 43.0),
        "baseline": (0.025, 0.0, 0.0),
        "true_color_distortion": dict(k1=-0.18, k2=0.042, k3=0.0, p1=6e-4, p2=-7e-4),
        "true_ir_distortion": dict(k1=-0.10, k2=0.024, k3=0.0, p1=5e-4, p2=-3e-4),
        "true_extrinsic_perturbation": ((0.0041, -0.0022, 0.0013), (0.0011, -0.0007, 0.0015)),
        "true_depth_model": DepthModel(scale=1.0052, offset=-0.0041),
        # Pixel sigma 2x the V2 value: reproduces the V1-vs-V2 accuracy ranking.
        "noise": NoiseParams(pixel_sigma=0.6, depth_sigma_base=1.8e-3,
                             depth_sigma_slope=8.0e-4, outlier_rate=0.0,
                             detect_tilt_limit=math.radians(35.0),
                             detect_min_depth=0.4, detect_max_depth=4.5),
    },
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset_rigs(name: str) -> tuple[SensorRig, SensorRig]:
    """(nominal, true) sensor rigs for a preset.

    The nominal rig is the distortion-free factory model the calibration
    pipeline starts from; the true rig adds the preset's distortion, a
    perturbed color-from-IR extrinsic and a non-identity depth model.
    """
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {preset_names()}")
    p = _PRESETS[name]
    cw, ch = p["color_size"]
    iw, ih = p["ir_size"]
    fh, fv = p["fov"]
    nominal = SensorRig(
        color=_fov_intrinsics(cw, ch, fh, fv),
        ir=_fov_intrinsics(iw, ih, fh, fv),
        color_from_ir=RigidTransform(np.eye(3), np.array(p["baseline"])),
        depth_model=DepthModel(),
    )
    rot_pert, t_pert = p["true_extrinsic_perturbation"]
    true = SensorRig(
        color=_fov_intrinsics(cw, ch, fh, fv, **p["true_color_distortion"]),
        ir=_fov_intrinsics(iw, ih, fh, fv, **p["true_ir_distortion"]),
        color_from_ir=RigidTransform(
            geometry.rotation_from_rpy(*rot_pert).rotation,
            np.array(p["baseline"]) + np.array(t_pert)),
        depth_model=p["true_depth_model"],
    )
    return nominal, true


def preset_noise(name: str) -> NoiseParams:
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {preset_names()}")
    return _PRESETS[name]["noise"]


def camera_from_preset(name: str, camera_id: str, pose: RigidTransform,
                       noise: NoiseParams | None = None) -> SimCamera:
    nominal, true = preset_rigs(name)
    return SimCamera(camera_id=camera_id, rig=true, pose=pose,
                     noise=noise if noise is not None else preset_noise(name),
                     nominal=nominal)


def look_at_pose(position, look_at, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera pose (base_from_camera) at `position` with the optical axis
    toward `look_at`; +x right, +y down in the usual camera convention."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(look_at, dtype=float) - position
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("look_at coincides with position")
    z = z / nz
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    return RigidTransform(rot, position)
