"""Scene configuration: a strict YAML schema describing the board, robot,
cameras and planner defaults, and its conversion into a simulated scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import sim
from .camera import DepthModel, Intrinsics, SensorRig
from .errors import ConfigError
from .geometry import RigidTransform, rotation_from_rpy
from .sim import NoiseParams, RobotModel, SimCamera, SimScene
from .target import CheckerboardSpec

_BOARD_KEYS = {"squares_cols", "squares_rows", "square_size_m", "marker_square"}
_ROBOT_KEYS = {"reach_max_m", "reach_min_m", "repeatability_sigma_m", "joint_limits_rad"}
_PLANNER_KEYS = {"stages", "base_depth_m", "overlap"}
_POSE_KEYS = {"position_m", "rpy_deg", "look_at_m"}
_NOISE_KEYS = {"pixel_sigma_px", "depth_sigma_base_m", "depth_sigma_slope_m_per_m2",
               "outlier_rate", "detect_tilt_limit_deg", "detect_min_depth_m",
               "detect_max_depth_m"}
_CAMERA_KEYS = {"id", "preset", "pose", "noise", "rig_true", "rig_nominal"}
_TOP_KEYS = {"seed", "board", "robot", "planner", "cameras"}


def _require_mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


@dataclass(frozen=True)
class PlannerDefaults:
    stages: int = 3
    base_depth: float = 0.9
    overlap: float = 0.0


@dataclass(frozen=True)
class CameraConfig:
    camera_id: str
    pose: RigidTransform
    preset: str | None = None
    noise: NoiseParams | None = None
    rig_true: SensorRig | None = None
    rig_nominal: SensorRig | None = None

    def build(self) -> SimCamera:
        if self.preset is not None:
            nominal, true = sim.preset_rigs(self.preset)
            noise = self.noise if self.noise is not None else sim.preset_noise(self.preset)
        else:
            if self.rig_true is None or self.rig_nominal is None:
                raise ConfigError(f"cameras[{self.camera_id}]: need either a preset "
                                  "or explicit rig_true + rig_nominal")
            nominal, true = self.rig_nominal, self.rig_true
            noise = self.noise if self.noise is not None else NoiseParams()
        if self.rig_true is not None:
            true = self.rig_true
        if self.rig_nominal is not None:
            nominal = self.rig_nominal
        return SimCamera(camera_id=self.camera_id, rig=true, pose=self.pose,
                         noise=noise, nominal=nominal)


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    board: CheckerboardSpec
    robot: RobotModel
    planner: PlannerDefaults
    cameras: tuple[CameraConfig, ...]
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def build_scene(self, seed: int | None = None) -> SimScene:
        return SimScene(
            cameras=tuple(c.build() for c in self.cameras),
            robot=self.robot,
            mount_offset_true=_default_mount_offset(),
            board=self.board,
            seed=self.seed if seed is None else seed,
        )

    def nominal_rigs(self) -> dict[str, SensorRig]:
        return {c.camera_id: c.build().nominal for c in self.cameras}


def _default_mount_offset():
    """Ground-truth end-effector mount: ~40 mm offset with a 10-degree tilt,
    the kind of bracket the offset estimator must recover."""
    from .handeye import MountOffset
    rot = rotation_from_rpy(math.radians(10.0), math.radians(-6.0),
                            math.radians(4.0)).rotation
    return MountOffset(RigidTransform(rot, np.array([0.031, -0.022, 0.018])))


def _parse_pose(d: dict, where: str) -> RigidTransform:
    d = _require_mapping(d, where)
    _check_keys(d, _POSE_KEYS, where)
    if "position_m" not in d:
        raise ConfigError(f"{where}: position_m is required")
    pos = [float(v) for v in d["position_m"]]
    if len(pos) != 3:
        raise ConfigError(f"{where}.position_m: expected 3 values")
    if "look_at_m" in d:
        if "rpy_deg" in d:
            raise ConfigError(f"{where}: give rpy_deg or look_at_m, not both")
        return sim.look_at_pose(pos, [float(v) for v in d["look_at_m"]])
    rpy = d.get("rpy_deg", [0.0, 0.0, 0.0])
    if len(rpy) != 3:
        raise ConfigError(f"{where}.rpy_deg: expected 3 values")
    rot = rotation_from_rpy(*[math.radians(float(v)) for v in rpy]).rotation
    return RigidTransform(rot, np.array(pos))


def _parse_noise(d: dict, where: str) -> NoiseParams:
    d = _require_mapping(d, where)
    _check_keys(d, _NOISE_KEYS, where)
    kwargs = {}
    mapping = {
        "pixel_sigma_px": "pixel_sigma",
        "depth_sigma_base_m": "depth_sigma_base",
        "depth_sigma_slope_m_per_m2": "depth_sigma_slope",
        "outlier_rate": "outlier_rate",
        "detect_min_depth_m": "detect_min_depth",
        "detect_max_depth_m": "detect_max_depth",
    }
    for key, attr in mapping.items():
        if key in d:
            kwargs[attr] = float(d[key])
    if "detect_tilt_limit_deg" in d:
        kwargs["detect_tilt_limit"] = math.radians(float(d["detect_tilt_limit_deg"]))
    try:
        return NoiseParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_rig(d: dict, where: str) -> SensorRig:
    try:
        return SensorRig.from_dict(_require_mapping(d, where))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_camera(d: dict, index: int) -> CameraConfig:
    where = f"cameras[{index}]"
    d = _require_mapping(d, where)
    _check_keys(d, _CAMERA_KEYS, where)
    if "id" not in d or not str(d["id"]):
        raise ConfigError(f"{where}.id: camera id is required")
    if "pose" not in d:
        raise ConfigError(f"{where}.pose: camera pose is required")
    preset = d.get("preset")
    if preset is not None and preset not in sim.preset_names():
        raise ConfigError(f"{where}.preset: unknown preset {preset!r} "
                          f"(available: {sim.preset_names()})")
    return CameraConfig(
        camera_id=str(d["id"]),
        pose=_parse_pose(d["pose"], f"{where}.pose"),
        preset=preset,
        noise=_parse_noise(d["noise"], f"{where}.noise") if "noise" in d else None,
        rig_true=_parse_rig(d["rig_true"], f"{where}.rig_true") if "rig_true" in d else None,
        rig_nominal=(_parse_rig(d["rig_nominal"], f"{where}.rig_nominal")
                     if "rig_nominal" in d else None),
    )


def parse_scene_config(data: dict) -> SceneConfig:
    data = _require_mapping(data, "config")
    _check_keys(data, _TOP_KEYS, "config")

    seed = int(data.get("seed", 0))

    board = CheckerboardSpec()
    if "board" in data:
        bd = _require_mapping(data["board"], "board")
        _check_keys(bd, _BOARD_KEYS, "board")
        try:
            board = CheckerboardSpec(
                squares_cols=int(bd.get("squares_cols", 7)),
                squares_rows=int(bd.get("squares_rows", 5)),
                square_size=float(bd.get("square_size_m", 0.030)),
                marker_square=tuple(bd.get("marker_square", (0, 0))),
            )
        except ValueError as exc:
            raise ConfigError(f"board: {exc}") from exc

    robot = RobotModel()
    if "robot" in data:
        rd = _require_mapping(data["robot"], "robot")
        _check_keys(rd, _ROBOT_KEYS, "robot")
        try:
            kwargs = {}
            if "reach_max_m" in rd:
                kwargs["reach_max"] = float(rd["reach_max_m"])
            if "reach_min_m" in rd:
                kwargs["reach_min"] = float(rd["reach_min_m"])
            if "repeatability_sigma_m" in rd:
                kwargs["repeatability_sigma"] = float(rd["repeatability_sigma_m"])
            if "joint_limits_rad" in rd:
                kwargs["joint_limits"] = np.asarray(rd["joint_limits_rad"], dtype=float)
            robot = RobotModel(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"robot: {exc}") from exc

    planner = PlannerDefaults()
    if "planner" in data:
        pd = _require_mapping(data["planner"], "planner")
        _check_keys(pd, _PLANNER_KEYS, "planner")
        planner = PlannerDefaults(
            stages=int(pd.get("stages", 3)),
            base_depth=float(pd.get("base_depth_m", 0.9)),
            overlap=float(pd.get("overlap", 0.0)),
        )

    if "cameras" not in data or not data["cameras"]:
        raise ConfigError("cameras: at least one camera is required")
    cameras = tuple(_parse_camera(c, i) for i, c in enumerate(data["cameras"]))
    ids = [c.camera_id for c in cameras]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"cameras[].id: duplicate camera id(s) {dupes}")
    return SceneConfig(seed=seed, board=board, robot=robot, planner=planner,
                       cameras=cameras, raw=data)


def load_scene_config(path) -> SceneConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        raise ConfigError(f"config {path} is empty")
    return parse_scene_config(data)
