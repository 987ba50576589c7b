"""Per-camera calibration session: in-process message bus, passive observation
by idle cameras, staged moves with accumulative recalibration, internal
calibration from saved frames, and the repeated Eye-to-Hand pass.

The numeric reduction steps are pure functions of collected frames, so a
recorded session log can be replayed offline to identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import geometry, planner, zhang
from .camera import DepthModel, SensorRig
from .errors import (
    AutocalError,
    BoardTooLarge,
    DegenerateGeometry,
    IllConditioned,
    InsufficientExcitation,
    InsufficientViews,
    MarkerAmbiguous,
    NoConsensus,
    StartNotDetected,
    TooFewPoints,
    Unreachable,
)
from .geometry import RansacParams, RigidTransform
from .handeye import (
    CorrespondenceSet,
    EyeToHandResult,
    MountOffset,
    MountOffsetEstimate,
    accumulate,
    calibrate_eye_to_hand,
    empty_correspondence_set,
    estimate_mount_offset,
    prediction_error_stats,
    split_holdout,
)
from .sim import SimScene
from .target import BoardObservation, CheckerboardSpec, resolve_orientation

PHASES = ("waiting", "initial_eth", "tilt_sweep", "offset_est", "moving",
          "internal_calib", "repeat_eth", "done")

STALENESS_WINDOW_NS = 100_000_000  # 100 ms of simulated time


class CalibrationAborted(AutocalError):
    """One camera's session failed; the session continues with the others."""

    def __init__(self, camera_id: str, phase: str, cause: str):
        super().__init__(f"camera {camera_id!r} aborted in phase {phase!r}: {cause}")
        self.camera_id = camera_id
        self.phase = phase
        self.cause = cause


# --- message bus -------------------------------------------------------------

@dataclass(frozen=True)
class BusMessage:
    topic: str
    kind: str
    timestamp: int
    payload: Any


class MessageBus:
    """In-process replacement for the pub/sub transport: typed, timestamped
    messages on per-camera topics, recorded for the session log."""

    def __init__(self) -> None:
        self.records: list[BusMessage] = []
        self._last_per_topic: dict[str, int] = {}

    def publish(self, topic: str, kind: str, timestamp: int, payload: Any) -> BusMessage:
        last = self._last_per_topic.get(topic)
        if last is not None and timestamp < last:
            raise ValueError(f"timestamps on topic {topic!r} must be monotone")
        self._last_per_topic[topic] = timestamp
        msg = BusMessage(topic=topic, kind=kind, timestamp=int(timestamp),
                         payload=payload)
        self.records.append(msg)
        return msg


def stale_filter(msg: BusMessage, now: int,
                 window_ns: int = STALENESS_WINDOW_NS) -> bool:
    """Accept a message whose age is within the staleness window (closed
    boundary: exactly window_ns old is still accepted)."""
    return now - msg.timestamp <= window_ns


# --- session state and passive observation -----------------------------------

@dataclass
class PassiveDetection:
    center_distance: float
    flange_pose: RigidTransform
    timestamp: int


@dataclass
class SessionState:
    phases: dict[str, str]
    passive_best: dict[str, PassiveDetection] = field(default_factory=dict)

    def set_phase(self, camera_id: str, phase: str) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self.phases[camera_id] = phase
        active = [c for c, p in self.phases.items() if p not in ("waiting", "done")]
        if len(active) > 1:
            raise RuntimeError(f"more than one active camera: {active}")


def board_center_distance(obs: BoardObservation, width: int, height: int) -> float:
    """Pixel distance of the detected board center to the image center."""
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return float(np.linalg.norm(obs.corners_px.mean(axis=0) - center))


def passive_observe(state: SessionState, msg: BusMessage,
                    width: int, height: int) -> SessionState:
    """Store the pose of the best passive sighting (closest board center to
    the image center); replaces only on strict improvement, so ties keep the
    earlier detection."""
    payload = msg.payload
    obs: BoardObservation = payload["observation"]
    dist = board_center_distance(obs, width, height)
    best = state.passive_best.get(obs.camera_id)
    if best is None or dist < best.center_distance:
        state.passive_best[obs.camera_id] = PassiveDetection(
            center_distance=dist,
            flange_pose=payload["flange_pose"],
            timestamp=msg.timestamp,
        )
    return state


def handoff(state: SessionState, pending) -> Optional[tuple[str, RigidTransform]]:
    """Next camera to calibrate: the waiting one with the best stored passive
    detection (smallest center distance; ties broken by pending order)."""
    best: Optional[tuple[float, str]] = None
    for camera_id in pending:
        det = state.passive_best.get(camera_id)
        if det is None:
            continue
        if best is None or det.center_distance < best[0]:
            best = (det.center_distance, camera_id)
    if best is None:
        return None
    camera_id = best[1]
    return camera_id, state.passive_best[camera_id].flange_pose


# --- settings and results ------------------------------------------------------

@dataclass(frozen=True)
class SessionSettings:
    stages: int = 3
    base_depth: float = 0.9
    overlap: float = 0.0
    scan_step: float = math.radians(15.0)
    scan_radius: float = 0.45
    scan_height: float = 0.50
    n_bootstrap: int = 3
    settle_time_s: float = 2.0
    cartesian_speed: float = 0.1
    frame_period_s: float = 1.0 / 30.0
    holdout_every: int = 5
    abort_after_failures: int = 3
    ransac: RansacParams = RansacParams()


@dataclass
class CameraDataBundle:
    """Frames collected for one camera, in capture order: the pure reduction
    steps below consume exactly these."""

    bootstrap: list = field(default_factory=list)      # (pose_id, pose, obs)
    tilt_runs: list = field(default_factory=list)      # (pose_id, pose, obs)
    loop_frames: list = field(default_factory=list)    # (pose_id, pose, obs, target)
    repeat_frames: list = field(default_factory=list)  # (pose_id, pose, obs)


@dataclass
class CameraCalibration:
    camera_id: str
    color: zhang.IntrinsicCalibrationResult
    ir: zhang.IntrinsicCalibrationResult
    stereo: zhang.StereoCalibrationResult
    depth_model: DepthModel
    mount_offset: MountOffset
    eye_to_hand: EyeToHandResult
    prediction: Optional[dict]
    frame_counts: dict
    elapsed_s: float
    phase_trace: tuple[str, ...] = ()

    @property
    def color_from_ir(self) -> RigidTransform:
        return self.stereo.color_from_ir

    @property
    def rig(self) -> SensorRig:
        return SensorRig(color=self.color.intrinsics, ir=self.ir.intrinsics,
                         color_from_ir=self.stereo.color_from_ir,
                         depth_model=self.depth_model)

    def to_dict(self) -> dict:
        pred = None
        if self.prediction is not None:
            pred = {
                "rms": self.prediction["rms"],
                "rms_per_axis": [float(v) for v in self.prediction["rms_per_axis"]],
                "mean_abs": self.prediction["mean_abs"],
                "mean_abs_per_axis": [float(v) for v in
                                      self.prediction["mean_abs_per_axis"]],
            }
        return {
            "camera_id": self.camera_id,
            "color": self.color.to_dict(),
            "ir": self.ir.to_dict(),
            "color_from_ir": self.stereo.color_from_ir.matrix().tolist(),
            "stereo_rotation_spread": self.stereo.rotation_spread,
            "stereo_translation_spread": self.stereo.translation_spread,
            "depth_model": self.depth_model.to_dict(),
            "mount_offset": self.mount_offset.to_dict(),
            "eye_to_hand": self.eye_to_hand.to_dict(),
            "prediction": pred,
            "frame_counts": dict(self.frame_counts),
            "elapsed_s": self.elapsed_s,
            "phase_trace": list(self.phase_trace),
        }


@dataclass
class CameraOutcome:
    camera_id: str
    calibration: Optional[CameraCalibration] = None
    aborted_phase: Optional[str] = None
    aborted_cause: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.calibration is not None


@dataclass
class SessionResult:
    outcomes: dict[str, CameraOutcome]
    bus: MessageBus
    elapsed_s: float

    @property
    def all_ok(self) -> bool:
        return all(o.ok for o in self.outcomes.values())


# --- pure reduction steps (shared by the live session and replay) -------------

def _is_combined(obs: BoardObservation) -> bool:
    return (obs.corners_px is not None and obs.corners_ir_px is not None
            and obs.corners_depth is not None)


def _accumulate_frames(frames, rig: SensorRig, offset: MountOffset,
                       spec: CheckerboardSpec) -> CorrespondenceSet:
    cset = empty_correspondence_set()
    for pose_id, pose, obs in frames:
        if not _is_combined(obs):
            continue
        cset = accumulate(cset, obs, rig, pose, offset, spec, pose_id,
                          robot_timestamp=obs.timestamp)
    return cset


def robust_eye_to_hand(cset: CorrespondenceSet,
                       params: RansacParams) -> EyeToHandResult:
    """Eye-to-Hand with bounded inlier-threshold escalation.

    Noisier sensors (Kinect-V1-class) scatter beyond the default 10 mm
    threshold; on NoConsensus the threshold is doubled up to 8x before giving
    up. Deterministic, so replay reproduces the same escalation."""
    last_exc: Exception | None = None
    for factor in (1.0, 2.0, 4.0, 8.0):
        scaled = RansacParams(
            max_iterations=params.max_iterations,
            inlier_threshold=params.inlier_threshold * factor,
            min_inlier_fraction=params.min_inlier_fraction,
            seed=params.seed,
        )
        try:
            return calibrate_eye_to_hand(cset, scaled)
        except NoConsensus as exc:
            last_exc = exc
    raise last_exc


def step_bootstrap(frames, rig: SensorRig, spec: CheckerboardSpec,
                   ransac: RansacParams) -> RigidTransform:
    """Initial Eye-to-Hand from the first detections with identity offset."""
    cset = _accumulate_frames(frames, rig, MountOffset.identity(), spec)
    if len(cset) < 3:
        raise TooFewPoints("bootstrap frames yielded fewer than 3 correspondences")
    return robust_eye_to_hand(cset, ransac).robot_from_camera


def step_offset_guidance(tilt_runs, rig: SensorRig, t_initial: RigidTransform,
                         spec: CheckerboardSpec) -> MountOffsetEstimate:
    """Mount offset for trajectory guidance, from nominal intrinsics."""
    runs = [(pose, obs) for _, pose, obs in tilt_runs]
    return estimate_mount_offset(runs, rig, MountOffset.identity(), t_initial, spec)


@dataclass
class InternalCalibration:
    color: zhang.IntrinsicCalibrationResult
    ir: zhang.IntrinsicCalibrationResult
    stereo: zhang.StereoCalibrationResult
    depth_model: DepthModel
    frame_counts: dict

    @property
    def rig(self) -> SensorRig:
        return SensorRig(color=self.color.intrinsics, ir=self.ir.intrinsics,
                         color_from_ir=self.stereo.color_from_ir,
                         depth_model=self.depth_model)


def step_internal(loop_frames, spec: CheckerboardSpec,
                  color_size: tuple[int, int], ir_size: tuple[int, int]) -> InternalCalibration:
    """Internal calibration from the frames saved during the move loop:
    color and IR intrinsics, the color-from-IR extrinsic from combined frames,
    and the linear depth model."""
    color_views = []
    ir_views = []
    combined = []
    for pose_id, _pose, obs, *_ in loop_frames:
        if obs.corners_px is not None:
            color_views.append(zhang.planar_view_from_observation(
                obs, spec, "color", view_id=pose_id))
        if obs.corners_ir_px is not None:
            ir_views.append(zhang.planar_view_from_observation(
                obs, spec, "ir", view_id=pose_id))
        if _is_combined(obs):
            combined.append((pose_id, obs))

    color_result = zhang.calibrate_camera(color_views, *color_size)
    ir_result = zhang.calibrate_camera(ir_views, *ir_size)
    color_by_id = {v.view_id: v for v in color_views}
    combined_ids = {pid for pid, _ in combined}
    stereo = zhang.calibrate_stereo(
        [v for v in color_views if v.view_id in combined_ids],
        [v for v in ir_views if v.view_id in combined_ids],
        color_result.intrinsics, ir_result.intrinsics)

    # Depth model against board depths predicted from the color-camera poses
    # (the higher-resolution camera) chained through the stereo extrinsic; the
    # IR-only poses are noticeably noisier at IR resolution.
    ir_from_color = geometry.invert(stereo.color_from_ir)
    measured = []
    predicted = []
    for pose_id, obs in combined:
        view = color_by_id[pose_id]
        pose_color = zhang.estimate_view_pose(color_result.intrinsics, view)
        board3 = np.column_stack([view.board_points,
                                  np.zeros(len(view.board_points))])
        z_pred = geometry.apply_points(geometry.compose(ir_from_color, pose_color),
                                       board3)[:, 2]
        depths = np.asarray(obs.corners_depth, dtype=float)
        valid = np.isfinite(depths) & (depths > 0.0)
        measured.append(depths[valid])
        predicted.append(z_pred[valid])
    depth_model = zhang.fit_depth_model(np.concatenate(measured),
                                        np.concatenate(predicted))
    counts = {
        "color_frames": len(color_views),
        "ir_frames": len(ir_views),
        "combined_frames": len(combined),
    }
    return InternalCalibration(color=color_result, ir=ir_result, stereo=stereo,
                               depth_model=depth_model, frame_counts=counts)


def step_offset_final(tilt_runs, loop_frames, rig: SensorRig,
                      offset_guidance: MountOffset, spec: CheckerboardSpec,
                      ransac: RansacParams) -> MountOffsetEstimate:
    """Re-estimate the mount offset through the calibrated rig (the saved
    frames are 'converted using internal calibration'): the alternation is
    re-seeded from the loop correspondences rebuilt with the new intrinsics."""
    loop_for_conv = [(pid, pose, obs) for pid, pose, obs, *_ in loop_frames]
    cset = _accumulate_frames(loop_for_conv, rig, offset_guidance, spec)
    if len(cset) < 3:
        raise TooFewPoints("no converted loop correspondences")
    t_conv = robust_eye_to_hand(cset, ransac).robot_from_camera
    runs = [(pose, obs) for _, pose, obs in tilt_runs]
    return estimate_mount_offset(runs, rig, offset_guidance, t_conv, spec,
                                 tol=1e-10, max_rounds=200)


def step_final_eth(repeat_frames, rig: SensorRig, offset: MountOffset,
                   spec: CheckerboardSpec, ransac: RansacParams,
                   holdout_every: int = 5):
    """Final Eye-to-Hand from the repeat pass with a deterministic holdout."""
    cset = _accumulate_frames(repeat_frames, rig, offset, spec)
    if len(cset) < 3:
        raise TooFewPoints("repeat pass yielded fewer than 3 correspondences")
    train, holdout = split_holdout(cset, every=holdout_every)
    if len(train) < 3:
        train, holdout = cset, empty_correspondence_set()
    result = robust_eye_to_hand(train, ransac)
    prediction = None
    if len(holdout) > 0:
        prediction = prediction_error_stats(result, holdout)
    return result, prediction


def reduce_bundle(bundle: CameraDataBundle, camera_id: str, nominal: SensorRig,
                  spec: CheckerboardSpec, settings: SessionSettings,
                  elapsed_s: float = 0.0,
                  phase_trace: tuple[str, ...] = ()) -> CameraCalibration:
    """Run every reduction step on a collected (or replayed) data bundle."""
    t0 = step_bootstrap(bundle.bootstrap, nominal, spec, settings.ransac)
    guidance = step_offset_guidance(bundle.tilt_runs, nominal, t0, spec)
    internal = step_internal(
        bundle.loop_frames, spec,
        (nominal.color.width, nominal.color.height),
        (nominal.ir.width, nominal.ir.height))
    offset_final = step_offset_final(bundle.tilt_runs, bundle.loop_frames,
                                     internal.rig, guidance.offset, spec,
                                     settings.ransac)
    eth, prediction = step_final_eth(bundle.repeat_frames, internal.rig,
                                     offset_final.offset, spec, settings.ransac,
                                     settings.holdout_every)
    return CameraCalibration(
        camera_id=camera_id,
        color=internal.color,
        ir=internal.ir,
        stereo=internal.stereo,
        depth_model=internal.depth_model,
        mount_offset=offset_final.offset,
        eye_to_hand=eth,
        prediction=prediction,
        frame_counts=internal.frame_counts,
        elapsed_s=elapsed_s,
        phase_trace=phase_trace,
    )


# --- the live session runner ---------------------------------------------------

class _SessionRunner:
    def __init__(self, scene: SimScene, settings: SessionSettings):
        self.scene = scene
        self.settings = settings
        self.bus = MessageBus()
        self.state = SessionState(
            phases={c.camera_id: "waiting" for c in scene.cameras})
        self.clock_ns = 0
        self.last_flange: Optional[RigidTransform] = None
        self.active_camera: Optional[str] = None
        self.current_phase = "waiting"
        self.traces: dict[str, list[str]] = {c.camera_id: [] for c in scene.cameras}
        self.pose_counter = 0
        self.current_pose_id = "p00000"

    # -- time and motion --

    def _advance(self, seconds: float) -> None:
        self.clock_ns += int(round(seconds * 1e9))

    def _move(self, target: RigidTransform) -> RigidTransform:
        if self.last_flange is not None:
            dist = float(np.linalg.norm(target.translation
                                        - self.last_flange.translation))
            self._advance(dist / self.settings.cartesian_speed)
        self._advance(self.settings.settle_time_s)
        achieved = self.scene.robot_move(target)
        self.last_flange = achieved
        self.pose_counter += 1
        self.current_pose_id = f"p{self.pose_counter:05d}"
        self.bus.publish("robot/pose", "robot_pose", self.clock_ns,
                         {"matrix": achieved.matrix().tolist(),
                          "pose_id": self.current_pose_id})
        return achieved

    def _capture_all(self, achieved: RigidTransform) -> Optional[BoardObservation]:
        """Render every camera at the settled pose; returns the active
        camera's resolved observation. Idle cameras feed passive_observe."""
        result = None
        for cam in self.scene.cameras:
            obs = self.scene.render_observation(cam.camera_id, achieved,
                                                timestamp=self.clock_ns)
            if obs is None:
                continue
            try:
                resolved = resolve_orientation(obs, obs.marker_corner, self.scene.board)
            except MarkerAmbiguous:
                continue
            msg = self.bus.publish(
                f"{cam.camera_id}/board", "observation", self.clock_ns,
                {"observation": resolved, "flange_pose": achieved,
                 "pose_id": self.current_pose_id,
                 "phase": self.current_phase, "active": cam.camera_id == self.active_camera})
            if cam.camera_id == self.active_camera:
                result = resolved
            elif stale_filter(msg, self.clock_ns):
                passive_observe(self.state, msg,
                                cam.rig.color.width, cam.rig.color.height)
        self._advance(self.settings.frame_period_s)
        return result

    def _move_and_capture(self, target) -> tuple[Optional[RigidTransform],
                                                 Optional[BoardObservation]]:
        if not self.scene.robot.pose_reachable(target):
            return None, None
        achieved = self._move(target)
        return achieved, self._capture_all(achieved)

    # -- phases --

    def _set_phase(self, camera_id: str, phase: str) -> None:
        self.state.set_phase(camera_id, phase)
        self.current_phase = phase
        self.traces[camera_id].append(phase)
        self.bus.publish(f"{camera_id}/phase", "phase", self.clock_ns, phase)

    @staticmethod
    def _facing_pose(flange: RigidTransform, t_estimate: RigidTransform) -> RigidTransform:
        """Flange pose at the same position with its z axis (the board normal,
        identity offset assumed) pointing at the estimated camera position."""
        to_camera = t_estimate.translation - flange.translation
        norm = float(np.linalg.norm(to_camera))
        if norm < 1e-9:
            return flange
        z = to_camera / norm
        up = np.array([0.0, 0.0, 1.0])
        x = np.cross(up, z)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        return RigidTransform(np.column_stack([x, y, z]), flange.translation)

    def initial_scan(self) -> None:
        """360-degree base sweep in an upside-down-L configuration, recording
        every camera's best sighting."""
        previous_active = self.active_camera
        self.active_camera = None
        r, h = self.settings.scan_radius, self.settings.scan_height
        angles = np.arange(0.0, 2.0 * math.pi - 1e-9, self.settings.scan_step)
        for q in angles:
            rot = (geometry.rotation_about_axis(2, float(q))
                   @ geometry.rotation_about_axis(1, math.pi / 2.0))
            pose = RigidTransform(rot, np.array([r * math.cos(q), r * math.sin(q), h]))
            self._move_and_capture(pose)
        self.active_camera = previous_active

    def run(self) -> SessionResult:
        self.initial_scan()
        outcomes: dict[str, CameraOutcome] = {}
        pending = [c.camera_id for c in self.scene.cameras]
        rescanned = False
        while pending:
            pick = handoff(self.state, pending)
            if pick is None:
                if not rescanned:
                    rescanned = True
                    self.initial_scan()
                    continue
                for camera_id in pending:
                    outcomes[camera_id] = CameraOutcome(
                        camera_id=camera_id, aborted_phase="waiting",
                        aborted_cause="board never detected")
                    self.traces[camera_id].append("waiting")
                break
            camera_id, start_pose = pick
            rescanned = False
            try:
                outcomes[camera_id] = CameraOutcome(
                    camera_id=camera_id,
                    calibration=self._run_camera(camera_id, start_pose))
            except CalibrationAborted as abort:
                self.bus.publish(f"{camera_id}/abort", "abort", self.clock_ns,
                                 {"phase": abort.phase, "cause": abort.cause})
                outcomes[camera_id] = CameraOutcome(
                    camera_id=camera_id, aborted_phase=abort.phase,
                    aborted_cause=abort.cause)
            self.state.set_phase(camera_id, "done")
            self.traces[camera_id].append("done")
            pending.remove(camera_id)
        for camera_id, outcome in outcomes.items():
            if outcome.calibration is not None:
                outcome.calibration.phase_trace = tuple(self.traces[camera_id])
                self.bus.publish(f"{camera_id}/result", "result", self.clock_ns,
                                 outcome.calibration.to_dict())
        return SessionResult(outcomes=outcomes, bus=self.bus,
                             elapsed_s=self.clock_ns / 1e9)

    def _run_camera(self, camera_id: str, start_pose: RigidTransform) -> CameraCalibration:
        scene = self.scene
        settings = self.settings
        cam = scene.camera(camera_id)
        nominal = cam.nominal
        spec = scene.board
        bundle = CameraDataBundle()
        self.active_camera = camera_id
        started_ns = self.clock_ns

        def abort(phase: str, cause: str):
            self.active_camera = None
            raise CalibrationAborted(camera_id, phase, cause)

        # Initial Eye-to-Hand from the first detections, identity offset.
        self._set_phase(camera_id, "initial_eth")
        offsets = [np.zeros(3), np.array([0.04, 0.0, 0.0]), np.array([0.0, 0.04, 0.0]),
                   np.array([-0.04, 0.0, 0.0]), np.array([0.0, -0.04, 0.0]),
                   np.array([0.0, 0.0, 0.04])]
        achieved_start = None
        for delta in offsets:
            if len(bundle.bootstrap) >= settings.n_bootstrap:
                break
            target = RigidTransform(start_pose.rotation, start_pose.translation + delta)
            achieved, obs = self._move_and_capture(target)
            if achieved is None:
                continue
            if np.allclose(delta, 0.0):
                achieved_start = achieved
            if obs is not None and _is_combined(obs):
                bundle.bootstrap.append((self.current_pose_id, achieved, obs))
        if achieved_start is None or not bundle.bootstrap:
            abort("initial_eth", "no combined detections at the start pose")
        try:
            t_initial = step_bootstrap(bundle.bootstrap, nominal, spec, settings.ransac)
        except (TooFewPoints, DegenerateGeometry, NoConsensus) as exc:
            abort("initial_eth", str(exc))

        # Turn the board to face the camera directly (using the initial
        # estimate), then sweep the per-axis detection limits.
        self._set_phase(camera_id, "tilt_sweep")
        facing = self._facing_pose(achieved_start, t_initial)
        achieved_facing, obs = self._move_and_capture(facing)
        if achieved_facing is None or obs is None:
            achieved_facing = achieved_start

        def probe(pose: RigidTransform) -> bool:
            _, probe_obs = self._move_and_capture(pose)
            return probe_obs is not None

        try:
            limits = planner.sweep_tilt_limits(probe, achieved_facing)
        except StartNotDetected as exc:
            abort("tilt_sweep", str(exc))
        achieved_start = achieved_facing

        # Mount offset from in-place tilting.
        self._set_phase(camera_id, "offset_est")
        p_hi, p_lo = limits.pitch_max, limits.pitch_min
        y_hi, y_lo = limits.yaw_max, limits.yaw_min
        r_hi, r_lo = limits.roll_max, limits.roll_min
        tilt_list = [
            (0.0, 0.8 * p_hi, 0.0), (0.0, 0.8 * p_lo, 0.0),
            (0.0, 0.0, 0.8 * y_hi), (0.0, 0.0, 0.8 * y_lo),
            (0.0, 0.4 * p_hi, 0.4 * y_hi), (0.0, 0.4 * p_lo, 0.4 * y_lo),
            (0.5 * r_hi, 0.0, 0.0), (0.5 * r_lo, 0.0, 0.0),
            (0.0, 0.4 * p_hi, 0.4 * y_lo), (0.0, 0.4 * p_lo, 0.4 * y_hi),
        ]
        for tilt in tilt_list:
            rot = planner.tilt_rotation(*tilt)
            target = geometry.compose(achieved_start,
                                      RigidTransform(rot, np.zeros(3)))
            achieved, obs = self._move_and_capture(target)
            if achieved is not None and obs is not None and _is_combined(obs):
                bundle.tilt_runs.append((self.current_pose_id, achieved, obs))
        try:
            guidance = step_offset_guidance(bundle.tilt_runs, nominal, t_initial, spec)
        except (ValueError, InsufficientExcitation, DegenerateGeometry,
                TooFewPoints) as exc:
            abort("offset_est", str(exc))

        # Staged move loop with accumulative recalibration.
        self._set_phase(camera_id, "moving")
        try:
            plan = planner.generate_plan(nominal.color, spec, limits,
                                         settings.base_depth, settings.stages,
                                         settings.overlap, camera_id)
        except BoardTooLarge as exc:
            abort("moving", str(exc))
        self.bus.publish(f"{camera_id}/plan", "plan", self.clock_ns, plan.to_dict())
        t_estimate = guidance.eye_to_hand
        loop_set = empty_correspondence_set()
        consecutive_failures = 0
        for tgt in plan.targets:
            flange = planner.to_flange_targets([tgt], t_estimate, guidance.offset)[0]
            achieved, obs = self._move_and_capture(flange)
            if achieved is None:
                continue  # unreachable: skipped, per the planning contract
            if obs is None:
                consecutive_failures += 1
                if consecutive_failures >= settings.abort_after_failures:
                    abort("moving", f"{consecutive_failures} consecutive detection failures")
                continue
            consecutive_failures = 0
            pose_id = self.current_pose_id
            bundle.loop_frames.append((pose_id, achieved, obs, tgt))
            if _is_combined(obs):
                loop_set = accumulate(loop_set, obs, nominal, achieved,
                                      guidance.offset, spec, pose_id,
                                      robot_timestamp=obs.timestamp)
                if len(loop_set) >= 3:
                    try:
                        t_estimate = robust_eye_to_hand(
                            loop_set, settings.ransac).robot_from_camera
                    except (NoConsensus, DegenerateGeometry):
                        pass  # keep the previous estimate for guidance
        n_color = sum(1 for f in bundle.loop_frames if f[2].corners_px is not None)
        n_ir = sum(1 for f in bundle.loop_frames if f[2].corners_ir_px is not None)
        if n_color < 4 or n_ir < 4:
            abort("moving", f"too few detections ({n_color} color / {n_ir} ir)")

        # Internal calibration from the saved frames.
        self._set_phase(camera_id, "internal_calib")
        try:
            internal = step_internal(
                bundle.loop_frames, spec,
                (nominal.color.width, nominal.color.height),
                (nominal.ir.width, nominal.ir.height))
            offset_final = step_offset_final(bundle.tilt_runs, bundle.loop_frames,
                                             internal.rig, guidance.offset, spec,
                                             settings.ransac)
        except (AutocalError, ValueError) as exc:
            abort("internal_calib", str(exc))

        # Repeated Eye-to-Hand: same positions, tilt removed, calibrated rig.
        self._set_phase(camera_id, "repeat_eth")
        t_repeat = offset_final.eye_to_hand
        for _, _, _, tgt in bundle.loop_frames:
            board_pose = planner._board_pose_for(internal.color.intrinsics, spec,
                                                 tgt.intended_pixel, tgt.depth,
                                                 (0.0, 0.0, 0.0))
            repeat_tgt = planner.MotionTarget(board_pose, tgt.intended_pixel,
                                              tgt.depth, tgt.stage, tgt.depth_pass,
                                              (0.0, 0.0, 0.0))
            flange = planner.to_flange_targets([repeat_tgt], t_repeat,
                                               offset_final.offset)[0]
            achieved, obs = self._move_and_capture(flange)
            if achieved is None or obs is None:
                continue
            bundle.repeat_frames.append((self.current_pose_id, achieved, obs))
        try:
            eth, prediction = step_final_eth(bundle.repeat_frames, internal.rig,
                                             offset_final.offset, spec,
                                             settings.ransac, settings.holdout_every)
        except (AutocalError, ValueError) as exc:
            abort("repeat_eth", str(exc))

        self.active_camera = None
        return CameraCalibration(
            camera_id=camera_id,
            color=internal.color,
            ir=internal.ir,
            stereo=internal.stereo,
            depth_model=internal.depth_model,
            mount_offset=offset_final.offset,
            eye_to_hand=eth,
            prediction=prediction,
            frame_counts=internal.frame_counts,
            elapsed_s=(self.clock_ns - started_ns) / 1e9,
        )


def run_session(scene: SimScene,
                settings: SessionSettings | None = None) -> SessionResult:
    """Execute the full calibration session on a simulated scene, camera by
    camera in handoff order."""
    return _SessionRunner(scene, settings or SessionSettings()).run()
