"""Eye-to-Hand estimation from accumulated 3D-3D correspondences, mount-offset
estimation from tilt observations, and per-axis error reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .camera import SensorRig, backproject_points
from .errors import EmptyHoldout, InsufficientExcitation, TimestampSkew
from .geometry import PointSet3, RansacParams, RigidTransform
from .target import BoardObservation, CheckerboardSpec, corner_grid

SYNC_WINDOW_NS = 30_000_000  # one frame at 30 Hz
MIN_EXCITATION_RAD = math.radians(5.0)


@dataclass(frozen=True)
class MountOffset:
    """Rigid transform from the board frame to the robot flange frame."""

    flange_from_board: RigidTransform

    @staticmethod
    def identity() -> "MountOffset":
        return MountOffset(geometry.identity())

    def to_dict(self) -> dict:
        return {"flange_from_board": self.flange_from_board.matrix().tolist()}

    @staticmethod
    def from_dict(d: dict) -> "MountOffset":
        return MountOffset(RigidTransform.from_matrix(np.asarray(d["flange_from_board"])))


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired camera-frame / robot-base-frame 3D corner points accumulated
    across robot poses, with per-point timestamps and source pose ids."""

    camera_points: PointSet3
    robot_points: PointSet3
    timestamps: np.ndarray
    source_pose_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        ts = np.array(self.timestamps, dtype=np.int64).reshape(-1)
        if self.camera_points.ids != self.robot_points.ids:
            raise ValueError("camera and robot point ids must match")
        if len(ts) != len(self.camera_points) or len(self.source_pose_ids) != len(ts):
            raise ValueError("timestamps/source_pose_ids must align with points")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "source_pose_ids", tuple(self.source_pose_ids))

    def __len__(self) -> int:
        return len(self.camera_points)

    def subset(self, indices) -> "CorrespondenceSet":
        indices = list(indices)
        return CorrespondenceSet(
            camera_points=PointSet3(self.camera_points.points[indices],
                                    tuple(self.camera_points.ids[i] for i in indices)),
            robot_points=PointSet3(self.robot_points.points[indices],
                                   tuple(self.robot_points.ids[i] for i in indices)),
            timestamps=self.timestamps[indices],
            source_pose_ids=tuple(self.source_pose_ids[i] for i in indices),
        )

    def pose_ids_in_order(self) -> list[str]:
        seen: dict[str, None] = {}
        for pid in self.source_pose_ids:
            seen.setdefault(pid, None)
        return list(seen)


def empty_correspondence_set() -> CorrespondenceSet:
    return CorrespondenceSet(
        camera_points=PointSet3(np.zeros((0, 3)), ()),
        robot_points=PointSet3(np.zeros((0, 3)), ()),
        timestamps=np.zeros(0, dtype=np.int64),
        source_pose_ids=(),
    )


def accumulate(cset: CorrespondenceSet, obs: BoardObservation, rig: SensorRig,
               robot_pose: RigidTransform, offset: MountOffset,
               spec: CheckerboardSpec, source_pose_id: str,
               robot_timestamp: int | None = None,
               sync_window_ns: int = SYNC_WINDOW_NS) -> CorrespondenceSet:
    """Append one observation's correspondences.

    Camera points come from back-projecting the IR corners through the rig;
    robot points from robot_pose * flange_from_board * corner_grid. Corners
    with invalid (NaN / non-positive) depth are dropped.
    """
    if not obs.orientation_resolved:
        raise ValueError("observation must be orientation-resolved")
    if obs.corners_ir_px is None or obs.corners_depth is None:
        raise ValueError("observation has no IR corners/depths to accumulate")
    ts_robot = obs.timestamp if robot_timestamp is None else robot_timestamp
    if abs(int(obs.timestamp) - int(ts_robot)) > sync_window_ns:
        raise TimestampSkew(
            f"observation and robot pose differ by "
            f"{abs(int(obs.timestamp) - int(ts_robot))} ns (> {sync_window_ns})")

    depths = np.asarray(obs.corners_depth, dtype=float)
    valid = np.isfinite(depths) & (depths > 0.0)
    if not valid.any():
        return cset
    idx = np.nonzero(valid)[0]
    cam_pts = backproject_points(rig.ir, obs.corners_ir_px[idx], depths[idx],
                                 rig.depth_model)
    board = corner_grid(spec).points[idx]
    base_from_board = geometry.compose(robot_pose, offset.flange_from_board)
    rob_pts = geometry.apply_points(base_from_board, board)

    ids = tuple(f"{source_pose_id}:{int(j):03d}" for j in idx)
    old_ids = cset.camera_points.ids
    ts = np.full(len(idx), int(obs.timestamp), dtype=np.int64)
    return CorrespondenceSet(
        camera_points=PointSet3(np.vstack([cset.camera_points.points, cam_pts]),
                                old_ids + ids),
        robot_points=PointSet3(np.vstack([cset.robot_points.points, rob_pts]),
                               old_ids + ids),
        timestamps=np.concatenate([cset.timestamps, ts]),
        source_pose_ids=cset.source_pose_ids + (source_pose_id,) * len(idx),
    )


@dataclass(frozen=True)
class EyeToHandResult:
    """T_C^R estimate with residual statistics in robot-base axes."""

    robot_from_camera: RigidTransform
    inlier_count: int
    rms_residual: float
    per_axis_rms: np.ndarray
    training_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        pa = np.array(self.per_axis_rms, dtype=float).reshape(3)
        pa.setflags(write=False)
        object.__setattr__(self, "per_axis_rms", pa)

    def to_dict(self) -> dict:
        return {
            "robot_from_camera": self.robot_from_camera.matrix().tolist(),
            "inlier_count": int(self.inlier_count),
            "rms_residual": float(self.rms_residual),
            "per_axis_rms": [float(v) for v in self.per_axis_rms],
        }

    @staticmethod
    def from_dict(d: dict) -> "EyeToHandResult":
        return EyeToHandResult(
            robot_from_camera=RigidTransform.from_matrix(np.asarray(d["robot_from_camera"])),
            inlier_count=int(d["inlier_count"]),
            rms_residual=float(d["rms_residual"]),
            per_axis_rms=np.asarray(d["per_axis_rms"], dtype=float),
        )


def calibrate_eye_to_hand(cset: CorrespondenceSet,
                          params: RansacParams) -> EyeToHandResult:
    """RANSAC rigid fit camera_points -> robot_points with per-axis residual
    RMS computed from the inliers in robot-base axes."""
    transform, inlier_ids = geometry.estimate_rigid_ransac(
        cset.camera_points, cset.robot_points, params)
    inlier_set = set(inlier_ids)
    mask = np.array([pid in inlier_set for pid in cset.camera_points.ids])
    resid = (cset.robot_points.points[mask]
             - geometry.apply_points(transform, cset.camera_points.points[mask]))
    per_axis = np.sqrt(np.mean(resid * resid, axis=0))
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return EyeToHandResult(
        robot_from_camera=transform,
        inlier_count=int(mask.sum()),
        rms_residual=rms,
        per_axis_rms=per_axis,
        training_ids=tuple(cset.camera_points.ids),
    )


@dataclass(frozen=True)
class MountOffsetEstimate:
    offset: MountOffset
    eye_to_hand: RigidTransform
    error_trace: tuple[float, ...]


def _tilt_run_points(tilt_runs, rig: SensorRig, spec: CheckerboardSpec):
    """Per-run camera-frame corner points and matching board points."""
    board_all = corner_grid(spec).points
    runs = []
    for robot_pose, obs in tilt_runs:
        if not obs.orientation_resolved:
            raise ValueError("tilt observations must be orientation-resolved")
        if obs.corners_ir_px is None or obs.corners_depth is None:
            continue
        depths = np.asarray(obs.corners_depth, dtype=float)
        valid = np.isfinite(depths) & (depths > 0.0)
        if valid.sum() < 3:
            continue
        idx = np.nonzero(valid)[0]
        cam = backproject_points(rig.ir, obs.corners_ir_px[idx], depths[idx],
                                 rig.depth_model)
        runs.append((robot_pose, cam, board_all[idx]))
    return runs


def estimate_mount_offset(tilt_runs, rig: SensorRig, initial: MountOffset,
                          eye_to_hand: RigidTransform,
                          spec: CheckerboardSpec,
                          tol: float = 1e-6, max_rounds: int = 20) -> MountOffsetEstimate:
    """Alternating estimation of the mount offset and T_C^R from tilt poses.

    Model: camera_point = T^-1 * robot_pose * offset * board_point. Each round
    solves the offset by Procrustes with T fixed, then T with the offset fixed;
    both half-steps are exact minimizers, so the total squared error is
    non-increasing. Stops when the offset change drops below tol (meters +
    radians) or after max_rounds.
    """
    runs = _tilt_run_points(tilt_runs, rig, spec)
    if len(runs) < 3:
        raise ValueError(f"need >= 3 usable tilt runs, got {len(runs)}")
    poses = [r[0] for r in runs]
    max_angle = max(geometry.rotation_angle(a, b)
                    for i, a in enumerate(poses) for b in poses[i + 1:])
    if max_angle < MIN_EXCITATION_RAD:
        raise InsufficientExcitation(
            f"tilt orientations span {math.degrees(max_angle):.2f} deg (< 5 deg)")
    rotvecs = np.array([geometry.so3_log(poses[0].rotation.T @ p.rotation)
                        for p in poses[1:]])
    if np.linalg.svd(rotvecs, compute_uv=False)[1] < MIN_EXCITATION_RAD / 4.0:
        raise InsufficientExcitation("tilt axes are collinear; offset unobservable")

    board_stack = np.vstack([b for _, _, b in runs])
    cam_stack = np.vstack([c for _, c, _ in runs])
    n_pts = [len(c) for _, c, _ in runs]
    ids = tuple(range(len(board_stack)))
    board_set = PointSet3(board_stack, ids)

    offset_t = initial.flange_from_board
    t_cr = eye_to_hand
    trace = []
    for _ in range(max_rounds):
        # Offset step: measured corners mapped into the flange frame.
        z_blocks = []
        start = 0
        for (robot_pose, cam, _), n in zip(runs, n_pts):
            flange_from_base = geometry.invert(robot_pose)
            pts = geometry.apply_points(
                geometry.compose(flange_from_base, t_cr), cam_stack[start:start + n])
            z_blocks.append(pts)
            start += n
        new_offset, _ = geometry.estimate_rigid(
            board_set, PointSet3(np.vstack(z_blocks), ids))
        # T step: robot-frame corners from the updated offset.
        r_blocks = []
        for robot_pose, _, board in runs:
            base_from_board = geometry.compose(robot_pose, new_offset)
            r_blocks.append(geometry.apply_points(base_from_board, board))
        robot_stack = np.vstack(r_blocks)
        t_cr, _ = geometry.estimate_rigid(PointSet3(cam_stack, ids),
                                          PointSet3(robot_stack, ids))
        resid = robot_stack - geometry.apply_points(t_cr, cam_stack)
        trace.append(float(np.sum(resid * resid)))

        change = (np.linalg.norm(new_offset.translation - offset_t.translation)
                  + geometry.rotation_angle(new_offset.rotation, offset_t.rotation))
        offset_t = new_offset
        if change < tol:
            break
    return MountOffsetEstimate(
        offset=MountOffset(offset_t),
        eye_to_hand=t_cr,
        error_trace=tuple(trace),
    )


def prediction_error(result: EyeToHandResult, holdout: CorrespondenceSet,
                     check_disjoint: bool = True):
    """RMS of robot_points - T(camera_points) on a holdout set: overall and per
    robot-base axis."""
    if len(holdout) == 0:
        raise EmptyHoldout("holdout set is empty")
    if check_disjoint and result.training_ids:
        overlap = set(result.training_ids) & set(holdout.camera_points.ids)
        if overlap:
            raise ValueError(f"holdout overlaps training set: {sorted(overlap)[:3]}...")
    resid = (holdout.robot_points.points
             - geometry.apply_points(result.robot_from_camera,
                                     holdout.camera_points.points))
    overall = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    per_axis = np.sqrt(np.mean(resid * resid, axis=0))
    return overall, per_axis


def prediction_error_stats(result: EyeToHandResult, holdout: CorrespondenceSet,
                           check_disjoint: bool = True) -> dict:
    """Both RMS and mean-absolute prediction errors (reports emit both)."""
    overall, per_axis = prediction_error(result, holdout, check_disjoint)
    resid = (holdout.robot_points.points
             - geometry.apply_points(result.robot_from_camera,
                                     holdout.camera_points.points))
    return {
        "rms": overall,
        "rms_per_axis": per_axis,
        "mean_abs": float(np.mean(np.linalg.norm(resid, axis=1))),
        "mean_abs_per_axis": np.mean(np.abs(resid), axis=0),
    }


def split_holdout(cset: CorrespondenceSet, every: int = 5):
    """Deterministic train/holdout split: every `every`-th accumulated pose
    (the 5th, 10th, ... in first-appearance order) goes to the holdout."""
    pose_ids = cset.pose_ids_in_order()
    holdout_poses = {pid for i, pid in enumerate(pose_ids) if (i + 1) % every == 0}
    train_idx = [i for i, pid in enumerate(cset.source_pose_ids)
                 if pid not in holdout_poses]
    hold_idx = [i for i, pid in enumerate(cset.source_pose_ids)
                if pid in holdout_poses]
    return cset.subset(train_idx), cset.subset(hold_idx)
