"""Rigid-body transforms and robust 3D-3D point-set registration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, NoConsensus, TooFewPoints

ORTHONORMAL_TOL = 1e-9
# Ratio of singular values of the centered source cloud below which the points
# are treated as collinear (planar clouds are fine; boards are planar).
COLLINEAR_RATIO = 1e-9


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest rotation in Frobenius norm)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform mapping points as p_out = rotation @ p_in + translation.

    The rotation is re-projected onto SO(3) at construction, so downstream
    composition chains cannot drift out of orthonormality.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(r) < 0.0:
            raise ValueError("rotation is not orthonormal with det +1")
        if err > ORTHONORMAL_TOL:
            r = _nearest_rotation(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix, row-major."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 matrix")
        return RigidTransform(m[:3, :3], m[:3, 3])


def identity() -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a: result(p) = a(b(p))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def apply(t: RigidTransform, p) -> np.ndarray:
    """Apply to a single 3-vector."""
    return t.rotation @ np.asarray(p, dtype=float) + t.translation


def apply_points(t: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Apply to an (n, 3) array of points."""
    return np.asarray(pts, dtype=float) @ t.rotation.T + t.translation


def rotation_about_axis(axis: int, angle: float) -> np.ndarray:
    """Rotation matrix about the x (0), y (1) or z (2) axis."""
    c, s = math.cos(angle), math.sin(angle)
    if axis == 0:
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 1:
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == 2:
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError("axis must be 0, 1 or 2")


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> RigidTransform:
    """Extrinsic XYZ convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll), zero translation."""
    r = rotation_about_axis(2, yaw) @ rotation_about_axis(1, pitch) @ rotation_about_axis(0, roll)
    return RigidTransform(r, np.zeros(3))


def rpy_from_rotation(r) -> tuple[float, float, float]:
    """Inverse of rotation_from_rpy for pitch strictly inside (-pi/2, pi/2)."""
    if isinstance(r, RigidTransform):
        r = r.rotation
    r = np.asarray(r, dtype=float)
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return roll, pitch, yaw


def so3_exp(w) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    w = np.asarray(w, dtype=float)
    angle = float(np.linalg.norm(w))
    k = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if angle < 1e-12:
        return np.eye(3) + k  # first-order; adequate below 1e-12 rad
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r) -> np.ndarray:
    """Rotation vector of a rotation matrix."""
    if isinstance(r, RigidTransform):
        r = r.rotation
    r = np.asarray(r, dtype=float)
    cos_angle = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    angle = math.acos(cos_angle)
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-9:
        return 0.5 * v
    if math.pi - angle < 1e-6:
        # Near pi the sine formula is unstable; recover the axis from R + I.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        idx = int(np.argmax(axis))
        col = m[:, idx]
        axis = col / max(axis[idx], 1e-12)
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the off-diagonal antisymmetric part.
        if np.dot(axis, v) < 0.0:
            axis = -axis
        return axis * angle
    return v * (angle / (2.0 * math.sin(angle)))


def rotation_angle(a, b=None) -> float:
    """Geodesic angle of a rotation, or between two rotations."""
    ra = a.rotation if isinstance(a, RigidTransform) else np.asarray(a, dtype=float)
    if b is None:
        rel = ra
    else:
        rb = b.rotation if isinstance(b, RigidTransform) else np.asarray(b, dtype=float)
        rel = ra.T @ rb
    cos_angle = max(-1.0, min(1.0, (np.trace(rel) - 1.0) / 2.0))
    return math.acos(cos_angle)


@dataclass(frozen=True)
class PointSet3:
    """Ordered 3D points with stable per-point identifiers."""

    points: np.ndarray
    ids: tuple = ()

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        pts.setflags(write=False)
        ids = tuple(self.ids) if self.ids else tuple(range(len(pts)))
        if len(ids) != len(pts):
            raise ValueError("ids and points must have the same length")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RansacParams:
    """RANSAC settings; defaults sized to simulated Kinect noise."""

    max_iterations: int = 500
    inlier_threshold: float = 0.010
    min_inlier_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.inlier_threshold <= 0.0:
            raise ValueError("inlier_threshold must be > 0")
        if not 0.0 < self.min_inlier_fraction <= 1.0:
            raise ValueError("min_inlier_fraction must be in (0, 1]")


def _aligned_arrays(src: PointSet3, dst: PointSet3) -> tuple[np.ndarray, np.ndarray, list]:
    """Match dst points to src by id; return arrays in sorted-id order."""
    if set(src.ids) != set(dst.ids):
        raise ValueError("src and dst must carry the same point ids")
    order = sorted(range(len(src)), key=lambda i: src.ids[i])
    ids = [src.ids[i] for i in order]
    dst_index = {pid: i for i, pid in enumerate(dst.ids)}
    s = src.points[order]
    d = dst.points[[dst_index[pid] for pid in ids]]
    return s, d, ids


def _kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid fit of already-matched point arrays."""
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    a = src - src_c
    b = dst - dst_c
    s = np.linalg.svd(a, compute_uv=False)
    if s[1] < COLLINEAR_RATIO * max(s[0], 1e-300):
        raise DegenerateGeometry("source points are collinear within tolerance")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dst_c - r @ src_c
    return RigidTransform(r, t)


def estimate_rigid(src: PointSet3, dst: PointSet3) -> tuple[RigidTransform, float]:
    """SVD-based orthogonal Procrustes fit mapping src onto dst.

    Returns the transform and the RMS residual |dst - T(src)| in meters.
    """
    if len(src) < 3 or len(dst) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(src)}")
    s, d, _ = _aligned_arrays(src, dst)
    transform = _kabsch(s, d)
    resid = d - apply_points(transform, s)
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return transform, rms


def estimate_rigid_ransac(
    src: PointSet3, dst: PointSet3, params: RansacParams
) -> tuple[RigidTransform, tuple]:
    """RANSAC-robustified rigid fit; deterministic for a given seed.

    The best minimal model is refit on its consensus set and the inlier ids are
    recomputed from the refit transform. Iterations stop early once the usual
    0.999-confidence bound for the observed inlier ratio is met.
    """
    if len(src) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(src)}")
    s, d, ids = _aligned_arrays(src, dst)
    n = len(s)
    rng = np.random.default_rng(params.seed)
    threshold_sq = params.inlier_threshold ** 2

    best_mask = None
    best_count = 0
    best_rms = math.inf
    needed = params.max_iterations
    iteration = 0
    while iteration < min(needed, params.max_iterations):
        iteration += 1
        idx = rng.choice(n, size=3, replace=False)
        try:
            model = _kabsch(s[idx], d[idx])
        except DegenerateGeometry:
            continue
        resid_sq = np.sum((d - apply_points(model, s)) ** 2, axis=1)
        mask = resid_sq <= threshold_sq
        count = int(mask.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(resid_sq[mask].mean()))
        if count > best_count or (count == best_count and rms < best_rms):
            best_mask = mask
            best_count = count
            best_rms = rms
            ratio = count / n
            fail = 1.0 - ratio ** 3
            if fail <= 0.0:
                needed = iteration
            else:
                needed = math.ceil(math.log(1e-3) / math.log(fail)) if fail < 1.0 else params.max_iterations

    if best_mask is None or best_count / n < params.min_inlier_fraction:
        raise NoConsensus(f"best consensus {best_count}/{n} below "
                          f"min_inlier_fraction={params.min_inlier_fraction}")

    refit = _kabsch(s[best_mask], d[best_mask])
    resid_sq = np.sum((d - apply_points(refit, s)) ** 2, axis=1)
    final_mask = resid_sq <= threshold_sq
    if final_mask.sum() / n < params.min_inlier_fraction:
        raise NoConsensus("consensus collapsed after refit")
    inlier_ids = tuple(pid for pid, keep in zip(ids, final_mask) if keep)
    return refit, inlier_ids
