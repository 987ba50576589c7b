"""Planar-target intrinsic calibration: homographies, closed-form
initialization, Levenberg-Marquardt refinement with analytic Jacobians, plus
color-to-IR extrinsic estimation and the linear depth-model fit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .camera import Intrinsics, DepthModel, undistort_points
from .errors import (
    DegenerateConfiguration,
    DivergenceDetected,
    IllConditioned,
    InsufficientViews,
    NoCombinedViews,
    SingularHomography,
)
from .geometry import RigidTransform, so3_exp, so3_log
from .target import BoardObservation, CheckerboardSpec, corner_grid

N_INTRINSIC_PARAMS = 9  # fx, fy, cx, cy, k1, k2, k3, p1, p2


@dataclass(frozen=True)
class PlanarView:
    """Board-frame 2D points (z=0 dropped) matched to image pixels, in
    canonical (orientation-resolved) corner order."""

    board_points: np.ndarray
    image_points: np.ndarray
    view_id: str = ""

    def __post_init__(self) -> None:
        bp = np.array(self.board_points, dtype=float).reshape(-1, 2)
        ip = np.array(self.image_points, dtype=float).reshape(-1, 2)
        if len(bp) != len(ip):
            raise ValueError("board and image point counts differ")
        if len(bp) < 4:
            raise ValueError("a planar view needs at least 4 points")
        bp.setflags(write=False)
        ip.setflags(write=False)
        object.__setattr__(self, "board_points", bp)
        object.__setattr__(self, "image_points", ip)

    def __len__(self) -> int:
        return len(self.board_points)


@dataclass(frozen=True)
class IntrinsicCalibrationResult:
    intrinsics: Intrinsics
    per_view_poses: tuple[RigidTransform, ...]
    mean_reprojection_error: float
    per_view_errors: tuple[float, ...]
    cost_history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "per_view_poses": [p.matrix().tolist() for p in self.per_view_poses],
            "mean_reprojection_error": self.mean_reprojection_error,
            "per_view_errors": list(self.per_view_errors),
        }

    @staticmethod
    def from_dict(d: dict) -> "IntrinsicCalibrationResult":
        return IntrinsicCalibrationResult(
            intrinsics=Intrinsics.from_dict(d["intrinsics"]),
            per_view_poses=tuple(RigidTransform.from_matrix(np.asarray(m))
                                 for m in d["per_view_poses"]),
            mean_reprojection_error=float(d["mean_reprojection_error"]),
            per_view_errors=tuple(float(e) for e in d["per_view_errors"]),
        )


def planar_view_from_observation(obs: BoardObservation, spec: CheckerboardSpec,
                                 which: str, view_id: str = "") -> PlanarView:
    """Build a PlanarView from an orientation-resolved observation."""
    if not obs.orientation_resolved:
        raise ValueError("observation must be orientation-resolved")
    pixels = obs.corners_px if which == "color" else obs.corners_ir_px
    if pixels is None:
        raise ValueError(f"observation has no {which} corners")
    board = corner_grid(spec).points[:, :2]
    return PlanarView(board, pixels, view_id=view_id or str(obs.timestamp))


# --- homography -------------------------------------------------------------

def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity transform taking pts to zero centroid, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if dist < 1e-12:
        raise DegenerateConfiguration("points are coincident")
    s = math.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def estimate_homography(view: PlanarView) -> np.ndarray:
    """Normalized DLT homography mapping board points to image points,
    scaled so h33 = 1 when |h33| > 1e-12."""
    nb = _hartley_normalization(view.board_points)
    ni = _hartley_normalization(view.image_points)
    bh = np.concatenate([view.board_points, np.ones((len(view), 1))], axis=1) @ nb.T
    ih = np.concatenate([view.image_points, np.ones((len(view), 1))], axis=1) @ ni.T

    n = len(view)
    a = np.zeros((2 * n, 9))
    x, y = bh[:, 0], bh[:, 1]
    u, v = ih[:, 0], ih[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, s, vt = np.linalg.svd(a)
    if s[7] < 1e-9 * s[0]:
        raise DegenerateConfiguration("point configuration does not determine a homography")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(ni) @ h @ nb
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return h


# --- closed-form intrinsics (Zhang) ----------------------------------------

def _conic_row(h: np.ndarray, i: int, j: int) -> np.ndarray:
    """Constraint row h_i^T B h_j = 0 on b = (B11, B22, B13, B23, B33), B12 = 0."""
    hi, hj = h[:, i], h[:, j]
    return np.array([
        hi[0] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])


def intrinsics_closed_form(homographies: list, width: int, height: int) -> Intrinsics:
    """Solve the absolute-conic system for fx, fy, cx, cy with skew fixed to 0;
    distortion coefficients are zeroed.

    Requires >= 2 views; raises IllConditioned when the views are too parallel
    for the system to determine the four parameters.
    """
    if len(homographies) < 2:
        raise InsufficientViews(f"need >= 2 homographies, got {len(homographies)}")
    rows = []
    for h in homographies:
        h = np.asarray(h, dtype=float)
        rows.append(_conic_row(h, 0, 1))
        rows.append(_conic_row(h, 0, 0) - _conic_row(h, 1, 1))
    v = np.array(rows)
    _, s, vt = np.linalg.svd(v)
    if s[3] < s[0] / 1e12:
        raise IllConditioned("absolute-conic system is rank deficient; "
                             "board orientations are too parallel")
    b11, b22, b13, b23, b33 = vt[-1]
    if b11 < 0.0:
        b11, b22, b13, b23, b33 = -b11, -b22, -b13, -b23, -b33
    if b11 <= 0.0 or b22 <= 0.0:
        raise IllConditioned("conic solution is not positive definite")
    v0 = -b23 / b22
    lam = b33 - b13 * b13 / b11 + v0 * b23
    if lam <= 0.0 or lam / b11 <= 0.0:
        raise IllConditioned("conic solution yields non-positive focal lengths")
    fx = math.sqrt(lam / b11)
    fy = math.sqrt(lam / b22)
    u0 = -b13 * fx * fx / lam
    try:
        return Intrinsics(fx=fx, fy=fy, cx=u0, cy=v0, width=width, height=height)
    except ValueError as exc:
        raise IllConditioned(f"closed-form solution out of bounds: {exc}") from exc


def extrinsics_from_homography(intr: Intrinsics, h: np.ndarray) -> RigidTransform:
    """Board pose (camera_from_board) from a pixel homography; the sign is
    fixed so the board lies in front of the camera (t_z > 0)."""
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.det(h)) < 1e-15:
        raise SingularHomography("homography is singular")
    m = np.linalg.inv(intr.matrix()) @ h
    return _pose_from_normalized_homography(m)


def _pose_from_normalized_homography(m: np.ndarray) -> RigidTransform:
    norm1 = np.linalg.norm(m[:, 0])
    if norm1 < 1e-15:
        raise SingularHomography("homography column has zero norm")
    lam = 1.0 / norm1
    r1 = lam * m[:, 0]
    r2 = lam * m[:, 1]
    t = lam * m[:, 2]
    if t[2] < 0.0:
        r1, r2, t = -r1, -r2, -t
    r3 = np.cross(r1, r2)
    r = geometry._nearest_rotation(np.column_stack([r1, r2, r3]))
    return RigidTransform(r, t)


# --- residuals and analytic Jacobians ---------------------------------------

def _pack_intrinsics(intr: Intrinsics) -> np.ndarray:
    return np.array([intr.fx, intr.fy, intr.cx, intr.cy,
                     intr.k1, intr.k2, intr.k3, intr.p1, intr.p2])


def _unpack_intrinsics(g: np.ndarray, template: Intrinsics) -> Intrinsics:
    return Intrinsics(fx=g[0], fy=g[1], cx=g[2], cy=g[3],
                      width=template.width, height=template.height,
                      skew=template.skew,
                      k1=g[4], k2=g[5], k3=g[6], p1=g[7], p2=g[8])


def _view_residual(g: np.ndarray, rot: np.ndarray, t: np.ndarray,
                   view: PlanarView):
    """Residual (2n,) for one view, or None if a point falls behind the camera."""
    fx, fy, cx, cy, k1, k2, k3, p1, p2 = g
    pc = view.board_points @ rot[:, :2].T + t
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        return None
    x = pc[:, 0] / z
    y = pc[:, 1] / z
    r2 = x * x + y * y
    a = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * a + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * a + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    res = np.empty(2 * len(view))
    res[0::2] = fx * xd + cx - view.image_points[:, 0]
    res[1::2] = fy * yd + cy - view.image_points[:, 1]
    return res


def _view_residual_jacobian(g: np.ndarray, rot: np.ndarray, t: np.ndarray,
                            view: PlanarView):
    """Residual plus Jacobian blocks for one view.

    Returns (res (2n,), jg (2n, 9), jp (2n, 6)) where jp differentiates with
    respect to the local pose increment (domega, dt): the rotation is
    perturbed on the left, R <- exp([domega]) R.
    """
    fx, fy, cx, cy, k1, k2, k3, p1, p2 = g
    n = len(view)
    pc = view.board_points @ rot[:, :2].T + t
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        return None
    x = pc[:, 0] / z
    y = pc[:, 1] / z
    r2 = x * x + y * y
    a = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    da = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    xd = x * a + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * a + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y

    res = np.empty(2 * n)
    res[0::2] = fx * xd + cx - view.image_points[:, 0]
    res[1::2] = fy * yd + cy - view.image_points[:, 1]

    jg = np.zeros((2 * n, N_INTRINSIC_PARAMS))
    jg[0::2, 0] = xd
    jg[1::2, 1] = yd
    jg[0::2, 2] = 1.0
    jg[1::2, 3] = 1.0
    jg[0::2, 4] = fx * x * r2
    jg[1::2, 4] = fy * y * r2
    jg[0::2, 5] = fx * x * r2 * r2
    jg[1::2, 5] = fy * y * r2 * r2
    jg[0::2, 6] = fx * x * r2 * r2 * r2
    jg[1::2, 6] = fy * y * r2 * r2 * r2
    jg[0::2, 7] = fx * 2.0 * x * y
    jg[1::2, 7] = fy * (r2 + 2.0 * y * y)
    jg[0::2, 8] = fx * (r2 + 2.0 * x * x)
    jg[1::2, 8] = fy * 2.0 * x * y

    # d(xd, yd) / d(x, y); the off-diagonal terms coincide.
    dxd_dx = a + 2.0 * x * x * da + 2.0 * p1 * y + 6.0 * p2 * x
    dyd_dy = a + 2.0 * y * y * da + 6.0 * p1 * y + 2.0 * p2 * x
    cross_term = 2.0 * x * y * da + 2.0 * p1 * x + 2.0 * p2 * y

    duv_dxy = np.empty((n, 2, 2))
    duv_dxy[:, 0, 0] = fx * dxd_dx
    duv_dxy[:, 0, 1] = fx * cross_term
    duv_dxy[:, 1, 0] = fy * cross_term
    duv_dxy[:, 1, 1] = fy * dyd_dy

    dxy_dpc = np.zeros((n, 2, 3))
    inv_z = 1.0 / z
    dxy_dpc[:, 0, 0] = inv_z
    dxy_dpc[:, 0, 2] = -x * inv_z
    dxy_dpc[:, 1, 1] = inv_z
    dxy_dpc[:, 1, 2] = -y * inv_z

    duv_dpc = np.einsum("nij,njk->nik", duv_dxy, dxy_dpc)

    # pc = exp([domega]) (R p) + t + dt  =>  d pc / d domega = -[R p]x = -[pc - t]x
    q = pc - t
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -q[:, 2]
    skew[:, 0, 2] = q[:, 1]
    skew[:, 1, 0] = q[:, 2]
    skew[:, 1, 2] = -q[:, 0]
    skew[:, 2, 0] = -q[:, 1]
    skew[:, 2, 1] = q[:, 0]

    j_omega = -np.einsum("nij,njk->nik", duv_dpc, skew)
    jp = np.concatenate([j_omega, duv_dpc], axis=2).reshape(2 * n, 6)
    return res, jg, jp


def apply_increment(intr: Intrinsics, poses, delta: np.ndarray):
    """Apply a packed parameter increment [d_intrinsics(9), (domega, dt) per
    view] to an intrinsics + pose state. Used by refine and by the
    finite-difference Jacobian validation."""
    g = _pack_intrinsics(intr) + delta[:N_INTRINSIC_PARAMS]
    new_intr = _unpack_intrinsics(g, intr)
    new_poses = []
    for i, pose in enumerate(poses):
        d = delta[N_INTRINSIC_PARAMS + 6 * i: N_INTRINSIC_PARAMS + 6 * (i + 1)]
        rot = so3_exp(d[:3]) @ pose.rotation
        new_poses.append(RigidTransform(rot, pose.translation + d[3:]))
    return new_intr, new_poses


def residuals_and_jacobian(intr: Intrinsics, poses, views):
    """Stacked residual vector and dense Jacobian over the packed increment
    (see apply_increment), evaluated at zero increment."""
    g = _pack_intrinsics(intr)
    n_params = N_INTRINSIC_PARAMS + 6 * len(views)
    res_blocks = []
    jac_blocks = []
    for i, (pose, view) in enumerate(zip(poses, views)):
        out = _view_residual_jacobian(g, pose.rotation, pose.translation, view)
        if out is None:
            raise ValueError(f"view {i} has points behind the camera")
        res, jg, jp = out
        jac = np.zeros((len(res), n_params))
        jac[:, :N_INTRINSIC_PARAMS] = jg
        jac[:, N_INTRINSIC_PARAMS + 6 * i: N_INTRINSIC_PARAMS + 6 * (i + 1)] = jp
        res_blocks.append(res)
        jac_blocks.append(jac)
    return np.concatenate(res_blocks), np.concatenate(jac_blocks, axis=0)


def residuals_only(intr: Intrinsics, poses, views) -> np.ndarray:
    g = _pack_intrinsics(intr)
    blocks = []
    for pose, view in zip(poses, views):
        res = _view_residual(g, pose.rotation, pose.translation, view)
        if res is None:
            raise ValueError("a view has points behind the camera")
        blocks.append(res)
    return np.concatenate(blocks)


# --- Levenberg-Marquardt refinement ------------------------------------------

def _total_cost(g, rotations, translations, views) -> float:
    cost = 0.0
    for rot, t, view in zip(rotations, translations, views):
        res = _view_residual(g, rot, t, view)
        if res is None:
            return math.inf
        cost += float(res @ res)
    return cost


def refine(initial: Intrinsics, views, initial_poses,
           max_iterations: int = 200, cost_tol: float = 1e-12,
           initial_lambda: float = 1e-3) -> IntrinsicCalibrationResult:
    """Joint LM minimization of squared reprojection error over intrinsics,
    distortion and all view poses.

    The normal equations are solved with a Schur complement on the per-view
    pose blocks, so large view counts stay cheap. Damping: x10 on reject,
    /10 on accept. Skew is kept fixed at the initial value.
    """
    if len(views) != len(initial_poses):
        raise ValueError("one initial pose per view is required")
    if not views:
        raise InsufficientViews("refine needs at least one view")
    g = _pack_intrinsics(initial)
    rotations = [p.rotation.copy() for p in initial_poses]
    translations = [p.translation.copy() for p in initial_poses]
    lam = initial_lambda
    cost = _total_cost(g, rotations, translations, views)
    if not math.isfinite(cost):
        raise ValueError("initial poses place board points behind the camera")
    history = [cost]
    n_views = len(views)

    for _ in range(max_iterations):
        blocks = []
        a = np.zeros((N_INTRINSIC_PARAMS, N_INTRINSIC_PARAMS))
        bg = np.zeros(N_INTRINSIC_PARAMS)
        for rot, t, view in zip(rotations, translations, views):
            out = _view_residual_jacobian(g, rot, t, view)
            if out is None:
                raise DivergenceDetected("points moved behind the camera")
            res, jg, jp = out
            a += jg.T @ jg
            bg += jg.T @ res
            blocks.append((jp.T @ jp, jg.T @ jp, jp.T @ res))

        accepted = False
        rejects = 0
        step_norm = 0.0
        while not accepted:
            a_d = a + lam * np.diag(np.maximum(np.diag(a), 1e-12))
            s_mat = a_d.copy()
            rhs = -bg.copy()
            solves = []
            ok = True
            for d, b, bp in blocks:
                d_d = d + lam * np.diag(np.maximum(np.diag(d), 1e-12))
                try:
                    d_inv = np.linalg.inv(d_d)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                s_mat -= b @ d_inv @ b.T
                rhs += b @ (d_inv @ bp)
                solves.append((d_inv, b, bp))
            if ok:
                try:
                    dg = np.linalg.solve(s_mat, rhs)
                except np.linalg.LinAlgError:
                    ok = False
            if not ok:
                lam = min(lam * 10.0, 1e12)
                rejects += 1
                if rejects >= 10:
                    raise DivergenceDetected("normal equations unsolvable")
                continue

            new_g = g + dg
            new_rot = []
            new_t = []
            step_norm = float(np.abs(dg).max(initial=0.0))
            for (d_inv, b, bp), rot, t in zip(solves, rotations, translations):
                dp = -d_inv @ (bp + b.T @ dg)
                step_norm = max(step_norm, float(np.abs(dp).max()))
                new_rot.append(geometry._nearest_rotation(so3_exp(dp[:3]) @ rot))
                new_t.append(t + dp[3:])
            new_cost = _total_cost(new_g, new_rot, new_t, views)
            if new_cost < cost and new_g[0] > 0.0 and new_g[1] > 0.0:
                g = new_g
                rotations = new_rot
                translations = new_t
                improvement = (cost - new_cost) / max(cost, 1e-300)
                cost = new_cost
                history.append(cost)
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                if improvement < cost_tol:
                    return _build_result(g, rotations, translations, views, initial, history)
            else:
                rel_increase = (new_cost - cost) / max(cost, 1e-300)
                lam = min(lam * 10.0, 1e12)
                rejects += 1
                if 0.0 <= rel_increase < 1e-14:
                    # Candidate cost is equal within floating-point: converged.
                    return _build_result(g, rotations, translations, views,
                                         initial, history)
                if rejects >= 10:
                    if step_norm < 1e-10:
                        # Parameters are pinned to machine precision: converged.
                        return _build_result(g, rotations, translations, views,
                                             initial, history)
                    raise DivergenceDetected(
                        "cost increased on 10 consecutive damping escalations")
    return _build_result(g, rotations, translations, views, initial, history)


def _build_result(g, rotations, translations, views, template, history):
    intr = _unpack_intrinsics(g, template)
    poses = tuple(RigidTransform(r, t) for r, t in zip(rotations, translations))
    mean_err, per_view = reprojection_error(intr, poses, views)
    return IntrinsicCalibrationResult(
        intrinsics=intr,
        per_view_poses=poses,
        mean_reprojection_error=mean_err,
        per_view_errors=tuple(per_view),
        cost_history=tuple(history),
    )


def reprojection_error(intr: Intrinsics, poses, views):
    """RMS pixel distance between projected board points and observations:
    pooled over all corners, plus one RMS per view."""
    g = _pack_intrinsics(intr)
    per_view = []
    total_sq = 0.0
    total_n = 0
    for pose, view in zip(poses, views):
        res = _view_residual(g, pose.rotation, pose.translation, view)
        if res is None:
            raise ValueError("a view has points behind the camera")
        norm_sq = res[0::2] ** 2 + res[1::2] ** 2
        per_view.append(float(np.sqrt(norm_sq.mean())))
        total_sq += float(norm_sq.sum())
        total_n += len(norm_sq)
    mean = math.sqrt(total_sq / total_n) if total_n else 0.0
    return mean, per_view


# --- single-view pose -------------------------------------------------------

def refine_pose(intr: Intrinsics, view: PlanarView, initial: RigidTransform,
                max_iterations: int = 100, cost_tol: float = 1e-15) -> RigidTransform:
    """Pose-only LM over one view with intrinsics fixed."""
    g = _pack_intrinsics(intr)
    rot = initial.rotation.copy()
    t = initial.translation.copy()
    res = _view_residual(g, rot, t, view)
    if res is None:
        raise ValueError("initial pose places points behind the camera")
    cost = float(res @ res)
    lam = 1e-6
    for _ in range(max_iterations):
        out = _view_residual_jacobian(g, rot, t, view)
        if out is None:
            break
        res, _, jp = out
        d = jp.T @ jp
        bp = jp.T @ res
        accepted = False
        for _ in range(20):
            d_d = d + lam * np.diag(np.maximum(np.diag(d), 1e-12))
            try:
                dp = -np.linalg.solve(d_d, bp)
            except np.linalg.LinAlgError:
                lam = min(lam * 10.0, 1e12)
                continue
            new_rot = geometry._nearest_rotation(so3_exp(dp[:3]) @ rot)
            new_t = t + dp[3:]
            new_res = _view_residual(g, new_rot, new_t, view)
            new_cost = math.inf if new_res is None else float(new_res @ new_res)
            if new_cost < cost:
                improvement = (cost - new_cost) / max(cost, 1e-300)
                rot, t, cost = new_rot, new_t, new_cost
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                if improvement < cost_tol:
                    return RigidTransform(rot, t)
                break
            rel_increase = (new_cost - cost) / max(cost, 1e-300)
            lam = min(lam * 10.0, 1e12)
            if (0.0 <= rel_increase < 1e-14
                    or float(np.abs(dp).max()) < 1e-14):
                return RigidTransform(rot, t)
        if not accepted:
            break
    return RigidTransform(rot, t)


def estimate_view_pose(intr: Intrinsics, view: PlanarView) -> RigidTransform:
    """Board pose from one view of calibrated intrinsics: homography on the
    undistorted normalized plane, then pose-only LM on the full model."""
    norm_pts = undistort_points(intr, view.image_points)
    norm_view = PlanarView(view.board_points, norm_pts, view.view_id)
    h = estimate_homography(norm_view)
    pose0 = _pose_from_normalized_homography(h)
    return refine_pose(intr, view, pose0)


# --- stereo (color from IR) --------------------------------------------------

@dataclass(frozen=True)
class StereoCalibrationResult:
    color_from_ir: RigidTransform
    n_views: int
    rotation_spread: float
    translation_spread: float


def _geodesic_mean_rotation(rotations: list[np.ndarray]) -> np.ndarray:
    mean = rotations[0]
    for _ in range(100):
        w = np.mean([so3_log(mean.T @ r) for r in rotations], axis=0)
        mean = geometry._nearest_rotation(mean @ so3_exp(w))
        if np.linalg.norm(w) < 1e-14:
            break
    return mean


def calibrate_stereo(color_views, ir_views, color_intr: Intrinsics,
                     ir_intr: Intrinsics) -> StereoCalibrationResult:
    """Estimate color_from_ir from views paired by view_id (combined frames).

    Per pair: color_from_ir_i = pose_color * inverse(pose_ir); the result is
    the geodesic mean of the rotations with the arithmetic mean of the
    translations, and the RMS spread of both is reported.
    """
    ir_by_id = {v.view_id: v for v in ir_views}
    pairs = [(cv, ir_by_id[cv.view_id]) for cv in color_views if cv.view_id in ir_by_id]
    if not pairs:
        raise NoCombinedViews("no view ids shared between color and IR views")
    rels = []
    for cv, iv in pairs:
        pose_c = estimate_view_pose(color_intr, cv)
        pose_i = estimate_view_pose(ir_intr, iv)
        rels.append(geometry.compose(pose_c, geometry.invert(pose_i)))
    mean_rot = _geodesic_mean_rotation([r.rotation for r in rels])
    mean_t = np.mean([r.translation for r in rels], axis=0)
    rot_spread = math.sqrt(np.mean([geometry.rotation_angle(mean_rot, r.rotation) ** 2
                                    for r in rels]))
    t_spread = math.sqrt(np.mean([np.sum((r.translation - mean_t) ** 2) for r in rels]))
    return StereoCalibrationResult(
        color_from_ir=RigidTransform(mean_rot, mean_t),
        n_views=len(pairs),
        rotation_spread=rot_spread,
        translation_spread=t_spread,
    )


def fit_depth_model(measured_depths, true_depths) -> DepthModel:
    """Least-squares linear fit true = scale * measured + offset."""
    m = np.asarray(measured_depths, dtype=float).ravel()
    z = np.asarray(true_depths, dtype=float).ravel()
    if m.size != z.size or m.size < 2:
        raise ValueError("need >= 2 matched depth samples")
    if np.ptp(m) < 1e-9:
        raise ValueError("measured depths have no spread; cannot fit a scale")
    a = np.column_stack([m, np.ones_like(m)])
    (scale, offset), *_ = np.linalg.lstsq(a, z, rcond=None)
    return DepthModel(scale=float(scale), offset=float(offset))


# --- full pipeline -----------------------------------------------------------

def calibrate_camera(views, width: int, height: int,
                     max_iterations: int = 200) -> IntrinsicCalibrationResult:
    """Homographies, closed-form initialization, then LM refinement."""
    homographies = [estimate_homography(v) for v in views]
    initial = intrinsics_closed_form(homographies, width, height)
    poses = [extrinsics_from_homography(initial, h) for h in homographies]
    return refine(initial, views, poses, max_iterations=max_iterations)
