"""Rigid transform and registration tests, oracled by direct matrix algebra."""

import math

import numpy as np
import pytest

from autocal import geometry
from autocal.errors import DegenerateGeometry, NoConsensus, TooFewPoints
from autocal.geometry import (
    PointSet3,
    RansacParams,
    RigidTransform,
    apply_points,
    compose,
    estimate_rigid,
    estimate_rigid_ransac,
    identity,
    invert,
    rotation_from_rpy,
    rpy_from_rotation,
)


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_transform(rng):
    t = geometry.so3_exp(rng.normal(size=3))
    return RigidTransform(t, rng.normal(size=3))


def test_compose_identity_is_identity():
    result = compose(identity(), identity())
    assert np.allclose(result.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(result.translation, 0.0, atol=1e-12)


def test_compose_with_inverse_cancels():
    rng = np.random.default_rng(1)
    for _ in range(10):
        t = random_transform(rng)
        r = compose(t, invert(t))
        assert np.abs(r.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(r.translation).max() < 1e-9


def test_compose_two_quarter_turns_about_z():
    # Oracle: direct matrix multiplication of two 90-degree z rotations.
    quarter = RigidTransform(rot_z(math.pi / 2.0), np.zeros(3))
    expected = rot_z(math.pi / 2.0) @ rot_z(math.pi / 2.0) @ np.array([1.0, 0.0, 0.0])
    result = geometry.apply(compose(quarter, quarter), [1.0, 0.0, 0.0])
    assert np.allclose(result, expected, atol=1e-12)
    assert np.allclose(result, [-1.0, 0.0, 0.0], atol=1e-12)


def test_apply_identity_and_translation():
    assert np.allclose(geometry.apply(identity(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    shift = RigidTransform(np.eye(3), [0.1, 0.0, 0.0])
    assert np.allclose(geometry.apply(shift, [0.0, 0.0, 0.0]), [0.1, 0.0, 0.0])


def test_apply_rotation_plus_translation_by_hand():
    # R = rotZ(90), t = (1,0,0): p=(1,0,0) -> R p + t = (0,1,0)+(1,0,0) = (1,1,0)
    t = RigidTransform(rot_z(math.pi / 2.0), [1.0, 0.0, 0.0])
    assert np.allclose(geometry.apply(t, [1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)


def test_rotation_from_rpy_zero_is_identity():
    t = rotation_from_rpy(0.0, 0.0, 0.0)
    assert np.allclose(t.rotation, np.eye(3))
    assert np.allclose(t.translation, 0.0)


def test_rotation_from_rpy_yaw_pi():
    t = rotation_from_rpy(0.0, 0.0, math.pi)
    assert np.allclose(geometry.apply(t, [1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-12)
    # Oracle: matrix product Rz(pi) Ry(0) Rx(0).
    assert np.allclose(t.rotation, rot_z(math.pi), atol=1e-12)


def test_rpy_round_trip_inside_pitch_range():
    rng = np.random.default_rng(7)
    for _ in range(200):
        roll, yaw = rng.uniform(-math.pi, math.pi, size=2)
        pitch = rng.uniform(-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3)
        back = rpy_from_rotation(rotation_from_rpy(roll, pitch, yaw))
        assert np.allclose(back, [roll, pitch, yaw], atol=1e-9)


def test_estimate_rigid_identity_case():
    pts = PointSet3([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.4, 0.5]])
    transform, rms = estimate_rigid(pts, pts)
    assert np.abs(transform.rotation - np.eye(3)).max() < 1e-12
    assert np.abs(transform.translation).max() < 1e-12
    assert rms < 1e-12


def test_estimate_rigid_recovers_random_transform():
    rng = np.random.default_rng(11)
    for _ in range(20):
        src = PointSet3(rng.normal(size=(10, 3)))
        truth = random_transform(rng)
        dst = PointSet3(apply_points(truth, src.points))
        est, rms = estimate_rigid(src, dst)
        assert np.abs(est.rotation - truth.rotation).max() < 1e-9
        assert np.abs(est.translation - truth.translation).max() < 1e-9
        assert rms < 1e-9


def test_estimate_rigid_planar_source_is_fine():
    # Checkerboard corners are coplanar; the estimator must accept them.
    rng = np.random.default_rng(3)
    src_pts = rng.normal(size=(24, 3))
    src_pts[:, 2] = 0.0
    truth = random_transform(rng)
    src = PointSet3(src_pts)
    dst = PointSet3(apply_points(truth, src_pts))
    est, _ = estimate_rigid(src, dst)
    assert np.abs(est.rotation - truth.rotation).max() < 1e-9


def test_estimate_rigid_noise_monte_carlo():
    # sigma = 1 mm on 50 points: translation error typically below 1 mm.
    errors = []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        src = PointSet3(rng.uniform(-0.5, 0.5, size=(50, 3)))
        truth = random_transform(rng)
        noisy = apply_points(truth, src.points) + rng.normal(0.0, 1e-3, size=(50, 3))
        est, _ = estimate_rigid(src, PointSet3(noisy))
        errors.append(np.linalg.norm(est.translation - truth.translation))
    assert np.median(errors) < 1e-3
    assert np.mean(errors) < 1e-3


def test_estimate_rigid_too_few_points():
    pts = PointSet3([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(TooFewPoints):
        estimate_rigid(pts, pts)


def test_estimate_rigid_collinear_raises():
    pts = PointSet3([[float(i), 0.0, 0.0] for i in range(5)])
    with pytest.raises(DegenerateGeometry):
        estimate_rigid(pts, pts)


def test_estimate_rigid_equivariant_under_common_motion():
    rng = np.random.default_rng(21)
    src = PointSet3(rng.normal(size=(12, 3)))
    truth = random_transform(rng)
    dst = PointSet3(apply_points(truth, src.points))
    motion = random_transform(rng)
    est_plain, _ = estimate_rigid(src, dst)
    est_moved, _ = estimate_rigid(PointSet3(apply_points(motion, src.points)),
                                  PointSet3(apply_points(motion, dst.points)))
    expected = compose(motion, compose(est_plain, invert(motion)))
    assert np.abs(est_moved.rotation - expected.rotation).max() < 1e-9
    assert np.abs(est_moved.translation - expected.translation).max() < 1e-9


def test_estimate_rigid_beats_identity_residual():
    rng = np.random.default_rng(5)
    src = PointSet3(rng.normal(size=(30, 3)))
    truth = random_transform(rng)
    noisy = apply_points(truth, src.points) + rng.normal(0.0, 0.01, size=(30, 3))
    dst = PointSet3(noisy)
    _, rms = estimate_rigid(src, dst)
    identity_rms = np.sqrt(np.mean(np.sum((dst.points - src.points) ** 2, axis=1)))
    assert rms <= identity_rms


def test_ransac_clean_data_matches_plain_fit():
    rng = np.random.default_rng(31)
    src = PointSet3(rng.normal(size=(40, 3)))
    truth = random_transform(rng)
    dst = PointSet3(apply_points(truth, src.points))
    plain, _ = estimate_rigid(src, dst)
    robust, inliers = estimate_rigid_ransac(src, dst, RansacParams(seed=0))
    assert len(inliers) == 40
    assert np.abs(robust.rotation - plain.rotation).max() < 1e-9
    assert np.abs(robust.translation - plain.translation).max() < 1e-9


def test_ransac_excludes_constructed_outliers():
    rng = np.random.default_rng(41)
    src = PointSet3(rng.uniform(-0.5, 0.5, size=(100, 3)))
    truth = random_transform(rng)
    dst_pts = apply_points(truth, src.points)
    corrupted = rng.choice(100, size=20, replace=False)
    for i in corrupted:
        direction = rng.normal(size=3)
        dst_pts[i] += 0.5 * direction / np.linalg.norm(direction)
    _, inliers = estimate_rigid_ransac(
        src, PointSet3(dst_pts), RansacParams(inlier_threshold=0.005, seed=1))
    assert set(inliers) == set(range(100)) - set(corrupted.tolist())


def test_ransac_no_consensus_on_fully_random_data():
    rng = np.random.default_rng(51)
    src = PointSet3(rng.uniform(-1.0, 1.0, size=(60, 3)))
    dst = PointSet3(rng.uniform(-1.0, 1.0, size=(60, 3)))
    with pytest.raises(NoConsensus):
        estimate_rigid_ransac(src, dst, RansacParams(inlier_threshold=0.005, seed=2))


def test_ransac_bit_reproducible():
    rng = np.random.default_rng(61)
    src = PointSet3(rng.normal(size=(50, 3)))
    truth = random_transform(rng)
    dst_pts = apply_points(truth, src.points) + rng.normal(0.0, 0.002, size=(50, 3))
    dst = PointSet3(dst_pts)
    params = RansacParams(seed=9)
    t1, in1 = estimate_rigid_ransac(src, dst, params)
    t2, in2 = estimate_rigid_ransac(src, dst, params)
    assert in1 == in2
    assert np.array_equal(t1.rotation, t2.rotation)
    assert np.array_equal(t1.translation, t2.translation)


def test_ransac_invariant_to_input_permutation():
    rng = np.random.default_rng(71)
    src_pts = rng.normal(size=(30, 3))
    truth = random_transform(rng)
    dst_pts = apply_points(truth, src_pts) + rng.normal(0.0, 0.001, size=(30, 3))
    ids = tuple(f"{i:03d}" for i in range(30))
    params = RansacParams(seed=5)
    t1, in1 = estimate_rigid_ransac(PointSet3(src_pts, ids), PointSet3(dst_pts, ids), params)
    perm = rng.permutation(30)
    t2, in2 = estimate_rigid_ransac(
        PointSet3(src_pts[perm], tuple(ids[i] for i in perm)),
        PointSet3(dst_pts[perm], tuple(ids[i] for i in perm)), params)
    assert set(in1) == set(in2)
    assert np.array_equal(t1.rotation, t2.rotation)


def test_rigid_transform_rejects_non_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))


def test_point_set_requires_unique_ids():
    with pytest.raises(ValueError):
        PointSet3(np.zeros((2, 3)), ("a", "a"))
