"""Simulator tests: rendering matches analytic projection, detection failure
model, determinism, noise behavior, presets."""

import math

import numpy as np
import pytest

from conftest import build_config, one_camera_config_dict
from autocal import geometry, sim
from autocal.camera import project_points
from autocal.errors import Unreachable
from autocal.geometry import RigidTransform, rotation_from_rpy
from autocal.handeye import MountOffset
from autocal.sim import (
    NoiseParams,
    RobotModel,
    SimScene,
    camera_from_preset,
    inject_outliers,
    look_at_pose,
    preset_noise,
    preset_rigs,
)
from autocal.target import CheckerboardSpec, corner_grid, resolve_orientation


def zero_noise(**kwargs):
    return NoiseParams(**kwargs)


def make_scene(seed=0, noise=None, mount=None, camera_pose=None):
    pose = camera_pose or look_at_pose([1.35, 0.0, 0.95], [0.0, 0.0, 0.45])
    cam = camera_from_preset("kinect_v2", "cam1", pose,
                             noise=noise or zero_noise())
    return SimScene(cameras=(cam,), robot=RobotModel(repeatability_sigma=0.0),
                    mount_offset_true=mount or MountOffset(geometry.identity()),
                    board=CheckerboardSpec(), seed=seed)


def board_facing_flange(scene, camera_id="cam1", depth=1.5, tilt=(0.0, 0.0, 0.0)):
    """Flange pose placing the board centered in front of the camera."""
    cam = scene.camera(camera_id)
    center = scene.board.board_center()
    rot_tilt = rotation_from_rpy(*tilt).rotation
    board_pose_cam = RigidTransform(rot_tilt,
                                    np.array([0.0, 0.0, depth]) - rot_tilt @ center)
    base_from_board = geometry.compose(cam.pose, board_pose_cam)
    return geometry.compose(base_from_board,
                            geometry.invert(scene.mount_offset_true.flange_from_board))


def test_robot_move_exact_without_noise():
    scene = make_scene()
    target = RigidTransform(np.eye(3), [0.4, 0.1, 0.3])
    achieved = scene.robot_move(target)
    assert np.array_equal(achieved.translation, target.translation)
    assert np.array_equal(achieved.rotation, target.rotation)


def test_robot_move_repeatability_bounded():
    scene = make_scene()
    scene.robot = RobotModel(repeatability_sigma=1e-4)
    target = RigidTransform(np.eye(3), [0.4, 0.0, 0.3])
    for _ in range(100):
        achieved = scene.robot_move(target)
        err = np.abs(achieved.translation - target.translation)
        assert err.max() < 5e-4  # 5-sigma bound
        assert err.max() > 0.0


def test_robot_move_unreachable_radius():
    scene = make_scene()
    with pytest.raises(Unreachable):
        scene.robot_move(RigidTransform(np.eye(3), [1.0, 0.0, 0.0]))


def test_render_matches_analytic_projection():
    scene = make_scene()
    flange = board_facing_flange(scene, depth=1.5)
    obs = scene.render_observation("cam1", flange, timestamp=7)
    assert obs is not None
    cam = scene.camera("cam1")
    base_from_board = geometry.compose(flange,
                                       scene.mount_offset_true.flange_from_board)
    # Sensor reference frame is the IR camera; the color camera hangs off it.
    pts_ir = geometry.apply_points(geometry.invert(cam.pose),
                                   geometry.apply_points(base_from_board,
                                                         corner_grid(scene.board).points))
    resolved = resolve_orientation(obs, obs.marker_corner, scene.board)
    expected_ir = project_points(cam.rig.ir, geometry.identity(), pts_ir)
    assert np.abs(resolved.corners_ir_px - expected_ir).max() < 1e-12
    expected_color = project_points(cam.rig.color, cam.rig.color_from_ir, pts_ir)
    assert np.abs(resolved.corners_px - expected_color).max() < 1e-12
    # Raw depth passes through the inverse of the true depth model.
    z_true = pts_ir[:, 2]
    assert np.abs(cam.rig.depth_model.correct(resolved.corners_depth) - z_true).max() < 1e-12


def test_render_fails_beyond_tilt_limit():
    scene = make_scene(noise=zero_noise(detect_tilt_limit=math.radians(30.0)))
    ok = scene.render_observation("cam1", board_facing_flange(
        scene, tilt=(0.0, math.radians(25.0), 0.0)))
    assert ok is not None
    failed = scene.render_observation("cam1", board_facing_flange(
        scene, tilt=(0.0, math.radians(35.0), 0.0)))
    assert failed is None


def test_render_fails_below_min_depth():
    scene = make_scene()  # V2 preset: detect_min_depth = 0.5
    obs = scene.render_observation("cam1", board_facing_flange(scene, depth=0.45))
    assert obs is None or obs.corners_depth is None
    # Color-only detection may persist; the IR/depth side must be absent.
    obs2 = scene.render_observation("cam1", board_facing_flange(scene, depth=0.6))
    assert obs2 is not None and obs2.corners_depth is not None


def test_render_fails_when_board_leaves_image():
    scene = make_scene()
    cam = scene.camera("cam1")
    center = scene.board.board_center()
    # Board far off the optical axis: outer corners leave the color image.
    board_pose_cam = RigidTransform(np.eye(3), np.array([1.4, 0.0, 1.2]) - center)
    flange = geometry.compose(geometry.compose(cam.pose, board_pose_cam),
                              geometry.invert(scene.mount_offset_true.flange_from_board))
    assert scene.render_observation("cam1", flange) is None


def test_render_deterministic_across_identical_scenes():
    noise = preset_noise("kinect_v2")
    a = make_scene(seed=42, noise=noise)
    b = make_scene(seed=42, noise=noise)
    flange = board_facing_flange(a)
    for _ in range(3):
        oa = a.render_observation("cam1", flange)
        ob = b.render_observation("cam1", flange)
        assert np.array_equal(oa.corners_px, ob.corners_px)
        assert np.array_equal(oa.corners_depth, ob.corners_depth)


def test_render_streams_differ_across_frames():
    noise = preset_noise("kinect_v2")
    scene = make_scene(seed=42, noise=noise)
    flange = board_facing_flange(scene)
    oa = scene.render_observation("cam1", flange)
    ob = scene.render_observation("cam1", flange)
    assert not np.array_equal(oa.corners_px, ob.corners_px)


def test_depth_noise_variance_grows_with_depth():
    noise = zero_noise(depth_sigma_base=1e-3, depth_sigma_slope=1e-3)
    scene = make_scene(seed=3, noise=noise)
    cam = scene.camera("cam1")

    def depth_std(depth, n=60):
        values = []
        for _ in range(n):
            obs = scene.render_observation("cam1", board_facing_flange(scene, depth=depth))
            corrected = cam.rig.depth_model.correct(obs.corners_depth)
            values.append(corrected)
        stacked = np.stack(values)
        return stacked.std(axis=0).mean()

    assert depth_std(2.5) > depth_std(0.9) * 1.5


def test_marker_consistent_for_rotated_board():
    scene = make_scene()
    flange = board_facing_flange(scene)
    plain = scene.render_observation("cam1", flange)
    rolled = scene.render_observation(
        "cam1", board_facing_flange(scene, tilt=(math.pi, 0.0, 0.0)))
    # A 180-degree roll reverses the detector's scan order; the marker index
    # must point at the canonical corner so resolution recovers the ids.
    assert plain.marker_corner == 0
    assert rolled.marker_corner == rolled.corner_count - 1
    res_plain = resolve_orientation(plain, plain.marker_corner, scene.board)
    res_rolled = resolve_orientation(rolled, rolled.marker_corner, scene.board)
    # Corner 0 of both must be the same physical corner: its color pixel is
    # the projection of the board-frame origin under each flange pose.
    cam = scene.camera("cam1")
    base_from_board = geometry.compose(flange,
                                       scene.mount_offset_true.flange_from_board)
    color_from_base = geometry.compose(cam.rig.color_from_ir,
                                       geometry.invert(cam.pose))
    origin_px = project_points(
        cam.rig.color, color_from_base,
        geometry.apply_points(base_from_board, np.zeros((1, 3))))
    assert np.abs(np.asarray(res_plain.corners_px[0]) - origin_px[0]).max() < 1e-9
    assert np.abs(np.asarray(res_rolled.corners_px[0])
                  - np.asarray(res_plain.corners_px[0])).max() > 10.0


def test_inject_outliers_rate_zero_is_identity():
    scene = make_scene()
    obs = scene.render_observation("cam1", board_facing_flange(scene))
    out = inject_outliers(obs, rate=0.0, seed=1)
    assert np.array_equal(out.corners_px, obs.corners_px)
    assert np.array_equal(out.corners_depth, obs.corners_depth)


def test_inject_outliers_deterministic_and_bounded():
    scene = make_scene()
    obs = scene.render_observation("cam1", board_facing_flange(scene))
    a = inject_outliers(obs, rate=0.2, seed=7)
    b = inject_outliers(obs, rate=0.2, seed=7)
    assert np.array_equal(a.corners_px, b.corners_px)
    changed = np.any(a.corners_px != obs.corners_px, axis=1)
    # Expected ~4.8 corrupted corners out of 24 at rate 0.2.
    assert 1 <= changed.sum() <= 12
    # Corrupted pixels moved by at least half the magnitude.
    deltas = np.linalg.norm(a.corners_px - obs.corners_px, axis=1)
    assert deltas[changed].min() >= 0.5 * 20.0 - 1e-9


def test_inject_outliers_expected_rate_over_seeds():
    scene = make_scene()
    obs = scene.render_observation("cam1", board_facing_flange(scene))
    counts = []
    for seed in range(50):
        out = inject_outliers(obs, rate=0.2, seed=seed)
        counts.append(int(np.any(out.corners_px != obs.corners_px, axis=1).sum()))
    assert abs(np.mean(counts) - 0.2 * 24) < 1.0


def test_presets_match_published_specs():
    nominal_v2, true_v2 = preset_rigs("kinect_v2")
    assert (nominal_v2.color.width, nominal_v2.color.height) == (1920, 1080)
    assert (nominal_v2.ir.width, nominal_v2.ir.height) == (512, 424)
    noise_v2 = preset_noise("kinect_v2")
    assert noise_v2.detect_min_depth == 0.5 and noise_v2.detect_max_depth == 4.5

    nominal_v1, true_v1 = preset_rigs("kinect_v1")
    assert (nominal_v1.color.width, nominal_v1.color.height) == (640, 480)
    assert (nominal_v1.ir.width, nominal_v1.ir.height) == (320, 240)
    noise_v1 = preset_noise("kinect_v1")
    assert noise_v1.detect_min_depth == 0.4
    assert noise_v1.pixel_sigma == 2.0 * noise_v2.pixel_sigma

    # FOV from the spec sheet: fx = (w/2) / tan(fov_h / 2).
    assert np.isclose(nominal_v2.color.fx, 960.0 / math.tan(math.radians(35.0)))
    assert np.isclose(nominal_v1.color.fx, 320.0 / math.tan(math.radians(28.5)))
    # True rigs perturb the nominal ones.
    assert true_v2.color.k1 != 0.0
    assert true_v2.depth_model.scale != 1.0


def test_scene_from_config_builds():
    config = build_config(one_camera_config_dict(seed=5))
    scene = config.build_scene()
    assert scene.seed == 5
    assert scene.cameras[0].camera_id == "cam1"
    assert scene.cameras[0].noise.pixel_sigma == 0.0
    flange = board_facing_flange(scene, depth=1.2)
    assert scene.render_observation("cam1", flange) is not None
