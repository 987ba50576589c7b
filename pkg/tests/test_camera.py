"""Projection, distortion and registration tests with hand-computed oracles."""

import math

import numpy as np
import pytest

from autocal import geometry
from autocal.camera import (
    DepthModel,
    INTRINSICS_FIELDS,
    Intrinsics,
    Pixel,
    SensorRig,
    backproject,
    backproject_points,
    distort_normalized,
    project,
    project_points,
    register_depth_to_color,
    undistort,
    undistort_points,
)
from autocal.errors import BehindCamera, NoConvergence, NonPositiveDepth
from autocal.geometry import RigidTransform, identity


def simple_intrinsics(**kwargs):
    defaults = dict(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    defaults.update(kwargs)
    return Intrinsics(**defaults)


def test_project_optical_axis_hits_principal_point():
    px = project(simple_intrinsics(), identity(), [0.0, 0.0, 1.0])
    assert np.allclose([px.u, px.v], [320.0, 240.0], atol=1e-12)


def test_project_off_axis_by_hand():
    # u = fx * x / z + cx = 500 * 0.1 / 1 + 320 = 370
    px = project(simple_intrinsics(), identity(), [0.1, 0.0, 1.0])
    assert np.allclose([px.u, px.v], [370.0, 240.0], atol=1e-12)


def test_project_radial_distortion_pushes_outward():
    intr = simple_intrinsics(k1=0.1)
    px = project(intr, identity(), [0.2, 0.0, 1.0])
    # Oracle: x' = 0.2, r2 = 0.04, u = 500 * 0.2 * (1 + 0.1*0.04) + 320 = 420.4
    assert px.u > 420.0
    assert np.isclose(px.u, 500.0 * 0.2 * (1.0 + 0.1 * 0.04) + 320.0, atol=1e-12)


def test_project_behind_camera_raises():
    with pytest.raises(BehindCamera):
        project(simple_intrinsics(), identity(), [0.0, 0.0, -1.0])
    with pytest.raises(BehindCamera):
        project(simple_intrinsics(), identity(), [0.0, 0.0, 0.0])


def test_project_scale_invariant_along_rays():
    intr = simple_intrinsics(k1=-0.1, k2=0.02, p1=1e-3, p2=-2e-3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), 1.0])
        lam = rng.uniform(0.2, 5.0)
        a = project(intr, identity(), p)
        b = project(intr, identity(), lam * p)
        assert np.allclose([a.u, a.v], [b.u, b.v], atol=1e-9)


def test_undistort_zero_distortion_inverts_affine_map():
    intr = simple_intrinsics()
    xy = undistort(intr, Pixel(370.0, 240.0))
    assert np.allclose([xy.u, xy.v], [0.1, 0.0], atol=1e-12)


def test_undistort_principal_point_maps_to_origin():
    intr = simple_intrinsics(k1=-0.3, k2=0.1, p1=2e-3, p2=-1e-3)
    xy = undistort(intr, Pixel(320.0, 240.0))
    assert np.allclose([xy.u, xy.v], [0.0, 0.0], atol=1e-12)


def test_distort_undistort_round_trip_central_region():
    # Round-trip error below 1e-6 px over the central 80% for |k1| <= 0.3.
    for k1 in (-0.3, -0.2, 0.0, 0.15, 0.3):
        intr = simple_intrinsics(k1=k1, k2=0.05, p1=1e-3, p2=-5e-4)
        u = np.linspace(0.1 * intr.width, 0.9 * intr.width, 9)
        v = np.linspace(0.1 * intr.height, 0.9 * intr.height, 9)
        uu, vv = np.meshgrid(u, v)
        px = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        xy = undistort_points(intr, px)
        xyd = distort_normalized(intr, xy)
        back_u = intr.fx * xyd[:, 0] + intr.cx
        back_v = intr.fy * xyd[:, 1] + intr.cy
        err = np.hypot(back_u - px[:, 0], back_v - px[:, 1])
        assert err.max() < 1e-6


def test_undistort_no_convergence_on_extreme_distortion():
    intr = simple_intrinsics(k1=-8.0, k2=25.0)
    with pytest.raises(NoConvergence):
        undistort(intr, Pixel(639.0, 479.0), max_iterations=50)


def test_backproject_center_pixel():
    p = backproject(simple_intrinsics(), Pixel(320.0, 240.0), 1.0, DepthModel())
    assert np.allclose(p, [0.0, 0.0, 1.0], atol=1e-12)


def test_backproject_inverse_of_projection_example():
    p = backproject(simple_intrinsics(), Pixel(370.0, 240.0), 1.0, DepthModel())
    assert np.allclose(p, [0.1, 0.0, 1.0], atol=1e-9)


def test_backproject_applies_depth_model():
    model = DepthModel(scale=1.01, offset=-0.005)
    p = backproject(simple_intrinsics(), Pixel(320.0, 240.0), 1.0, model)
    assert np.isclose(p[2], 1.01 * 1.0 - 0.005, atol=1e-12)


def test_backproject_rejects_non_positive_depth():
    with pytest.raises(NonPositiveDepth):
        backproject(simple_intrinsics(), Pixel(320.0, 240.0), 0.0, DepthModel())
    with pytest.raises(NonPositiveDepth):
        backproject(simple_intrinsics(), Pixel(320.0, 240.0), -1.0, DepthModel())


def test_project_backproject_round_trip_on_grid():
    intr = simple_intrinsics(k1=-0.2, k2=0.04, p1=1e-3, p2=-1e-3)
    u = np.linspace(40.0, 600.0, 8)
    v = np.linspace(40.0, 440.0, 8)
    uu, vv = np.meshgrid(u, v)
    px = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    depths = np.full(len(px), 1.7)
    pts = backproject_points(intr, px, depths)
    back = project_points(intr, identity(), pts)
    assert np.abs(back - px).max() < 1e-6


def test_backproject_of_project_recovers_point():
    # backproject(project(p), depth=p.z) returns p within 1e-9 m.
    intr = simple_intrinsics(k1=-0.15, k2=0.03)
    rng = np.random.default_rng(9)
    for _ in range(30):
        p = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3),
                      rng.uniform(0.5, 3.0)])
        px = project(intr, identity(), p)
        back = backproject(intr, px, float(p[2]), DepthModel(),)
        assert np.abs(back - p).max() < 1e-9


def make_rig(baseline=(0.052, 0.0, 0.0), depth_model=DepthModel()):
    return SensorRig(
        color=simple_intrinsics(),
        ir=simple_intrinsics(fx=365.0, fy=365.0, cx=256.0, cy=212.0,
                             width=512, height=424),
        color_from_ir=RigidTransform(np.eye(3), np.array(baseline)),
        depth_model=depth_model,
    )


def test_register_identity_rig_keeps_pixel():
    rig = SensorRig(color=simple_intrinsics(), ir=simple_intrinsics(),
                    color_from_ir=identity(), depth_model=DepthModel())
    px = register_depth_to_color(rig, Pixel(411.0, 123.0), 1.3)
    assert np.allclose([px.u, px.v], [411.0, 123.0], atol=1e-6)


def test_register_identity_rig_keeps_pixel_with_depth_model():
    # Projection is ray-scale invariant, so a depth rescale keeps the pixel.
    rig = SensorRig(color=simple_intrinsics(), ir=simple_intrinsics(),
                    color_from_ir=identity(),
                    depth_model=DepthModel(scale=1.02, offset=-0.01))
    px = register_depth_to_color(rig, Pixel(411.0, 123.0), 1.3)
    assert np.allclose([px.u, px.v], [411.0, 123.0], atol=1e-6)


def test_register_offset_shrinks_with_depth():
    rig = make_rig()
    ir_px = Pixel(256.0, 212.0)
    offsets = []
    for depth in (0.5, 1.0, 2.0, 4.0):
        color_px = register_depth_to_color(rig, ir_px, depth)
        # Color pixel of the same ray with a zero-baseline rig:
        no_baseline = register_depth_to_color(make_rig(baseline=(0, 0, 0)), ir_px, depth)
        offsets.append(abs(color_px.u - no_baseline.u))
    assert offsets == sorted(offsets, reverse=True)
    assert offsets[0] > offsets[-1]


def test_register_offset_monotone_over_fine_grid():
    rig = make_rig()
    depths = np.linspace(0.5, 4.0, 30)
    prev = math.inf
    for depth in depths:
        px = register_depth_to_color(rig, Pixel(300.0, 250.0), float(depth))
        base = register_depth_to_color(make_rig(baseline=(0, 0, 0)),
                                       Pixel(300.0, 250.0), float(depth))
        offset = math.hypot(px.u - base.u, px.v - base.v)
        assert offset <= prev + 1e-9
        prev = offset


def test_register_round_trip_through_inverse_rig():
    rig = make_rig()
    ir_px = Pixel(300.0, 200.0)
    depth = 1.4
    color_px = register_depth_to_color(rig, ir_px, depth)
    # Depth of the transformed point in the color frame:
    p_ir = backproject(rig.ir, ir_px, depth, rig.depth_model)
    p_color = geometry.apply(rig.color_from_ir, p_ir)
    back_rig = SensorRig(color=rig.ir, ir=rig.color,
                         color_from_ir=geometry.invert(rig.color_from_ir),
                         depth_model=DepthModel())
    back_px = register_depth_to_color(back_rig, color_px, float(p_color[2]))
    assert np.allclose([back_px.u, back_px.v], [ir_px.u, ir_px.v], atol=1e-6)


def test_intrinsics_serialization_field_names():
    intr = simple_intrinsics(k1=-0.1, p2=1e-4, skew=0.5)
    d = intr.to_dict()
    assert set(d) == set(INTRINSICS_FIELDS)
    assert Intrinsics.from_dict(d) == intr
    with pytest.raises(ValueError):
        Intrinsics.from_dict({**d, "focal": 1.0})


def test_rig_serialization_round_trip():
    rig = make_rig(depth_model=DepthModel(scale=1.003, offset=-0.002))
    d = rig.to_dict()
    back = SensorRig.from_dict(d)
    assert back.color == rig.color
    assert back.ir == rig.ir
    assert np.allclose(back.color_from_ir.matrix(), rig.color_from_ir.matrix())
    assert back.depth_model == rig.depth_model


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        simple_intrinsics(fx=-1.0)
    with pytest.raises(ValueError):
        simple_intrinsics(cx=700.0)
    with pytest.raises(ValueError):
        DepthModel(scale=0.0)
