"""Smoke tests for the pyvoxfuse module: a miniature capture -> integrate ->
fuse -> mesh -> metrics round trip plus a few unit-level checks."""

import numpy as np
import pytest

import pyvoxfuse as vf


@pytest.fixture(scope="module")
def camera():
    return vf.Intrinsics(fx=80.0, fy=80.0, cx=47.5, cy=47.5, width=96, height=96)


def test_unproject_project_roundtrip(camera):
    pose = vf.Pose(rotation=np.eye(3), translation=np.array([0.1, -0.2, 0.3]))
    p = vf.unproject_pixel(20.0, 30.0, 1.5, camera, pose)
    u, v, depth = vf.project_point(p, camera, pose)
    assert abs(u - 20.0) < 1e-9
    assert abs(v - 30.0) < 1e-9
    assert abs(depth - 1.5) < 1e-9


def test_ray_band_targets():
    pts, targets = vf.sample_ray_band(
        np.array([0.0, 0.0, 2.0]), np.zeros(3), samples=11, band=0.1
    )
    assert pts.shape == (11, 3)
    np.testing.assert_allclose(targets, 0.05 - 0.01 * np.arange(11), atol=1e-12)
    np.testing.assert_allclose(pts[5], [0, 0, 2.0], atol=1e-12)


def test_render_and_sensor(camera):
    scene = vf.tabletop_scene()
    pose = vf.orbit_pose(0, 24, 1.05, 0.6, np.array([0.0, 0.0, 0.12]))
    clean = vf.render_depth(scene, camera, pose)
    assert clean.shape == (96, 96)
    assert (clean > 0).mean() > 0.5  # most rays hit the scene

    model = vf.tof_sensor_preset()
    frame = vf.apply_sensor(clean, camera, pose, 0, model, seed=7)
    frame2 = vf.apply_sensor(clean, camera, pose, 0, model, seed=7)
    np.testing.assert_array_equal(frame.depth, frame2.depth)  # deterministic

    assert vf.scene_sdf(scene, np.array([0.0, 0.0, 2.0])) > 1.0


def test_online_fusion_end_to_end(camera):
    scene = vf.tabletop_scene()
    geom = vf.GridGeometry(
        origin=np.array([-0.72, -0.72, -0.045]),
        voxel_size=0.015,
        dims=np.array([97, 97, 34], dtype=np.int32),
    )
    cfg = vf.IntegrationConfig()
    cfg.border_mask = 4

    engine = vf.OnlineFusion(geom, cfg, blocks=6, hidden=4, seed=3)
    assert abs(engine.parameter_count - 27700) / 27700 < 0.10

    tof, stereo = vf.tof_sensor_preset(), vf.stereo_sensor_preset()
    tof.outlier_rate = 0.0
    stereo.outlier_rate = 0.0
    for i in range(16):
        pose = vf.orbit_pose(i, 16, 1.05, 0.7, np.array([0.0, 0.0, 0.12]))
        clean = vf.render_depth(scene, camera, pose)
        for sensor, model in ((0, tof), (1, stereo)):
            frame = vf.apply_sensor(clean, camera, pose, sensor, model, seed=100 + 2 * i + sensor)
            assert engine.integrate(frame) > 0

    out = engine.fuse(window=64, filter=True)
    alpha = out["alpha"]
    assert ((alpha > 0) & (alpha < 1)).all()

    gt = vf.make_gt_grid(scene, geom, band=0.1)
    assert np.abs(gt).max() <= 0.05 + 1e-12

    w_union = np.maximum(out["weight1"], out["weight2"]).astype(np.uint32)
    metrics = vf.grid_metrics(out["tsdf"], w_union, gt)
    assert metrics["n"] > 10000
    assert metrics["mad"] < 0.02  # noisy but sane

    verts, tris = vf.marching_cubes(out["tsdf"], w_union, geom)
    assert len(verts) > 1000
    assert tris.max() < len(verts)

    gt_verts, _ = vf.marching_cubes(gt, np.ones(gt.shape, dtype=np.uint32), geom)
    f, p, r = vf.mesh_fscore(verts, gt_verts, tau=0.02)
    assert f > 60.0
    assert abs(f - 2 * p * r / (p + r)) < 1e-9


def test_fuse_grids_case_table():
    shape = (1, 1, 3)
    v1 = np.array([0.04, 0.03, 0.0]).reshape(shape)
    v2 = np.array([-0.04, 0.0, -0.02]).reshape(shape)
    alpha = np.array([0.25, 0.9, 0.5]).reshape(shape)
    w1 = np.array([2, 5, 0], dtype=np.uint32).reshape(shape)
    w2 = np.array([2, 0, 1], dtype=np.uint32).reshape(shape)
    fused = vf.fuse_grids(v1, v2, alpha, w1, w2)
    np.testing.assert_allclose(fused.ravel(), [-0.02, 0.03, -0.02], atol=1e-12)

    fw1, fw2 = vf.outlier_filter(np.full(shape, 0.3), w1, w2)
    assert fw1.ravel()[1] == 0  # lone sensor-1 voxel with low confidence removed
    assert fw2.ravel()[2] == 1  # sensor-2 confidence 0.7 keeps it
