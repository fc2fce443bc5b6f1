import json

import numpy as np
import pytest

from bimanual_handeye import lie, plyio, synth
from bimanual_handeye.capture import (
    CaptureSet,
    PointMap,
    SolverOptions,
    load_problem,
    relative_cam,
    relative_ee,
    write_manifest,
)
from bimanual_handeye.errors import ManifestError
from helpers import random_transform


def small_scene(seed=0, noise=None):
    cfg = synth.SceneConfig(views_per_arm=(4, 4), noise=noise or synth.NoiseSpec())
    return synth.generate(cfg, seed)


def write_scene_manifest(tmp_path, seed=0):
    scene = small_scene(seed)
    return synth.emit_manifest(scene, tmp_path), scene


# --- loading and validation --------------------------------------------------


def test_load_round_trips_bit_identical(tmp_path):
    manifest_path, scene = write_scene_manifest(tmp_path)
    problem = load_problem(manifest_path)
    for loaded, original in ((problem.primary, scene.primary), (problem.secondary, scene.secondary)):
        assert loaded.arm_id == original.arm_id
        assert loaded.image_ids == original.image_ids
        for a, b in zip(loaded.ee_poses, original.ee_poses):
            assert np.array_equal(a, b)
        for a, b in zip(loaded.cam_poses, original.cam_poses):
            assert np.array_equal(a, b)
        for a, b in zip(loaded.point_maps, original.point_maps):
            assert np.array_equal(a.points, b.points)
            assert np.array_equal(a.confidences, b.confidences)


def test_load_save_load_is_fixed_point(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path / "first")
    problem = load_problem(manifest_path)
    second_path = write_manifest(tmp_path / "second", problem.primary, problem.secondary)
    assert (tmp_path / "first" / "manifest.json").read_text() == second_path.read_text()
    again = load_problem(second_path)
    for a, b in zip(again.primary.ee_poses, problem.primary.ee_poses):
        assert np.array_equal(a, b)


def test_missing_manifest_raises():
    with pytest.raises(ManifestError, match="cannot read manifest"):
        load_problem("/nonexistent/manifest.json")


def test_invalid_json_raises(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{ not json")
    with pytest.raises(ManifestError, match=r"schema violation at /"):
        load_problem(path)


def test_wrong_version_raises(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"version": 2, "arms": []}))
    with pytest.raises(ManifestError, match=r"schema violation at /version"):
        load_problem(path)


def test_single_arm_raises(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    data["arms"] = data["arms"][:1]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="fewer than 2 arms"):
        load_problem(manifest_path)


def test_single_view_raises(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    data["arms"][0]["views"] = data["arms"][0]["views"][:1]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="fewer than 2 views on arm 1"):
        load_problem(manifest_path)


def test_malformed_pose_reports_json_pointer(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    data["arms"][0]["views"][2]["ee_pose"] = [[1, 0, 0], [0, 1, 0]]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match=r"schema violation at /arms/0/views/2/ee_pose"):
        load_problem(manifest_path)


def test_missing_cam_pose_reports_json_pointer(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    del data["arms"][1]["views"][0]["cam_pose"]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match=r"schema violation at /arms/1/views/0/cam_pose"):
        load_problem(manifest_path)


def test_reflection_rejected_as_non_rigid(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    pose = np.eye(4)
    pose[:3, :3] = np.diag([1.0, 1.0, -1.0])  # det -1
    data["arms"][0]["views"][1]["ee_pose"] = pose.tolist()
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="non-rigid rotation at arm 1, view 1"):
        load_problem(manifest_path)


def test_badly_scaled_rotation_rejected(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    pose = np.eye(4)
    pose[:3, :3] *= 1.01  # defect ~2e-2, far past the acceptance tolerance
    data["arms"][0]["views"][0]["cam_pose"] = pose.tolist()
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="non-rigid rotation"):
        load_problem(manifest_path)


def test_slightly_drifted_rotation_is_reprojected(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    pose = np.array(data["arms"][0]["views"][0]["cam_pose"])
    pose[:3, :3] += 1e-8  # within acceptance, beyond keep-exact threshold
    data["arms"][0]["views"][0]["cam_pose"] = pose.tolist()
    manifest_path.write_text(json.dumps(data))
    problem = load_problem(manifest_path)
    assert lie.rotation_defect(problem.primary.cam_poses[0][:3, :3]) < 1e-12


def test_bad_bottom_row_rejected(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    data["arms"][0]["views"][0]["ee_pose"][3] = [0.0, 0.0, 1e-3, 1.0]
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match=r"bottom row"):
        load_problem(manifest_path)


def test_missing_point_map_file_raises(tmp_path):
    manifest_path, _ = write_scene_manifest(tmp_path)
    data = json.loads(manifest_path.read_text())
    data["arms"][0]["views"][0]["point_map"] = "missing.ply"
    manifest_path.write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="cannot read point map"):
        load_problem(manifest_path)


# --- in-memory type invariants ----------------------------------------------


def test_capture_set_length_mismatch():
    rng = np.random.default_rng(0)
    poses = [random_transform(rng) for _ in range(3)]
    with pytest.raises(ValueError, match="length mismatch"):
        CaptureSet(1, ["a", "b", "c"], poses, poses[:2])


def test_capture_set_needs_two_views():
    rng = np.random.default_rng(0)
    poses = [random_transform(rng)]
    with pytest.raises(ValueError, match="fewer than 2 views"):
        CaptureSet(1, ["a"], poses, poses)


def test_point_map_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        PointMap(np.zeros((4, 3)), np.zeros(3))


def test_solver_options_validation():
    with pytest.raises(ValueError, match="alpha"):
        SolverOptions(alpha=1.5)
    with pytest.raises(ValueError, match="gd_step"):
        SolverOptions(gd_step=0.0)


# --- relative motions ---------------------------------------------------------


def _capture_from_poses(poses, cam_poses=None):
    ids = [f"v{i}" for i in range(len(poses))]
    return CaptureSet(1, ids, poses, cam_poses if cam_poses is not None else poses)


def test_relative_ee_identity_chain():
    poses = [np.eye(4)] * 4
    for rel in relative_ee(_capture_from_poses(poses)):
        assert np.array_equal(rel, np.eye(4))


def test_relative_ee_pure_translation():
    poses = [lie.rt(np.eye(3), [0.0, 0.0, 0.1 * i]) for i in range(3)]
    for rel in relative_ee(_capture_from_poses(poses)):
        assert np.allclose(rel, lie.rt(np.eye(3), [0.0, 0.0, 0.1]), atol=1e-15)


def test_relative_ee_matches_compose_oracle():
    rng = np.random.default_rng(5)
    poses = [random_transform(rng) for _ in range(6)]
    rels = relative_ee(_capture_from_poses(poses))
    for i, rel in enumerate(rels):
        oracle = np.linalg.inv(poses[i]) @ poses[i + 1]
        assert np.allclose(rel, oracle, atol=1e-12)


def test_relative_ee_telescopes():
    rng = np.random.default_rng(6)
    poses = [random_transform(rng) for _ in range(7)]
    rels = relative_ee(_capture_from_poses(poses))
    acc = lie.identity()
    for i, rel in enumerate(rels):
        acc = lie.compose(acc, rel)
        oracle = lie.compose(lie.inverse(poses[0]), poses[i + 1])
        assert np.abs(acc - oracle).max() < 1e-10


def test_relative_cam_at_unit_scale_matches_relative_ee():
    rng = np.random.default_rng(7)
    poses = [random_transform(rng) for _ in range(5)]
    cs = _capture_from_poses(poses)
    for a, b in zip(relative_cam(cs, 1.0), relative_ee(cs)):
        assert np.allclose(a, b, atol=1e-15)


def test_relative_cam_matches_scale_then_compose_oracle():
    rng = np.random.default_rng(8)
    poses = [random_transform(rng) for _ in range(5)]
    cs = _capture_from_poses(poses)
    scale = 47.3
    rels = relative_cam(cs, scale)
    for i, rel in enumerate(rels):
        scaled_a = lie.rt(poses[i][:3, :3], scale * poses[i][:3, 3])
        scaled_b = lie.rt(poses[i + 1][:3, :3], scale * poses[i + 1][:3, 3])
        oracle = np.linalg.inv(scaled_a) @ scaled_b
        assert np.allclose(rel, oracle, atol=1e-12)


def test_relative_cam_translation_linear_in_scale():
    rng = np.random.default_rng(9)
    poses = [random_transform(rng) for _ in range(5)]
    cs = _capture_from_poses(poses)
    base = relative_cam(cs, 1.0)
    doubled = relative_cam(cs, 2.0)
    for a, b in zip(base, doubled):
        assert np.array_equal(2.0 * a[:3, 3], b[:3, 3])


def test_relative_cam_rotations_bit_identical_across_scales():
    rng = np.random.default_rng(10)
    poses = [random_transform(rng) for _ in range(5)]
    cs = _capture_from_poses(poses)
    for a, b in zip(relative_cam(cs, 0.37), relative_cam(cs, 512.0)):
        assert np.array_equal(a[:3, :3], b[:3, :3])


def test_relative_cam_rejects_bad_scale():
    rng = np.random.default_rng(11)
    cs = _capture_from_poses([random_transform(rng) for _ in range(3)])
    with pytest.raises(ValueError, match="scale"):
        relative_cam(cs, -1.0)


# --- PLY codec ----------------------------------------------------------------


def test_point_map_ply_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    points = rng.normal(size=(17, 3)).astype(np.float32).astype(np.float64)
    conf = rng.uniform(0, 3, 17).astype(np.float32).astype(np.float64)
    path = tmp_path / "pm.ply"
    plyio.write_point_map(path, points, conf)
    points2, conf2 = plyio.read_point_map(path)
    assert np.array_equal(points, points2)
    assert np.array_equal(conf, conf2)
    # writing the same data twice produces identical bytes
    path2 = tmp_path / "pm2.ply"
    plyio.write_point_map(path2, points2, conf2)
    assert path.read_bytes() == path2.read_bytes()


def test_cloud_ply_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    points = rng.normal(size=(9, 3))
    arm_ids = np.array([1, 1, 1, 1, 2, 2, 2, 2, 2])
    view_ids = np.arange(9)
    path = tmp_path / "cloud.ply"
    plyio.write_cloud(path, points, arm_ids, view_ids)
    p2, a2, v2 = plyio.read_cloud(path)
    assert np.array_equal(p2, points.astype(np.float32).astype(np.float64))
    assert np.array_equal(a2, arm_ids)
    assert np.array_equal(v2, view_ids)


def test_wrong_ply_layout_rejected(tmp_path):
    path = tmp_path / "bad.ply"
    header = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    path.write_bytes(header + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(ManifestError, match="unsupported PLY layout"):
        plyio.read_point_map(path)
