"""Synthetic bimanual capture generation with known ground truth.

The forward model mirrors the solver's chain exactly: a camera rigidly
mounted on each end-effector (extrinsic X_m), both reconstructions living in
one shared frame `w` related to each robot base by a rigid transform and a
single metric scale. Camera poses are emitted in model units (translations
divided by the ground-truth scale); optional zero-mean Gaussian noise
perturbs rotations on the left as exp(xi) and translations additively.

Noise draws are standard normals scaled by sigma, drawn in a fixed order
regardless of sigma, so scenes generated from the same seed at different
noise levels share the same underlying geometry and noise directions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import capture, lie
from .capture import CaptureSet, PointMap
from .errors import DiversityError

# Total trajectory draws allowed before giving up on the diversity bound.
MAX_REJECTIONS = 10_000

# Lower bound on the smallest eigenvalue of the (normalized) relative-axis
# scatter; keeps the rotation solve's moment matrix numerically full-rank.
AXIS_SCATTER_FLOOR = 0.02


@dataclass
class NoiseSpec:
    rot_sigma: float = 0.0    # rad, left-multiplied exp noise on camera rotations
    trans_sigma: float = 0.0  # model units, additive on camera translations
    ee_rot_sigma: float = 0.0     # rad, on end-effector rotations
    ee_trans_sigma: float = 0.0   # meters, on end-effector translations


@dataclass
class SceneConfig:
    views_per_arm: tuple[int, int] = (6, 6)
    scale: float = 1.5                    # ground-truth model-units -> meters
    workspace_extent: float = 0.35        # half-extent of EE positions (m)
    workspace_center: tuple[float, float, float] = (0.45, 0.0, 0.35)
    orientation_spread: float = 0.9       # rad, EE orientation sampling amplitude
    min_relative_rotation: float = 0.2    # rad, between consecutive views
    min_axis_separation: float = 0.25     # rad, pairwise relative-rotation axes
    base_offset: tuple[float, float, float] = (0.8, 0.0, 0.0)
    base_yaw: float = float(np.pi)        # secondary base yaw in the primary base
    cube_side: float = 0.1                # reference cube side (m), in base-1 frame
    cube_center: tuple[float, float, float] = (0.4, 0.0, 0.05)
    cube_points_per_edge: int = 2
    cube_confidence: float = 2.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @staticmethod
    def from_dict(data: dict) -> "SceneConfig":
        data = dict(data)
        noise = NoiseSpec(**data.pop("noise", {}))
        if "views_per_arm" in data and isinstance(data["views_per_arm"], int):
            data["views_per_arm"] = (data["views_per_arm"], data["views_per_arm"])
        known = set(SceneConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene config fields: {sorted(unknown)}")
        cfg = SceneConfig(noise=noise, **data)
        return replace(cfg, views_per_arm=tuple(cfg.views_per_arm))

    @staticmethod
    def from_json(path) -> "SceneConfig":
        return SceneConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SceneTruth:
    extrinsic_1: np.ndarray
    extrinsic_2: np.ndarray
    scale: float
    world_to_base_1: np.ndarray
    world_to_base_2: np.ndarray

    @property
    def base_1_to_base_2(self) -> np.ndarray:
        return lie.compose(self.world_to_base_1, lie.inverse(self.world_to_base_2))


@dataclass
class SyntheticScene:
    truth: SceneTruth
    ee_trajectories: tuple[list[np.ndarray], list[np.ndarray]]  # noiseless
    noise: NoiseSpec
    seed: int
    primary: CaptureSet
    secondary: CaptureSet
    scale_check_pairs: list[dict] = field(default_factory=list)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random rotation from a normalized Gaussian quaternion."""
    w, x, y, z = rng.normal(size=4)
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _rotation_in_ball(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return lie.expmap_so3(axis * rng.uniform(0.0, max_angle))


def _trajectory_is_diverse(poses: list[np.ndarray], config: SceneConfig) -> bool:
    vecs = []
    for a, b in zip(poses[:-1], poses[1:]):
        vecs.append(lie.logmap_so3(a[:3, :3].T @ b[:3, :3]))
    angles = [np.linalg.norm(v) for v in vecs]
    if min(angles) < config.min_relative_rotation:
        return False
    axes = [v / a for v, a in zip(vecs, angles)]
    for i, j in itertools.combinations(range(len(axes)), 2):
        cos_sep = min(abs(float(axes[i] @ axes[j])), 1.0)
        if np.arccos(cos_sep) < config.min_axis_separation:
            return False
    if len(axes) >= 3:
        scatter = sum(np.outer(a, a) for a in axes) / len(axes)
        if np.linalg.eigvalsh(scatter)[0] < AXIS_SCATTER_FLOOR:
            return False
    return True


def _sample_trajectory(
    rng: np.random.Generator, config: SceneConfig, n_views: int, budget: list[int]
) -> list[np.ndarray]:
    center = np.asarray(config.workspace_center, dtype=float)
    while True:
        if budget[0] <= 0:
            raise DiversityError("could not satisfy diversity bound")
        budget[0] -= 1
        poses = []
        for _ in range(n_views):
            rot = _rotation_in_ball(rng, config.orientation_spread)
            pos = center + rng.uniform(-config.workspace_extent, config.workspace_extent, 3)
            poses.append(lie.rt(rot, pos))
        if _trajectory_is_diverse(poses, config):
            return poses


def model_camera_pose(truth: SceneTruth, arm_id: int, ee_pose: np.ndarray) -> np.ndarray:
    """Noiseless camera pose in the reconstruction frame, model units."""
    extrinsic = truth.extrinsic_1 if arm_id == 1 else truth.extrinsic_2
    world_to_base = truth.world_to_base_1 if arm_id == 1 else truth.world_to_base_2
    metric = lie.compose(lie.inverse(world_to_base), lie.compose(ee_pose, extrinsic))
    return lie.rt(metric[:3, :3], metric[:3, 3] / truth.scale)


def synthesize_capture(
    truth: SceneTruth,
    arm_id: int,
    ee_poses: list[np.ndarray],
    *,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
    point_map: PointMap | None = None,
) -> CaptureSet:
    """Forward-generate one arm's observations from clean EE poses.

    Noise standard normals are drawn per view in a fixed order even when the
    corresponding sigma is zero.
    """
    noise = noise or NoiseSpec()
    rng = rng or np.random.default_rng(0)
    ids, ee_out, cam_out, pms = [], [], [], []
    for i, ee in enumerate(ee_poses):
        cam = model_camera_pose(truth, arm_id, ee)
        z_rot_cam = rng.normal(size=3)
        z_trans_cam = rng.normal(size=3)
        z_rot_ee = rng.normal(size=3)
        z_trans_ee = rng.normal(size=3)
        cam = lie.rt(
            lie.expmap_so3(noise.rot_sigma * z_rot_cam) @ cam[:3, :3],
            cam[:3, 3] + noise.trans_sigma * z_trans_cam,
        )
        ee_obs = lie.rt(
            lie.expmap_so3(noise.ee_rot_sigma * z_rot_ee) @ ee[:3, :3],
            ee[:3, 3] + noise.ee_trans_sigma * z_trans_ee,
        )
        ids.append(f"a{arm_id}_v{i:03d}")
        ee_out.append(ee_obs)
        cam_out.append(cam)
        pms.append(
            None
            if point_map is None
            else PointMap(point_map.points, point_map.confidences, source_view=ids[-1])
        )
    return CaptureSet(arm_id, ids, ee_out, cam_out, pms)


def _cube_lattice(config: SceneConfig) -> np.ndarray:
    """Axis-aligned cube sample points in the base-1 frame (meters)."""
    p = config.cube_points_per_edge
    ticks = np.linspace(-config.cube_side / 2.0, config.cube_side / 2.0, p)
    pts = np.array(list(itertools.product(ticks, ticks, ticks)))
    return pts + np.asarray(config.cube_center, dtype=float)


def _cube_pairs(config: SceneConfig, cube_model: np.ndarray, scale: float) -> list[dict]:
    """Point-index pairs with known metric separations.

    Real lengths are computed from the emitted (float32-quantized) point map
    scaled by the ground-truth factor, so they describe the synthetic object
    exactly as stored rather than its nominal dimensions; the two differ by
    the quantization error, which would otherwise floor the achievable scale
    error at roughly 1e-7.
    """
    p = config.cube_points_per_edge
    # lattice index for (ix, iy, iz) is ix*p*p + iy*p + iz
    corner = (p - 1) * (p * p + p + 1)  # opposite corner of index 0
    pairs = [
        {"name": "edge_x", "index_a": 0, "index_b": (p - 1) * p * p},
        {"name": "edge_y", "index_a": 0, "index_b": (p - 1) * p},
        {"name": "edge_z", "index_a": 0, "index_b": p - 1},
        {"name": "space_diagonal", "index_a": 0, "index_b": corner},
    ]
    for pair in pairs:
        d = np.linalg.norm(cube_model[pair["index_a"]] - cube_model[pair["index_b"]])
        pair["real_length"] = float(scale * d)
    return pairs


def generate(config: SceneConfig, seed: int) -> SyntheticScene:
    """Generate a two-arm synthetic scene; bit-deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)

    extrinsic_1 = lie.rt(random_rotation(rng), rng.uniform(-0.06, 0.06, 3))
    extrinsic_2 = lie.rt(random_rotation(rng), rng.uniform(-0.06, 0.06, 3))
    world_to_base_1 = lie.rt(
        _rotation_in_ball(rng, 0.5), rng.uniform(-0.4, 0.4, 3)
    )
    yaw = config.base_yaw
    base_1_to_base_2 = lie.rt(
        np.array(
            [
                [np.cos(yaw), -np.sin(yaw), 0.0],
                [np.sin(yaw), np.cos(yaw), 0.0],
                [0.0, 0.0, 1.0],
            ]
        ),
        np.asarray(config.base_offset, dtype=float),
    )
    world_to_base_2 = lie.compose(lie.inverse(base_1_to_base_2), world_to_base_1)
    truth = SceneTruth(
        extrinsic_1, extrinsic_2, float(config.scale), world_to_base_1, world_to_base_2
    )

    budget = [MAX_REJECTIONS]
    traj_1 = _sample_trajectory(rng, config, config.views_per_arm[0], budget)
    traj_2 = _sample_trajectory(rng, config, config.views_per_arm[1], budget)

    cube_metric = _cube_lattice(config)
    cube_model = lie.apply_transform(lie.inverse(world_to_base_1), cube_metric) / truth.scale
    # quantize to float32 so the PLY round trip is bit-exact
    cube_model = cube_model.astype(np.float32).astype(np.float64)
    cube = PointMap(
        cube_model, np.full(len(cube_model), config.cube_confidence, dtype=float)
    )

    primary = synthesize_capture(
        truth, 1, traj_1, noise=config.noise, rng=rng, point_map=cube
    )
    secondary = synthesize_capture(
        truth, 2, traj_2, noise=config.noise, rng=rng, point_map=cube
    )
    return SyntheticScene(
        truth=truth,
        ee_trajectories=(traj_1, traj_2),
        noise=config.noise,
        seed=seed,
        primary=primary,
        secondary=secondary,
        scale_check_pairs=_cube_pairs(config, cube_model, truth.scale),
    )


def _matrix(t: np.ndarray) -> list[list[float]]:
    return [[float(x) for x in row] for row in t]


def emit_manifest(scene: SyntheticScene, out_dir) -> Path:
    """Write manifest.json (+ point-map PLYs, truth.json, scale_pairs.json).

    load_problem on the result reproduces the in-memory observations
    bit-for-bit.
    """
    out_dir = Path(out_dir)
    manifest_path = capture.write_manifest(out_dir, scene.primary, scene.secondary)
    truth = {
        "extrinsic_1": _matrix(scene.truth.extrinsic_1),
        "extrinsic_2": _matrix(scene.truth.extrinsic_2),
        "scale": scene.truth.scale,
        "world_to_base_1": _matrix(scene.truth.world_to_base_1),
        "world_to_base_2": _matrix(scene.truth.world_to_base_2),
        "base_1_to_base_2": _matrix(scene.truth.base_1_to_base_2),
        "seed": scene.seed,
    }
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    (out_dir / "scale_pairs.json").write_text(
        json.dumps({"pairs": scene.scale_check_pairs}, indent=2) + "\n"
    )
    return manifest_path
