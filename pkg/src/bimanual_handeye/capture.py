"""Capture manifest loading, validation, and relative-motion extraction.

A capture manifest is a JSON file (schema version 1) with two arms, each a
list of synchronized views: the end-effector pose in the robot base frame
(meters) and the camera pose in the shared reconstruction frame (unscaled
model units, camera-to-world), plus an optional per-view point-map PLY.

Schema violations are reported with a JSON-pointer path into the manifest so
broken exports are locatable without guesswork.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lie, plyio
from .errors import ManifestError

# Rotations this far from orthonormal are re-projected onto SO(3); anything
# worse is rejected as non-rigid.
ROTATION_ACCEPT_TOL = 1e-6

# Below this defect the stored rotation is kept bit-for-bit (round-trip
# fidelity for data we wrote ourselves).
ROTATION_REPROJECT_TOL = 1e-12


@dataclass
class PointMap:
    """Unscaled reconstruction points for one view, with confidences."""

    points: np.ndarray         # (n, 3) float64, reconstruction frame
    confidences: np.ndarray    # (n,) float64
    source_view: str = ""

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.confidences = np.asarray(self.confidences, dtype=float).reshape(-1)
        if len(self.points) != len(self.confidences):
            raise ValueError("length mismatch between points and confidences")


@dataclass
class CaptureSet:
    """Synchronized views for one arm."""

    arm_id: int
    image_ids: list[str]
    ee_poses: list[np.ndarray]       # base frame, meters
    cam_poses: list[np.ndarray]      # reconstruction frame, model units
    point_maps: list[PointMap | None] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.image_ids)
        if not self.point_maps:
            self.point_maps = [None] * n
        if not (len(self.ee_poses) == len(self.cam_poses) == len(self.point_maps) == n):
            raise ValueError(f"length mismatch in capture set for arm {self.arm_id}")
        if n < 2:
            raise ValueError(f"fewer than 2 views on arm {self.arm_id}")

    @property
    def n_views(self) -> int:
        return len(self.image_ids)


@dataclass
class SolverOptions:
    alpha: float = 0.5                 # rotation weight in the refinement cost
    confidence_threshold: float = 1.5  # point-map confidence cutoff (inclusive)
    gd_max_iters: int = 2000
    gd_step: float = 1e-2
    gd_tol: float = 1e-10
    refine_enabled: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.gd_max_iters < 0:
            raise ValueError("gd_max_iters must be non-negative")
        if self.gd_step <= 0.0 or self.gd_tol <= 0.0:
            raise ValueError("gd_step and gd_tol must be positive")


@dataclass
class CalibrationProblem:
    primary: CaptureSet
    secondary: CaptureSet
    options: SolverOptions = field(default_factory=SolverOptions)

    @property
    def arms(self) -> tuple[CaptureSet, CaptureSet]:
        return (self.primary, self.secondary)


def _fail(path: str, msg: str) -> None:
    raise ManifestError(f"schema violation at {path}: {msg}")


def _parse_pose(node, path: str, arm_id: int, view_idx: int, what: str) -> np.ndarray:
    if (
        not isinstance(node, list)
        or len(node) != 4
        or any(not isinstance(row, list) or len(row) != 4 for row in node)
    ):
        _fail(path, "expected a 4x4 matrix as nested lists")
    try:
        mat = np.array(node, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "matrix entries must be numbers")
    if not np.all(np.isfinite(mat)):
        _fail(path, "matrix entries must be finite")
    if np.abs(mat[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        _fail(path, "bottom row must be [0, 0, 0, 1]")
    mat[3] = (0.0, 0.0, 0.0, 1.0)
    rot = mat[:3, :3]
    defect = lie.rotation_defect(rot)
    if defect > ROTATION_ACCEPT_TOL or np.linalg.det(rot) <= 0.0:
        raise ManifestError(
            f"non-rigid rotation at arm {arm_id}, view {view_idx} ({what}): "
            f"orthonormality defect {defect:.3e}, det {np.linalg.det(rot):.6f}"
        )
    if defect > ROTATION_REPROJECT_TOL:
        mat[:3, :3] = lie.project_rotation(rot)
    return mat


def _parse_view(node, path: str, arm_id: int, view_idx: int, base_dir: Path):
    if not isinstance(node, dict):
        _fail(path, "expected an object")
    image_id = node.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        _fail(f"{path}/image_id", "expected a non-empty string")
    for key in ("ee_pose", "cam_pose"):
        if key not in node:
            _fail(f"{path}/{key}", "missing required field")
    ee = _parse_pose(node["ee_pose"], f"{path}/ee_pose", arm_id, view_idx, "ee_pose")
    cam = _parse_pose(node["cam_pose"], f"{path}/cam_pose", arm_id, view_idx, "cam_pose")
    pm = None
    if node.get("point_map") is not None:
        rel = node["point_map"]
        if not isinstance(rel, str):
            _fail(f"{path}/point_map", "expected a path string")
        pm_path = base_dir / rel
        if not pm_path.is_file():
            raise ManifestError(f"cannot read point map {pm_path}")
        points, confidences = plyio.read_point_map(pm_path)
        pm = PointMap(points, confidences, source_view=image_id)
    return image_id, ee, cam, pm


def load_problem(manifest_path, options: SolverOptions | None = None) -> CalibrationProblem:
    """Load and validate a capture manifest into a CalibrationProblem."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        root = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"schema violation at /: invalid JSON ({exc})") from exc

    if not isinstance(root, dict):
        _fail("/", "expected a top-level object")
    if root.get("version") != 1:
        _fail("/version", "expected schema version 1")
    arms_node = root.get("arms")
    if not isinstance(arms_node, list):
        _fail("/arms", "expected a list of arms")
    if len(arms_node) < 2:
        raise ManifestError("fewer than 2 arms in manifest")
    if len(arms_node) > 2:
        _fail("/arms", "expected exactly 2 arms")

    sets: dict[int, CaptureSet] = {}
    for a_idx, arm_node in enumerate(arms_node):
        path = f"/arms/{a_idx}"
        if not isinstance(arm_node, dict):
            _fail(path, "expected an object")
        arm_id = arm_node.get("arm_id")
        if arm_id not in (1, 2):
            _fail(f"{path}/arm_id", "expected 1 or 2")
        if arm_id in sets:
            _fail(f"{path}/arm_id", f"duplicate arm_id {arm_id}")
        views_node = arm_node.get("views")
        if not isinstance(views_node, list):
            _fail(f"{path}/views", "expected a list of views")
        if len(views_node) < 2:
            raise ManifestError(f"fewer than 2 views on arm {arm_id}")
        ids, ees, cams, pms = [], [], [], []
        for v_idx, view_node in enumerate(views_node):
            image_id, ee, cam, pm = _parse_view(
                view_node, f"{path}/views/{v_idx}", arm_id, v_idx, manifest_path.parent
            )
            ids.append(image_id)
            ees.append(ee)
            cams.append(cam)
            pms.append(pm)
        sets[arm_id] = CaptureSet(arm_id, ids, ees, cams, pms)

    return CalibrationProblem(sets[1], sets[2], options or SolverOptions())


def write_manifest(out_dir, primary: CaptureSet, secondary: CaptureSet) -> Path:
    """Write a manifest (plus point-map PLYs) that load_problem reads back
    bit-identically. Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arms = []
    for cs in (primary, secondary):
        if len(set(cs.image_ids)) != len(cs.image_ids):
            raise ValueError(f"duplicate image_id on arm {cs.arm_id}")
        views = []
        for i, image_id in enumerate(cs.image_ids):
            view = {
                "image_id": image_id,
                "ee_pose": [[float(x) for x in row] for row in cs.ee_poses[i][:4]],
                "cam_pose": [[float(x) for x in row] for row in cs.cam_poses[i][:4]],
            }
            pm = cs.point_maps[i]
            if pm is not None:
                rel = f"{image_id}.ply"
                plyio.write_point_map(out_dir / rel, pm.points, pm.confidences)
                view["point_map"] = rel
            views.append(view)
        arms.append({"arm_id": cs.arm_id, "views": views})
    manifest = {"version": 1, "arms": arms}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def relative_ee(cs: CaptureSet) -> list[np.ndarray]:
    """Consecutive relative end-effector motions: inverse(E_i) ∘ E_{i+1}."""
    out = []
    for a, b in zip(cs.ee_poses[:-1], cs.ee_poses[1:]):
        ra = a[:3, :3]
        out.append(lie.rt(ra.T @ b[:3, :3], ra.T @ (b[:3, 3] - a[:3, 3])))
    return out


def relative_cam(cs: CaptureSet, scale: float) -> list[np.ndarray]:
    """Consecutive relative camera motions with translations metrically
    scaled: inverse(P_i(scale)) ∘ P_{i+1}(scale).

    The rotation block never touches the scale, so it is bit-identical for
    every scale value; translations are exactly linear in the scale.
    """
    if not (math.isfinite(scale) and scale > 0.0):
        raise ValueError("scale must be positive and finite")
    out = []
    for a, b in zip(cs.cam_poses[:-1], cs.cam_poses[1:]):
        ra = a[:3, :3]
        rel_r = ra.T @ b[:3, :3]
        rel_t = ra.T @ (scale * b[:3, 3] - scale * a[:3, 3])
        out.append(lie.rt(rel_r, rel_t))
    return out
