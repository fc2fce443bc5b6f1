"""World-to-base recovery, the inter-arm base transform, and residuals.

Once an arm's extrinsic X and the shared scale are known, every view yields a
closure

    C_i = ee_pose_i @ X @ inverse(metric_cam_pose_i)

that would be one and the same transform — the world-to-base mapping — if the
calibration and the observations were exact. The per-view closures are
SE(3)-averaged; their dispersion around the mean is reported as a diagnostic
and, when far out of proportion to the chain residuals, raises a warning
(wrong pose conventions produce exactly that signature).

The inter-arm transform is definitional: base_1_to_base_2 =
world_to_base_1 @ inverse(world_to_base_2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .capture import CalibrationProblem, CaptureSet, relative_cam, relative_ee

# A closure spread this many times the mean chain residual (plus a small
# absolute floor so noiseless runs never warn) suggests inconsistent frame
# conventions rather than measurement noise.
DISPERSION_WARN_FACTOR = 5.0
DISPERSION_WARN_FLOOR = 1e-9


@dataclass
class CalibrationSolution:
    """Complete calibration: both extrinsics, scale, and all frame links."""

    extrinsic_1: np.ndarray
    extrinsic_2: np.ndarray
    scale: float
    world_to_base_1: np.ndarray
    world_to_base_2: np.ndarray
    base_1_to_base_2: np.ndarray
    residual_rot: float
    residual_trans: float
    per_view_closure_spread: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        expected = base_to_base(self.world_to_base_1, self.world_to_base_2)
        if np.abs(expected - self.base_1_to_base_2).max() > 1e-9:
            raise ValueError(
                "base_1_to_base_2 must equal world_to_base_1 @ inverse(world_to_base_2)"
            )

    def extrinsic(self, arm_id: int) -> np.ndarray:
        return self.extrinsic_1 if arm_id == 1 else self.extrinsic_2

    def world_to_base(self, arm_id: int) -> np.ndarray:
        return self.world_to_base_1 if arm_id == 1 else self.world_to_base_2


def metric_cam_pose(cam_pose: np.ndarray, scale: float) -> np.ndarray:
    """Camera pose with model-unit translation converted to meters."""
    return lie.rt(cam_pose[:3, :3], scale * cam_pose[:3, 3])


def view_closures(cs: CaptureSet, extrinsic: np.ndarray, scale: float) -> list[np.ndarray]:
    """Per-view world-to-base estimates E_i @ X @ inverse(P_i(scale))."""
    out = []
    for ee, cam in zip(cs.ee_poses, cs.cam_poses):
        metric = metric_cam_pose(cam, scale)
        out.append(lie.compose(lie.compose(ee, extrinsic), lie.inverse(metric)))
    return out


def recover_world_to_base(cs: CaptureSet, extrinsic: np.ndarray, scale: float) -> np.ndarray:
    """SE(3) average of the per-view closures (a single view passes through)."""
    return lie.average_se3(view_closures(cs, extrinsic, scale))


def closure_spread(closures, mean: np.ndarray) -> tuple[float, float]:
    """Dispersion of closures around their mean: (max geodesic distance to the
    mean rotation in radians, max translation deviation in meters)."""
    rot = max(lie.geodesic_distance(c[:3, :3], mean[:3, :3]) for c in closures)
    trans = max(float(np.linalg.norm(c[:3, 3] - mean[:3, 3])) for c in closures)
    return rot, trans


def base_to_base(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Secondary base expressed in the primary base frame: t1 @ inverse(t2)."""
    return lie.compose(t1, lie.inverse(t2))


def residuals(problem: CalibrationProblem, solution) -> tuple[float, float]:
    """Mean chain mismatch pooled over both arms and all consecutive pairs.

    For each pair, the two chain sides rel_ee @ X and X @ rel_cam(scale) are
    compared: rotations by geodesic distance (radians), translations by
    Euclidean distance (meters). `solution` needs extrinsic_1/extrinsic_2/
    scale attributes; any solver-stage result qualifies.
    """
    rots, trans = [], []
    for cs, x in (
        (problem.primary, solution.extrinsic_1),
        (problem.secondary, solution.extrinsic_2),
    ):
        for rel_e, rel_c in zip(relative_ee(cs), relative_cam(cs, solution.scale)):
            lhs = lie.compose(rel_e, x)
            rhs = lie.compose(x, rel_c)
            rots.append(lie.geodesic_distance(lhs[:3, :3], rhs[:3, :3]))
            trans.append(float(np.linalg.norm(lhs[:3, 3] - rhs[:3, 3])))
    return float(np.mean(rots)), float(np.mean(trans))


def printed_relative_average(cs: CaptureSet, extrinsic: np.ndarray, scale: float) -> np.ndarray:
    """Average of the relative-transform terms rel_ee @ inverse(X @ rel_cam).

    Diagnostic only. Each term equals X @ B @ inverse(X) @ inverse(B) @
    inverse(X) when the chains agree, so the average collapses to the
    identity only when the extrinsic is the identity; in general it is
    neither constant per view nor a base-frame transform. It is exposed
    behind a debug flag so the two averaging forms can be compared; the
    absolute-pose closure in recover_world_to_base is the reported result.
    """
    terms = [
        lie.compose(rel_e, lie.inverse(lie.compose(extrinsic, rel_c)))
        for rel_e, rel_c in zip(relative_ee(cs), relative_cam(cs, scale))
    ]
    return lie.average_se3(terms)


def check_dispersion(arm_id: int, spread: tuple[float, float], residual: tuple[float, float]):
    """Warn when closures disagree far beyond what chain residuals explain."""
    for name, s, r in (("rotation", spread[0], residual[0]), ("translation", spread[1], residual[1])):
        if s > DISPERSION_WARN_FACTOR * r + DISPERSION_WARN_FLOOR:
            warnings.warn(
                f"arm {arm_id}: closure {name} dispersion {s:.3e} exceeds "
                f"{DISPERSION_WARN_FACTOR:g}x the mean chain residual {r:.3e}; "
                "check pose conventions",
                RuntimeWarning,
                stacklevel=2,
            )
