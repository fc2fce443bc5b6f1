"""Confidence filtering, metric scaling, and fusion of point maps.

Point maps arrive in the shared reconstruction frame at model scale; the
metric cloud is x_b1 = world_to_base_1 @ (scale * x) for every point that
survives the confidence threshold, expressed in the primary arm's base frame.
Fusion is plain tagged concatenation — deduplication, downsampling, and
outlier removal are deliberately out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lie, plyio
from .capture import PointMap


@dataclass
class MetricCloud:
    """Points in the primary base frame (meters) with per-point source tags."""

    points: np.ndarray     # (N, 3) float64
    arm_ids: np.ndarray    # (N,) which arm contributed the point
    view_ids: np.ndarray   # (N,) view index within that arm

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.arm_ids = np.asarray(self.arm_ids, dtype=np.uint8).reshape(-1)
        self.view_ids = np.asarray(self.view_ids, dtype=np.uint16).reshape(-1)
        if not (len(self.points) == len(self.arm_ids) == len(self.view_ids)):
            raise ValueError("length mismatch between points and source tags")
        if len(self.points) and not np.isfinite(self.points).all():
            raise ValueError("non-finite point coordinates")

    @property
    def count(self) -> int:
        return len(self.points)

    def write_ply(self, path) -> None:
        plyio.write_cloud(path, self.points, self.arm_ids, self.view_ids)

    @staticmethod
    def read_ply(path) -> "MetricCloud":
        points, arm_ids, view_ids = plyio.read_cloud(path)
        return MetricCloud(points, arm_ids, view_ids)


def filter_by_confidence(pm: PointMap, threshold: float) -> PointMap:
    """Retain exactly the points with confidence >= threshold (inclusive)."""
    if threshold < 0.0:
        raise ValueError("threshold must be non-negative")
    keep = pm.confidences >= threshold
    return PointMap(pm.points[keep], pm.confidences[keep], source_view=pm.source_view)


def to_metric_frame(
    pm: PointMap,
    scale: float,
    world_to_base_1: np.ndarray,
    *,
    arm_id: int = 0,
    view_id: int = 0,
) -> MetricCloud:
    """Scale model-frame points to meters and move them into the base frame.

    Every output point is world_to_base_1 @ (scale * x); the count is
    preserved. arm_id/view_id tag the provenance of all points in this map.
    """
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    points = lie.apply_transform(world_to_base_1, scale * pm.points)
    n = len(points)
    return MetricCloud(points, np.full(n, arm_id), np.full(n, view_id))


def fuse(clouds) -> MetricCloud:
    """Concatenate metric clouds, preserving source tags; counts add."""
    clouds = list(clouds)
    if not clouds:
        return MetricCloud(np.zeros((0, 3)), np.zeros(0), np.zeros(0))
    return MetricCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.arm_ids for c in clouds]),
        np.concatenate([c.view_ids for c in clouds]),
    )


def scale_error(reconstructed_length: float, real_length: float) -> float:
    """Object-dimension error fraction |reconstructed - real| / real."""
    if not real_length > 0.0:
        raise ValueError("real_length must be positive")
    return abs(reconstructed_length - real_length) / real_length
