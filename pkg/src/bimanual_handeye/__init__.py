"""Marker-free bimanual hand-eye calibration.

Recovers, per arm, the camera-to-end-effector extrinsic, a shared metric
scale for an unscaled multi-view reconstruction, the reconstruction-to-base
transforms, and the transform between the two robot bases — from synchronized
end-effector poses and camera poses alone, with no calibration target.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    DegenerateMotionError,
    DiversityError,
    ManifestError,
    NonFiniteCostError,
    NonPositiveScaleError,
    RankDeficientSystemError,
    SolverError,
)

__all__ = [
    "CalibrationError",
    "DegenerateMotionError",
    "DiversityError",
    "ManifestError",
    "NonFiniteCostError",
    "NonPositiveScaleError",
    "RankDeficientSystemError",
    "SolverError",
    "__version__",
]
