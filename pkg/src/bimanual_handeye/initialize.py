"""Closed-form calibration initialization.

Each arm's camera-to-end-effector rotation comes from the classic log-map
moment matrix: with alpha_i = log(R_ee-rel,i) and beta_i = log(R_cam-rel,i),
accumulate M = sum_i beta_i alpha_i^T and take R' = (M^T M)^(-1/2) M^T. A
single linear least-squares system then recovers both hand-eye translations
together with one scale factor shared by the two reconstructions: each pair
contributes rows (I - R_ee-rel) t'_m + lambda' R'_m t_cam-rel = t_ee-rel.

Solving the translation/scale problem jointly (one 7-unknown system, columns
[t'_1 | t'_2 | lambda']) is the exact least-squares expression of the shared
scale; solving per arm and averaging the two scales is not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lie
from .capture import CalibrationProblem, relative_cam, relative_ee
from .errors import DegenerateMotionError, NonPositiveScaleError, RankDeficientSystemError

# Second-smallest singular value of M below this means the relative-rotation
# axes do not span two directions and the rotation is unobservable.
ROTATION_RANK_TOL = 1e-8

# Smallest singular value of M^T M below this makes the inverse square root
# meaningless; raise instead of silently pseudo-inverting.
MOMENT_SINGULAR_TOL = 1e-12

# Smallest singular value of the stacked scale-recovery system below this
# leaves a translation or the scale unobservable (planar / translation-only
# trajectories).
SCALE_SYSTEM_RANK_TOL = 1e-10


@dataclass
class InitialSolution:
    """Closed-form estimate: per-arm extrinsics plus the shared scale."""

    extrinsic_1: np.ndarray
    extrinsic_2: np.ndarray
    scale: float
    conditioning: dict = field(default_factory=dict)

    def __post_init__(self):
        self.extrinsic_1 = np.asarray(self.extrinsic_1, dtype=float)
        self.extrinsic_2 = np.asarray(self.extrinsic_2, dtype=float)
        self.scale = float(self.scale)
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        for x in (self.extrinsic_1, self.extrinsic_2):
            if x.shape != (4, 4) or lie.rotation_defect(x[:3, :3]) > 1e-6:
                raise ValueError("extrinsic is not a rigid transform")

    def extrinsic(self, arm_id: int) -> np.ndarray:
        return self.extrinsic_1 if arm_id == 1 else self.extrinsic_2


def _moment_matrix(rel_ee, rel_cam) -> np.ndarray:
    if len(rel_ee) != len(rel_cam):
        raise ValueError("length mismatch between relative pose lists")
    if len(rel_ee) < 2:
        raise ValueError("need at least 2 relative pose pairs")
    terms = []
    for a, b in zip(rel_ee, rel_cam):
        alpha = lie.logmap_so3(np.asarray(a)[:3, :3])
        beta = lie.logmap_so3(np.asarray(b)[:3, :3])
        terms.append(np.outer(beta, alpha))
    # compensated, canonically ordered summation: the moment matrix (and thus
    # the rotation) is bit-identical under any reordering of the pairs
    return lie.compensated_sum(terms)


def _rotation_from_moment(m: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[1] < ROTATION_RANK_TOL:
        raise DegenerateMotionError("degenerate motion: rotation axes span rank < 2")
    mtm = m.T @ m
    u, s, vt = np.linalg.svd(mtm)
    if s[-1] < MOMENT_SINGULAR_TOL:
        raise DegenerateMotionError("degenerate motion: log-map moment matrix is singular")
    inv_sqrt = (vt.T * (1.0 / np.sqrt(s))) @ vt
    r = inv_sqrt @ m.T
    if np.linalg.det(r) <= 0.0:
        raise DegenerateMotionError("degenerate motion: moment matrix orientation is reversed")
    return lie.project_rotation(r)


def solve_rotation(rel_ee, rel_cam) -> np.ndarray:
    """Best-fit rotation R' with R_ee-rel,i R' = R' R_cam-rel,i in the least-
    squares sense, via R' = (M^T M)^(-1/2) M^T.

    The inverse square root is computed from the SVD of the symmetric matrix
    M^T M as V diag(1/sqrt(s)) V^T.
    """
    return _rotation_from_moment(_moment_matrix(rel_ee, rel_cam))


def solve_scale_translation(
    problem: CalibrationProblem,
    r1: np.ndarray,
    r2: np.ndarray,
    *,
    moment_min_sv: tuple | None = None,
) -> InitialSolution:
    """Joint linear solve for t'_1, t'_2 and the shared scale.

    Stacks, over both arms and all consecutive pairs, the rows

        [I - R_ee-rel | 0 | R'_1 t_cam-rel] [t'_1; t'_2; lambda'] = t_ee-rel

    (arm-2 rows use the middle block) and solves the 7-unknown least-squares
    problem. Camera-pose translations enter in model units; lambda' converts
    them to meters.
    """
    blocks = []
    targets = []
    for offset, cs, rot in ((0, problem.primary, r1), (3, problem.secondary, r2)):
        for rel_e, rel_c in zip(relative_ee(cs), relative_cam(cs, 1.0)):
            row = np.zeros((3, 7))
            row[:, offset : offset + 3] = np.eye(3) - rel_e[:3, :3]
            row[:, 6] = rot @ rel_c[:3, 3]
            blocks.append(row)
            targets.append(rel_e[:3, 3])
    system = np.vstack(blocks)
    rhs = np.concatenate(targets)
    sv = np.linalg.svd(system, compute_uv=False)
    if sv[-1] < SCALE_SYSTEM_RANK_TOL:
        raise RankDeficientSystemError("rank-deficient scale/translation system")
    x, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    scale = float(x[6])
    if scale <= 0.0:
        raise NonPositiveScaleError("non-positive scale")
    conditioning = {
        "moment_min_sv_1": None if moment_min_sv is None else float(moment_min_sv[0]),
        "moment_min_sv_2": None if moment_min_sv is None else float(moment_min_sv[1]),
        "scale_system_min_sv": float(sv[-1]),
    }
    return InitialSolution(
        extrinsic_1=lie.rt(r1, x[0:3]),
        extrinsic_2=lie.rt(r2, x[3:6]),
        scale=scale,
        conditioning=conditioning,
    )


def solve_initial(problem: CalibrationProblem) -> InitialSolution:
    """Closed-form pipeline: per-arm rotation solves, then the joint
    scale/translation solve."""
    rotations = []
    min_svs = []
    for cs in problem.arms:
        m = _moment_matrix(relative_ee(cs), relative_cam(cs, 1.0))
        rotations.append(_rotation_from_moment(m))
        min_svs.append(float(np.linalg.svd(m, compute_uv=False)[-1]))
    return solve_scale_translation(
        problem, rotations[0], rotations[1], moment_min_sv=tuple(min_svs)
    )
