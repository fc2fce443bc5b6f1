"""SO(3)/SE(3) primitives shared by every solver in the package.

Conventions
-----------
- Rotations are 3x3 numpy arrays (proper orthonormal, det +1).
- Rigid transforms are 4x4 homogeneous numpy arrays with a [0, 0, 0, 1]
  bottom row; ``T[:3, :3]`` is the rotation, ``T[:3, 3]`` the translation.
- Axis-angle vectors are unnormalized 3-vectors ``v`` with angle ``|v|``.
- Angles are radians, lengths are whatever the caller feeds in (the rest of
  the package keeps end-effector data in meters).

Numerical policy
----------------
The log map switches to a first-order skew extraction below LOG_SMALL_ANGLE
and to the (R + I)/2 outer-product fallback within LOG_NEAR_PI of pi; the
exp map evaluates its sinc-like coefficients by Taylor series below
EXP_SERIES_SWITCH so no branch ever divides by a vanishing angle.
Averages use compensated summation in a canonical summand order, which makes
them bit-exact under permutation of the input list.
"""

from __future__ import annotations

import numpy as np

# Below this angle the first-order skew extraction of the log map is more
# accurate than the sin-normalized form (relative error ~ angle^2 / 12).
LOG_SMALL_ANGLE = 1e-7

# Within this distance of pi the sin-normalized log map loses digits
# (sin(angle) ~ pi - angle); switch to the (R + I)/2 axis fallback.
LOG_NEAR_PI = 1e-6

# Below this angle Rodrigues' coefficients sin(a)/a and (1-cos(a))/a^2 are
# evaluated by Taylor series (truncation error ~ angle^6).
EXP_SERIES_SWITCH = 1e-4

# Orthonormality drift tolerated on composed rotations before re-projection.
COMPOSE_DRIFT_TOL = 1e-9

# A rotation average whose chordal-mean matrix has a singular value below
# this is rank-deficient (antipodal inputs) and has no meaningful mean.
AVERAGE_RANK_TOL = 1e-8


class AverageError(ValueError):
    """Raised when an SE(3) average is empty or has no well-defined mean."""


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == np.cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rt(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Assemble a 4x4 rigid transform from a rotation and a translation."""
    out = np.eye(4)
    out[:3, :3] = rotation
    out[:3, 3] = translation
    return out


def identity() -> np.ndarray:
    return np.eye(4)


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rigid-transform product a ∘ b (apply b first, then a).

    The rotation block is re-projected onto SO(3) only when accumulated
    drift exceeds COMPOSE_DRIFT_TOL, so long compose chains stay orthonormal
    without paying an SVD on every call.
    """
    rot = a[:3, :3] @ b[:3, :3]
    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift > COMPOSE_DRIFT_TOL:
        rot = project_rotation(rot)
    return rt(rot, a[:3, :3] @ b[:3, 3] + a[:3, 3])


def inverse(t: np.ndarray) -> np.ndarray:
    """Inverse of a rigid transform: (R, t) -> (R^T, -R^T t)."""
    rot = t[:3, :3].T
    return rt(rot, -rot @ t[:3, 3])


def apply_transform(t: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to an (n, 3) array of points."""
    return points @ t[:3, :3].T + t[:3, 3]


def project_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest proper rotation to ``m`` (polar factor with det forced to +1)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_defect(r: np.ndarray) -> float:
    """Max-abs deviation of r^T r from the identity (0 for exact rotations)."""
    return float(np.abs(r.T @ r - np.eye(3)).max())


def expmap_so3(v: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: exp(skew(v)) for an unnormalized axis-angle v.

    R = I + a*K + b*K^2 with K = skew(v), a = sin|v|/|v|, b = (1-cos|v|)/|v|^2.
    a and b go through Taylor series below EXP_SERIES_SWITCH, so v = 0 maps
    exactly to the identity.
    """
    v = np.asarray(v, dtype=float)
    sq = float(v @ v)
    if sq < EXP_SERIES_SWITCH**2:
        a = 1.0 - sq / 6.0 + sq * sq / 120.0
        b = 0.5 - sq / 24.0 + sq * sq / 720.0
    else:
        angle = np.sqrt(sq)
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / sq
    k = skew(v)
    return np.eye(3) + a * k + b * (k @ k)


def logmap_so3(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix.

    Main branch: angle = arccos((tr(R) - 1) / 2) with the argument clamped
    to [-1, 1] (evaluated through atan2 for end-of-range stability), axis
    from the skew part scaled by angle / (2 sin angle).  Near the identity
    (angle < LOG_SMALL_ANGLE) the first-order skew extraction
    0.5 * [R32-R23, R13-R31, R21-R12] is used.  Within LOG_NEAR_PI of pi the
    axis is recovered from the dominant diagonal of (R + I)/2, with signs
    disambiguated against the skew part.
    """
    s = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos_angle = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    sin_angle = min(float(np.linalg.norm(s)) / 2.0, 1.0)
    # atan2(sin, cos) equals arccos(cos) on [0, pi] but keeps full precision
    # at both ends, where arccos alone loses half its digits.
    angle = float(np.arctan2(sin_angle, cos_angle))
    if angle < LOG_SMALL_ANGLE:
        return 0.5 * s
    if np.pi - angle < LOG_NEAR_PI:
        # R ~ 2 a a^T - I at pi, so (R + I)/2 ~ a a^T: the largest diagonal
        # entry gives one component robustly, the matching row the others.
        # Symmetrizing first drops the skew contamination of the axis from
        # O(pi - angle) to O((pi - angle)^2).
        outer = ((r + r.T) / 2.0 + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(outer)))
        axis = outer[k] / np.sqrt(max(outer[k, k], np.finfo(float).tiny))
        axis = axis / np.linalg.norm(axis)
        if axis @ s < 0.0:  # keep consistency with the skew part while sin > 0
            axis = -axis
        return angle * axis
    # |s| = 2 sin(angle) identically, so angle * s/|s| evaluates the textbook
    # (angle / (2 sin angle)) * s without dividing by a vanishing sine.
    return angle * (s / np.linalg.norm(s))


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle between two rotations: arccos((tr(a^T b) - 1) / 2).

    Evaluated as atan2(|skew part|/2, (tr - 1)/2), which is the same function
    on SO(3) but keeps full precision at both ends of [0, pi]; plain arccos
    quantizes small angles to multiples of ~2e-8 and would floor any cost
    built on top of this distance.
    """
    q = a.T @ b
    s = np.array([q[2, 1] - q[1, 2], q[0, 2] - q[2, 0], q[1, 0] - q[0, 1]])
    cos_angle = (np.trace(q) - 1.0) / 2.0
    sin_angle = float(np.linalg.norm(s)) / 2.0
    return float(np.arctan2(sin_angle, cos_angle))


def right_jacobian_so3(v: np.ndarray) -> np.ndarray:
    """Right Jacobian of the exponential: exp(v + d) ~ exp(v) exp(skew(Jr d)).

    Jr(v) = I - c1*K + c2*K^2 with K = skew(v), c1 = (1-cos|v|)/|v|^2,
    c2 = (|v|-sin|v|)/|v|^3; Taylor series below EXP_SERIES_SWITCH.
    """
    v = np.asarray(v, dtype=float)
    sq = float(v @ v)
    if sq < EXP_SERIES_SWITCH**2:
        c1 = 0.5 - sq / 24.0 + sq * sq / 720.0
        c2 = 1.0 / 6.0 - sq / 120.0 + sq * sq / 5040.0
    else:
        angle = np.sqrt(sq)
        c1 = (1.0 - np.cos(angle)) / sq
        c2 = (angle - np.sin(angle)) / (sq * angle)
    k = skew(v)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def compensated_sum(arrays: list[np.ndarray]) -> np.ndarray:
    """Kahan-compensated elementwise sum over a canonically ordered list.

    Summands are sorted by their flattened values before accumulation, so
    the result is bit-identical under any permutation of the input.
    """
    ordered = sorted(arrays, key=lambda a: tuple(a.ravel().tolist()))
    total = np.zeros_like(ordered[0], dtype=float)
    carry = np.zeros_like(total)
    for a in ordered:
        y = a - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total


def average_se3(transforms: list[np.ndarray]) -> np.ndarray:
    """Mean of rigid transforms: arithmetic translation mean plus the
    chordal rotation mean (sum of rotation matrices projected back onto
    SO(3) through its polar factor).

    Raises AverageError on an empty list ("empty average") and when the
    summed rotation matrix is rank-deficient ("ill-conditioned rotation
    average"), which happens for antipodal inputs with no meaningful mean.
    """
    if not transforms:
        raise AverageError("empty average")
    n = len(transforms)
    mean_rot = compensated_sum([t[:3, :3] for t in transforms]) / n
    mean_trans = compensated_sum([t[:3, 3] for t in transforms]) / n
    u, sv, vt = np.linalg.svd(mean_rot)
    if sv[-1] < AVERAGE_RANK_TOL:
        raise AverageError("ill-conditioned rotation average")
    d = np.sign(np.linalg.det(u @ vt))
    return rt(u @ np.diag([1.0, 1.0, d]) @ vt, mean_trans)
