"""Gradient-descent refinement of both extrinsics and the shared scale.

The cost blends, per arm and consecutive-view pair, the geodesic distance
between the rotation parts and the Euclidean distance between the translation
parts of the two chain sides

    rel_ee_i @ X_m   versus   X_m @ rel_cam_i(scale)

weighted alpha and (1 - alpha) and averaged over pairs; the two arm means are
summed. Parameters live in a 13-vector

    [axis-angle_1 (3), t_1 (3), axis-angle_2 (3), t_2 (3), log scale (1)]

so every iterate is a valid pair of rigid transforms with a positive scale:
rotations are pulled into the Lie algebra by the log map, stepped as plain
Euclidean vectors, and pushed back through the exp map.

The gradient is exact (forward-mode through the exponential map's right
Jacobian), not finite differences. Both distance terms have kinks where they
vanish; the gradient uses the zero subgradient there, which is the correct
choice at an exact minimizer and leaves descent directions unaffected
elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lie
from .capture import CalibrationProblem, SolverOptions, relative_cam, relative_ee
from .errors import NonFiniteCostError
from .initialize import InitialSolution

# Armijo sufficient-decrease constant and backtracking shrink factor.
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 60
STEP_GROW = 2.0
EPS_INIT_CAP = 1e-1
EPS_FACTOR = 0.1
EPS_FLOOR = 1e-13

# Below these the rotation / translation distance terms sit at their kinks;
# the zero subgradient is used instead of the (unbounded) smooth formula.
ROTATION_KINK = 1e-7   # sin(theta)
TRANSLATION_KINK = 1e-12  # meters

# Consecutive accepted steps with relative decrease < gd_tol that count as
# convergence.
SMALL_STEP_RUN = 5


@dataclass
class RefinedSolution:
    """Refined extrinsics/scale plus the accepted-step cost history."""

    extrinsic_1: np.ndarray
    extrinsic_2: np.ndarray
    scale: float
    cost_trace: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        costs = [c for _, c in self.cost_trace]
        if any(b > a for a, b in zip(costs[:-1], costs[1:])):
            raise ValueError("cost trace must be non-increasing")

    def extrinsic(self, arm_id: int) -> np.ndarray:
        return self.extrinsic_1 if arm_id == 1 else self.extrinsic_2


@dataclass
class _ArmChain:
    """Stacked relative motions for one arm (camera translations unscaled)."""

    ee_rot: np.ndarray   # (K, 3, 3)
    ee_t: np.ndarray     # (K, 3)
    cam_rot: np.ndarray  # (K, 3, 3)
    cam_t: np.ndarray    # (K, 3)


def _chains(problem: CalibrationProblem) -> list[_ArmChain]:
    out = []
    for cs in problem.arms:
        rel_e = relative_ee(cs)
        rel_c = relative_cam(cs, 1.0)
        out.append(
            _ArmChain(
                ee_rot=np.array([t[:3, :3] for t in rel_e]),
                ee_t=np.array([t[:3, 3] for t in rel_e]),
                cam_rot=np.array([t[:3, :3] for t in rel_c]),
                cam_t=np.array([t[:3, 3] for t in rel_c]),
            )
        )
    return out


def pack_params(x1: np.ndarray, x2: np.ndarray, scale: float) -> np.ndarray:
    """Flatten two extrinsics and a scale into the 13-vector layout."""
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    return np.concatenate(
        [
            lie.logmap_so3(x1[:3, :3]),
            x1[:3, 3],
            lie.logmap_so3(x2[:3, :3]),
            x2[:3, 3],
            [np.log(scale)],
        ]
    )


def unpack_params(params: np.ndarray):
    """Inverse of pack_params: (extrinsic_1, extrinsic_2, scale)."""
    params = np.asarray(params, dtype=float)
    x1 = lie.rt(lie.expmap_so3(params[0:3]), params[3:6])
    x2 = lie.rt(lie.expmap_so3(params[6:9]), params[9:12])
    return x1, x2, float(np.exp(params[12]))


def _vee2(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def _arm_cost_grad(chain: _ArmChain, v, t, scale, alpha, want_grad, eps=0.0):
    """Cost contribution of one arm and, optionally, its gradient pieces.

    Returns (cost, grad_v, grad_t, grad_log_scale); gradient entries are None
    when want_grad is false. With eps > 0 each distance r is replaced by the
    smooth surrogate sqrt(r^2 + eps^2); eps = 0 reproduces the exact cost.
    """
    rot = lie.expmap_so3(v)
    a_rot, a_t = chain.ee_rot, chain.ee_t
    b_rot, b_t = chain.cam_rot, chain.cam_t
    n = len(a_t)

    left = np.einsum("kij,jl->kil", a_rot, rot)    # A_k X
    right = np.einsum("ij,kjl->kil", rot, b_rot)   # X B_k
    q = np.einsum("kji,kjl->kil", left, right)     # (A_k X)^T (X B_k)
    sin_angle = 0.5 * np.sqrt(
        (q[:, 2, 1] - q[:, 1, 2]) ** 2
        + (q[:, 0, 2] - q[:, 2, 0]) ** 2
        + (q[:, 1, 0] - q[:, 0, 1]) ** 2
    )
    cos_angle = 0.5 * (np.trace(q, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(sin_angle, cos_angle)
    smooth_theta = np.sqrt(theta * theta + eps * eps)

    cam_t_rot = b_t @ rot.T                        # X's rotation applied to b_k
    delta = a_t + np.einsum("kij,j->ki", a_rot, t) - t - scale * cam_t_rot
    dist = np.linalg.norm(delta, axis=1)
    smooth_dist = np.sqrt(dist * dist + eps * eps)

    cost = alpha * float(smooth_theta.mean()) + (1.0 - alpha) * float(smooth_dist.mean())
    if not want_grad:
        return cost, None, None, None

    # d(smooth_theta_k)/d(trace_k) = -theta_k / (2 sin theta_k sqrt(theta^2+eps^2));
    # zero subgradient at the kink (theta = 0 or pi), where the smooth formula
    # for d theta/d trace is unbounded
    rot_active = sin_angle > ROTATION_KINK
    rot_denom = np.where(rot_active, 2.0 * n * sin_angle * smooth_theta, 1.0)
    w_rot = np.where(rot_active, -alpha * theta / rot_denom, 0.0)
    # trace_k responds to a rotation perturbation dX via <dX, G_k> with
    # G_k = A_k^T X B_k + A_k X B_k^T
    g_terms = np.einsum("kji,kjl->kil", a_rot, right) + np.einsum(
        "kij,klj->kil", left, b_rot
    )
    w_matrix = np.einsum("k,kij->ij", w_rot, g_terms)

    # translation term: u_k = (1-alpha)/n * delta_k / sqrt(|delta_k|^2 + eps^2)
    # (zero at the eps = 0 kink)
    trans_active = smooth_dist > TRANSLATION_KINK
    safe = np.where(trans_active, smooth_dist, 1.0)
    u = delta * np.where(trans_active, (1.0 - alpha) / (n * safe), 0.0)[:, None]
    u_outer = np.einsum("ki,kj->ij", u, b_t)

    tangent = rot.T @ (w_matrix - scale * u_outer)
    grad_v = lie.right_jacobian_so3(v).T @ _vee2(tangent)
    grad_t = np.einsum("kij,ki->j", a_rot, u) - u.sum(axis=0)
    grad_log_scale = -scale * float(np.einsum("ki,ki->", u, cam_t_rot))
    return cost, grad_v, grad_t, grad_log_scale


def _evaluate(chains, params, alpha, want_grad, eps=0.0):
    x1_v, x1_t = params[0:3], params[3:6]
    x2_v, x2_t = params[6:9], params[9:12]
    scale = float(np.exp(params[12]))
    total = 0.0
    grad = np.zeros(13) if want_grad else None
    for offset, chain, v, t in ((0, chains[0], x1_v, x1_t), (6, chains[1], x2_v, x2_t)):
        cost, gv, gt, gs = _arm_cost_grad(chain, v, t, scale, alpha, want_grad, eps)
        total += cost
        if want_grad:
            grad[offset : offset + 3] = gv
            grad[offset + 3 : offset + 6] = gt
            grad[12] += gs
    return total, grad


def cost(problem: CalibrationProblem, scale: float, x1: np.ndarray, x2: np.ndarray, alpha: float) -> float:
    """Blended chain-commutation cost; zero iff both chains commute exactly."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    value, _ = _evaluate(_chains(problem), pack_params(x1, x2, scale), alpha, False)
    return value


def gradient(problem: CalibrationProblem, params: np.ndarray, alpha: float) -> np.ndarray:
    """Exact gradient of the cost in the 13-parameter tangent layout."""
    _, grad = _evaluate(_chains(problem), np.asarray(params, dtype=float), alpha, True)
    return grad


def refine(
    problem: CalibrationProblem,
    init: InitialSolution,
    opts: SolverOptions | None = None,
) -> RefinedSolution:
    """Graduated steepest descent with Armijo backtracking.

    The exact cost is a sum of distances, so it is cone-shaped around any
    point where a chain pair agrees; once one term bottoms out its kink
    walls off descent for the rest and plain monotone gradient descent
    stalls. The descent therefore runs in stages on the smooth surrogate
    that replaces every distance r with sqrt(r^2 + eps^2), with eps held an
    order of magnitude below the best exact cost reached so far and a final
    stage at eps = 0. Within a stage, each line search halves from a
    warm-started step until the sufficient-decrease test passes and grows
    it again after an accepted step, so the step tracks the local valley
    scale in both directions.

    The reported cost_trace records the exact cost each time it improves,
    and the returned parameters are the best exact-cost iterate, so the
    trace is non-increasing and never worse than the start. Converged
    means the final exact stage halted by itself: gradient norm below
    gd_tol, five consecutive accepted steps with relative decrease below
    gd_tol, or no positive step along the negative gradient decreasing the
    cost any further (the iterate sits at the numerical floor). It is
    false only when the total iteration budget ran out first.
    """
    opts = opts or SolverOptions()
    chains = _chains(problem)
    params = pack_params(init.extrinsic_1, init.extrinsic_2, init.scale)
    alpha = opts.alpha

    best_value, _ = _evaluate(chains, params, alpha, False)
    if not np.isfinite(best_value):
        raise NonFiniteCostError("non-finite cost during refinement")
    best_params = params.copy()
    trace = [(0, best_value)]
    converged = False
    iterations = 0
    step_init = opts.gd_step
    eps = min(EPS_INIT_CAP, best_value * EPS_FACTOR)

    while True:
        if eps < EPS_FLOOR:
            eps = 0.0
        value, grad = _evaluate(chains, params, alpha, True, eps)
        small_run = 0
        stage_halted = False
        while iterations < opts.gd_max_iters:
            grad_norm = float(np.linalg.norm(grad))
            if grad_norm < opts.gd_tol:
                stage_halted = True
                break
            step = step_init
            accepted = False
            for _ in range(MAX_BACKTRACKS):
                candidate = params - step * grad
                cand_value, _ = _evaluate(chains, candidate, alpha, False, eps)
                # a non-finite trial (e.g. scale overflow on a long step) is
                # a failed step, not corrupted input: shrink and retry
                if np.isfinite(cand_value) and cand_value <= value - ARMIJO_C * step * grad_norm * grad_norm:
                    accepted = True
                    break
                step *= ARMIJO_SHRINK
            if not accepted:
                stage_halted = True
                break
            step_init = step * STEP_GROW
            decrease = (value - cand_value) / max(value, np.finfo(float).tiny)
            params = candidate
            value = cand_value
            iterations += 1
            exact_value, _ = _evaluate(chains, params, alpha, False)
            if exact_value < best_value:
                best_value = exact_value
                best_params = params.copy()
                trace.append((iterations, best_value))
            if decrease < opts.gd_tol:
                small_run += 1
                if small_run >= SMALL_STEP_RUN:
                    stage_halted = True
                    break
            else:
                small_run = 0
            _, grad = _evaluate(chains, params, alpha, True, eps)
        if not stage_halted:
            break  # iteration budget exhausted mid-stage
        if eps == 0.0:
            converged = True
            break
        eps = min(eps, best_value) * EPS_FACTOR

    x1, x2, scale = unpack_params(best_params)
    return RefinedSolution(
        extrinsic_1=x1,
        extrinsic_2=x2,
        scale=scale,
        cost_trace=trace,
        converged=converged,
        iterations_used=iterations,
    )
