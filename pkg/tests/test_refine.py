import numpy as np
import pytest

from bimanual_handeye import lie, refine, synth
from bimanual_handeye.capture import (
    CalibrationProblem,
    CaptureSet,
    SolverOptions,
    relative_cam,
    relative_ee,
)
from bimanual_handeye.errors import NonFiniteCostError
from bimanual_handeye.initialize import InitialSolution, solve_initial
from helpers import random_rotation, random_transform


def noiseless_problem(seed=0, views=(6, 6)):
    scene = synth.generate(synth.SceneConfig(views_per_arm=views), seed)
    return scene, CalibrationProblem(scene.primary, scene.secondary)


def noisy_problem(seed, rot_sigma=0.01, trans_sigma=0.01, views=(6, 6)):
    cfg = synth.SceneConfig(
        views_per_arm=views,
        noise=synth.NoiseSpec(rot_sigma=rot_sigma, trans_sigma=trans_sigma),
    )
    scene = synth.generate(cfg, seed)
    return scene, CalibrationProblem(scene.primary, scene.secondary)


def truth_params(scene):
    t = scene.truth
    return refine.pack_params(t.extrinsic_1, t.extrinsic_2, t.scale)


def perturbed(scene, rng, rot=0.05, trans=0.005, scale_factor=1.02):
    t = scene.truth
    out = []
    for x in (t.extrinsic_1, t.extrinsic_2):
        axis = rng.normal(size=3)
        axis *= rot / np.linalg.norm(axis)
        bumped = x.copy()
        bumped[:3, :3] = lie.expmap_so3(axis) @ x[:3, :3]
        bumped[:3, 3] = x[:3, 3] + rng.normal(size=3) * trans
        out.append(bumped)
    return out[0], out[1], t.scale * scale_factor


# --- cost ---------------------------------------------------------------------


def test_cost_zero_at_ground_truth():
    scene, problem = noiseless_problem()
    t = scene.truth
    value = refine.cost(problem, t.scale, t.extrinsic_1, t.extrinsic_2, alpha=0.5)
    assert value < 1e-9


def test_cost_alpha_one_equals_mean_rotation_discrepancy():
    """At alpha=1 the cost is the mean geodesic mismatch of the chain rotations."""
    scene, problem = noiseless_problem(seed=3)
    t = scene.truth
    rng = np.random.default_rng(7)
    x1, x2, scale = perturbed(scene, rng, rot=0.08, trans=0.0, scale_factor=1.0)

    expected = []
    for cs, x in ((problem.primary, x1), (problem.secondary, x2)):
        dists = [
            lie.geodesic_distance(
                (rel_e @ x)[:3, :3], (x @ rel_c)[:3, :3]
            )
            for rel_e, rel_c in zip(relative_ee(cs), relative_cam(cs, scale))
        ]
        expected.append(np.mean(dists))
    value = refine.cost(problem, scale, x1, x2, alpha=1.0)
    assert abs(value - float(np.sum(expected))) < 1e-12


def test_cost_alpha_zero_ignores_rotation_error():
    """Cameras rotating in place: zero cam translations make the translation
    part blind to a pure rotation perturbation of the extrinsic."""
    rng = np.random.default_rng(11)
    n = 5
    x = random_transform(rng)
    x[:3, 3] = 0.0
    ee = [random_transform(rng) for _ in range(n)]
    cam = []
    for e in ee:
        p = np.eye(4)
        p[:3, :3] = x[:3, :3].T @ e[:3, :3] @ x[:3, :3]
        cam.append(p)
    # relative ee translations are nonzero, so only t of the extrinsic matters
    cs = CaptureSet(1, [f"v{i}" for i in range(n)], ee, cam)
    problem = CalibrationProblem(cs, cs)

    spun = x.copy()
    spun[:3, :3] = lie.expmap_so3(np.array([0.2, -0.1, 0.3])) @ x[:3, :3]
    base = refine.cost(problem, 1.0, x, x, alpha=0.0)
    rotated = refine.cost(problem, 1.0, spun, spun, alpha=0.0)
    assert abs(base - rotated) < 1e-12
    assert refine.cost(problem, 1.0, spun, spun, alpha=1.0) > 0.1


def test_cost_validates_inputs():
    scene, problem = noiseless_problem()
    t = scene.truth
    with pytest.raises(ValueError, match="alpha"):
        refine.cost(problem, t.scale, t.extrinsic_1, t.extrinsic_2, alpha=1.5)
    with pytest.raises(ValueError, match="scale"):
        refine.cost(problem, -1.0, t.extrinsic_1, t.extrinsic_2, alpha=0.5)


# --- gradient -----------------------------------------------------------------


def test_gradient_zero_at_ground_truth():
    scene, problem = noiseless_problem(seed=1)
    g = refine.gradient(problem, truth_params(scene), alpha=0.5)
    assert np.linalg.norm(g) < 1e-7


def central_difference(problem, params, alpha, h=1e-6):
    fd = np.zeros_like(params)
    for j in range(params.size):
        up, down = params.copy(), params.copy()
        up[j] += h
        down[j] -= h
        fu, _ = refine._evaluate(refine._chains(problem), up, alpha, False)
        fd_, _ = refine._evaluate(refine._chains(problem), down, alpha, False)
        fd[j] = (fu - fd_) / (2 * h)
    return fd


@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.5, 1.0])
def test_gradient_matches_central_difference(alpha):
    scene, problem = noisy_problem(seed=2)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x1, x2, scale = perturbed(scene, rng, rot=0.3, trans=0.05, scale_factor=1.1)
        params = refine.pack_params(x1, x2, scale)
        params += rng.normal(size=13) * 0.05
        analytic = refine.gradient(problem, params, alpha)
        fd = central_difference(problem, params, alpha)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(analytic - fd) / denom) < 1e-4


def test_gradient_alpha_one_scale_component_is_zero():
    """Pure-rotation cost cannot see the scale: its log-scale gradient is 0."""
    scene, problem = noisy_problem(seed=4)
    rng = np.random.default_rng(9)
    x1, x2, scale = perturbed(scene, rng)
    params = refine.pack_params(x1, x2, scale)
    g = refine.gradient(problem, params, alpha=1.0)
    assert g[12] == 0.0


# --- pack / unpack --------------------------------------------------------------


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(21)
    x1, x2 = random_transform(rng), random_transform(rng)
    params = refine.pack_params(x1, x2, 3.25)
    y1, y2, scale = refine.unpack_params(params)
    assert np.abs(y1 - x1).max() < 1e-12
    assert np.abs(y2 - x2).max() < 1e-12
    assert abs(scale - 3.25) < 1e-12


# --- descent ------------------------------------------------------------------


def test_refine_recovers_truth_from_perturbed_start():
    scene, problem = noiseless_problem(seed=6)
    rng = np.random.default_rng(13)
    x1, x2, scale = perturbed(scene, rng)
    init = InitialSolution(x1, x2, scale)
    result = refine.refine(problem, init, SolverOptions(gd_max_iters=3000))
    t = scene.truth
    assert lie.geodesic_distance(result.extrinsic_1[:3, :3], t.extrinsic_1[:3, :3]) < 1e-6
    assert np.abs(result.extrinsic_2[:3, 3] - t.extrinsic_2[:3, 3]).max() < 1e-7
    assert abs(result.scale - t.scale) / t.scale < 1e-7
    assert result.converged


def test_refine_from_exact_start_stays_put():
    scene, problem = noiseless_problem(seed=7)
    t = scene.truth
    init = InitialSolution(t.extrinsic_1, t.extrinsic_2, t.scale)
    result = refine.refine(problem, init)
    assert result.converged
    assert result.iterations_used <= 5
    assert np.abs(result.extrinsic_1 - t.extrinsic_1).max() < 1e-9
    assert abs(result.scale - t.scale) < 1e-9


def test_trace_monotone_and_never_worse_than_start():
    for seed in range(6):
        scene, problem = noisy_problem(seed)
        init = solve_initial(problem)
        result = refine.refine(problem, init, SolverOptions(gd_max_iters=300))
        costs = [c for _, c in result.cost_trace]
        assert all(b <= a for a, b in zip(costs[:-1], costs[1:]))
        assert costs[-1] <= costs[0]


def test_refined_rotations_stay_on_manifold():
    scene, problem = noisy_problem(seed=8)
    result = refine.refine(problem, solve_initial(problem), SolverOptions(gd_max_iters=200))
    for x in (result.extrinsic_1, result.extrinsic_2):
        r = x[:3, :3]
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9
        assert np.array_equal(x[3], [0.0, 0.0, 0.0, 1.0])


def test_non_finite_camera_pose_raises():
    scene, problem = noisy_problem(seed=9)
    problem.secondary.cam_poses[1][0, 3] = np.nan
    with pytest.raises(NonFiniteCostError, match="non-finite cost"):
        refine.refine(problem, InitialSolution(np.eye(4), np.eye(4), 1.0))


def test_refined_solution_rejects_increasing_trace():
    with pytest.raises(ValueError, match="non-increasing"):
        refine.RefinedSolution(
            np.eye(4), np.eye(4), 1.0,
            cost_trace=[(0, 1.0), (1, 2.0)],
            converged=True,
            iterations_used=1,
        )
