"""End-to-end calibration: closed form, refinement, frame recovery, fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cloud as cloud_mod
from . import frames, initialize, refine as refine_mod
from .capture import CalibrationProblem, SolverOptions
from .cloud import MetricCloud
from .frames import CalibrationSolution
from .initialize import InitialSolution
from .refine import RefinedSolution


@dataclass
class CalibrationResult:
    """Final solution plus the intermediate solver stages that produced it."""

    solution: CalibrationSolution
    initial: InitialSolution
    refinement: RefinedSolution | None  # None when refinement was disabled


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Run the full pipeline on a two-arm capture at the problem's options."""
    opts = problem.options
    initial = initialize.solve_initial(problem)

    refinement = None
    stage = initial
    if opts.refine_enabled:
        refinement = refine_mod.refine(problem, initial, opts)
        stage = refinement

    world_to_base = {}
    spreads = {}
    for cs in problem.arms:
        extrinsic = stage.extrinsic(cs.arm_id)
        closures = frames.view_closures(cs, extrinsic, stage.scale)
        mean = frames.recover_world_to_base(cs, extrinsic, stage.scale)
        world_to_base[cs.arm_id] = mean
        spreads[cs.arm_id] = frames.closure_spread(closures, mean)

    residual = frames.residuals(problem, stage)
    for arm_id, spread in spreads.items():
        frames.check_dispersion(arm_id, spread, residual)

    solution = CalibrationSolution(
        extrinsic_1=stage.extrinsic(1),
        extrinsic_2=stage.extrinsic(2),
        scale=stage.scale,
        world_to_base_1=world_to_base[1],
        world_to_base_2=world_to_base[2],
        base_1_to_base_2=frames.base_to_base(world_to_base[1], world_to_base[2]),
        residual_rot=residual[0],
        residual_trans=residual[1],
        per_view_closure_spread={
            "arm_1": {"rot": spreads[1][0], "trans": spreads[1][1]},
            "arm_2": {"rot": spreads[2][0], "trans": spreads[2][1]},
        },
    )
    return CalibrationResult(solution=solution, initial=initial, refinement=refinement)


def metric_cloud(problem: CalibrationProblem, solution: CalibrationSolution) -> MetricCloud:
    """Fused metric cloud in the primary base frame.

    Views are fused in canonical order — arm 1 ascending view index, then
    arm 2 — so the output is deterministic. Views without point maps are
    skipped; all points pass through world_to_base_1 (the shared frame maps
    into the primary base regardless of which arm observed the points).
    """
    threshold = problem.options.confidence_threshold
    pieces = []
    for cs in problem.arms:
        for view_id, pm in enumerate(cs.point_maps):
            if pm is None:
                continue
            kept = cloud_mod.filter_by_confidence(pm, threshold)
            pieces.append(
                cloud_mod.to_metric_frame(
                    kept,
                    solution.scale,
                    solution.world_to_base_1,
                    arm_id=cs.arm_id,
                    view_id=view_id,
                )
            )
    return cloud_mod.fuse(pieces)
