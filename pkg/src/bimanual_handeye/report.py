"""Calibration report assembly, canonical serialization, and figures.

The JSON report must be byte-identical across runs on identical inputs, so
floats are serialized with a fixed 17-significant-digit format through a
small canonical writer instead of json.dumps (whose float repr is stable but
whose layout we want pinned independently of library version).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, lie
from .capture import CalibrationProblem, relative_cam, relative_ee
from .frames import CalibrationSolution, printed_relative_average, view_closures
from .pipeline import CalibrationResult

SCHEMA_VERSION = 1


def format_float(x: float) -> str:
    """17-significant-digit decimal that round-trips any float64."""
    out = format(float(x), ".17g")
    if "." not in out and "e" not in out and "n" not in out and "f" not in out:
        out += ".0"
    return out


def _canonical(node) -> str:
    if isinstance(node, dict):
        items = ", ".join(f'"{k}": {_canonical(v)}' for k, v in node.items())
        return "{" + items + "}"
    if isinstance(node, (list, tuple)):
        return "[" + ", ".join(_canonical(v) for v in node) + "]"
    if isinstance(node, bool) or node is None:
        return {True: "true", False: "false", None: "null"}[node]
    if isinstance(node, (int, np.integer)):
        return str(int(node))
    if isinstance(node, (float, np.floating)):
        return format_float(node)
    if isinstance(node, str):
        return '"' + node.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {type(node).__name__}")


def canonical_json(node) -> str:
    return _canonical(node) + "\n"


def matrix_rows(t: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(t, dtype=float)]


def manifest_digest(manifest_path) -> str:
    digest = hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


@dataclass
class CalibrationReport:
    """Everything cmd_calibrate knows about one run.

    timing_seconds is kept on the object for operator feedback but excluded
    from the serialized report: a wall-clock field would break the
    byte-identity guarantee.
    """

    solution: CalibrationSolution
    result: CalibrationResult
    options_used: dict
    view_counts: dict
    tool_version: str
    input_digest: str
    timing_seconds: float
    debug_printed_average: dict | None = None

    def to_dict(self) -> dict:
        s = self.solution
        body = {
            "schema_version": SCHEMA_VERSION,
            "tool": {"name": "bimanual-handeye", "version": self.tool_version},
            "manifest_digest": self.input_digest,
            "units": {"angles": "radians", "lengths": "meters", "scale": "unitless"},
            "options": self.options_used,
            "view_counts": self.view_counts,
            "solution": {
                "extrinsic_1": matrix_rows(s.extrinsic_1),
                "extrinsic_2": matrix_rows(s.extrinsic_2),
                "scale": float(s.scale),
                "world_to_base_1": matrix_rows(s.world_to_base_1),
                "world_to_base_2": matrix_rows(s.world_to_base_2),
                "base_1_to_base_2": matrix_rows(s.base_1_to_base_2),
                "residual_rot": float(s.residual_rot),
                "residual_trans": float(s.residual_trans),
                "per_view_closure_spread": {
                    arm: {k: float(v) for k, v in spread.items()}
                    for arm, spread in s.per_view_closure_spread.items()
                },
            },
            "initial": {
                "scale": float(self.result.initial.scale),
                "conditioning": {
                    k: float(v) for k, v in self.result.initial.conditioning.items()
                },
            },
            "refinement": self._refinement_dict(),
        }
        if self.debug_printed_average is not None:
            body["debug"] = self.debug_printed_average
        return body

    def _refinement_dict(self) -> dict:
        r = self.result.refinement
        if r is None:
            return {"enabled": False}
        return {
            "enabled": True,
            "converged": bool(r.converged),
            "iterations_used": int(r.iterations_used),
            "initial_cost": float(r.cost_trace[0][1]),
            "final_cost": float(r.cost_trace[-1][1]),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def build_report(
    problem: CalibrationProblem,
    result: CalibrationResult,
    input_digest: str,
    timing_seconds: float,
    debug_printed_average: bool = False,
) -> CalibrationReport:
    opts = problem.options
    debug = None
    if debug_printed_average:
        debug = {
            "printed_relative_average_1": matrix_rows(
                printed_relative_average(
                    problem.primary, result.solution.extrinsic_1, result.solution.scale
                )
            ),
            "printed_relative_average_2": matrix_rows(
                printed_relative_average(
                    problem.secondary, result.solution.extrinsic_2, result.solution.scale
                )
            ),
        }
    return CalibrationReport(
        solution=result.solution,
        result=result,
        options_used={
            "alpha": float(opts.alpha),
            "confidence_threshold": float(opts.confidence_threshold),
            "gd_max_iters": int(opts.gd_max_iters),
            "gd_step": float(opts.gd_step),
            "gd_tol": float(opts.gd_tol),
            "refine_enabled": bool(opts.refine_enabled),
        },
        view_counts={
            "arm_1": problem.primary.n_views,
            "arm_2": problem.secondary.n_views,
        },
        tool_version=__version__,
        input_digest=input_digest,
        timing_seconds=timing_seconds,
        debug_printed_average=debug,
    )


# --- report directory: delimited tables + rendered figures ---------------------


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )


def _per_pair_residuals(problem: CalibrationProblem, solution) -> list[list]:
    rows = []
    for cs, x in ((problem.primary, solution.extrinsic_1), (problem.secondary, solution.extrinsic_2)):
        for k, (rel_e, rel_c) in enumerate(
            zip(relative_ee(cs), relative_cam(cs, solution.scale))
        ):
            lhs = lie.compose(rel_e, x)
            rhs = lie.compose(x, rel_c)
            rows.append(
                [
                    cs.arm_id,
                    k,
                    lie.geodesic_distance(lhs[:3, :3], rhs[:3, :3]),
                    float(np.linalg.norm(lhs[:3, 3] - rhs[:3, 3])),
                ]
            )
    return rows


def _per_view_closures(problem: CalibrationProblem, solution) -> list[list]:
    rows = []
    for cs, x, mean in (
        (problem.primary, solution.extrinsic_1, solution.world_to_base_1),
        (problem.secondary, solution.extrinsic_2, solution.world_to_base_2),
    ):
        for i, c in enumerate(view_closures(cs, x, solution.scale)):
            rows.append(
                [
                    cs.arm_id,
                    i,
                    lie.geodesic_distance(c[:3, :3], mean[:3, :3]),
                    float(np.linalg.norm(c[:3, 3] - mean[:3, 3])),
                ]
            )
    return rows


def write_report_dir(
    report: CalibrationReport, problem: CalibrationProblem, out_dir
) -> list[str]:
    """Render cost trace, closure deviations, and residuals as CSV + PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    trace = (
        report.result.refinement.cost_trace
        if report.result.refinement is not None
        else [(0, float("nan"))]
    )
    _write_csv(out / "cost_trace.csv", ["iteration", "cost"], [list(p) for p in trace])
    fig, ax = plt.subplots(figsize=(6, 4))
    iters = [p[0] for p in trace]
    costs = [p[1] for p in trace]
    if report.result.refinement is not None:
        ax.semilogy(iters, costs, marker=".", linewidth=1)
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("chain cost")
    ax.set_title("refinement cost trace")
    fig.tight_layout()
    fig.savefig(out / "cost_trace.png", dpi=110)
    plt.close(fig)
    written += ["cost_trace.csv", "cost_trace.png"]

    closures = _per_view_closures(problem, report.solution)
    _write_csv(
        out / "closures.csv",
        ["arm_id", "view", "rot_deviation", "trans_deviation"],
        closures,
    )
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for arm, color in ((1, "tab:blue"), (2, "tab:orange")):
        rows = [r for r in closures if r[0] == arm]
        axes[0].plot([r[1] for r in rows], [r[2] for r in rows], marker="o", color=color, label=f"arm {arm}")
        axes[1].plot([r[1] for r in rows], [r[3] for r in rows], marker="o", color=color, label=f"arm {arm}")
    axes[0].set_xlabel("view")
    axes[0].set_ylabel("rotation deviation (rad)")
    axes[1].set_xlabel("view")
    axes[1].set_ylabel("translation deviation (m)")
    axes[0].legend()
    fig.suptitle("per-view closure deviation from the mean")
    fig.tight_layout()
    fig.savefig(out / "closures.png", dpi=110)
    plt.close(fig)
    written += ["closures.csv", "closures.png"]

    residual_rows = _per_pair_residuals(problem, report.solution)
    _write_csv(
        out / "residuals.csv",
        ["arm_id", "pair", "rot_residual", "trans_residual"],
        residual_rows,
    )
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for arm, color in ((1, "tab:blue"), (2, "tab:orange")):
        rows = [r for r in residual_rows if r[0] == arm]
        axes[0].plot([r[1] for r in rows], [r[2] for r in rows], marker="o", color=color, label=f"arm {arm}")
        axes[1].plot([r[1] for r in rows], [r[3] for r in rows], marker="o", color=color, label=f"arm {arm}")
    axes[0].set_xlabel("consecutive pair")
    axes[0].set_ylabel("rotation residual (rad)")
    axes[1].set_xlabel("consecutive pair")
    axes[1].set_ylabel("translation residual (m)")
    axes[0].legend()
    fig.suptitle("per-pair chain residuals")
    fig.tight_layout()
    fig.savefig(out / "residuals.png", dpi=110)
    plt.close(fig)
    written += ["residuals.csv", "residuals.png"]
    return written
