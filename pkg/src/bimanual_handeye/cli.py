"""Command-line entry points.

Exit codes: 0 success, 1 I/O or schema problems, 2 solver degeneracy. The
calibration report is written as canonical JSON so identical inputs produce
byte-identical files; timing goes to stderr only.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import cloud as cloud_mod
from . import pipeline, report, synth
from .capture import SolverOptions, load_problem
from .errors import ManifestError, SolverError


def _solver_options(args) -> SolverOptions:
    return SolverOptions(
        alpha=args.alpha,
        confidence_threshold=args.confidence_threshold,
        gd_max_iters=args.gd_max_iters,
        gd_step=args.gd_step,
        gd_tol=args.gd_tol,
        refine_enabled=not args.no_refine,
    )


def cmd_calibrate(args) -> int:
    started = time.perf_counter()
    options = _solver_options(args)
    problem = load_problem(args.manifest, options)
    result = pipeline.calibrate(problem)
    elapsed = time.perf_counter() - started

    rep = report.build_report(
        problem,
        result,
        input_digest=report.manifest_digest(args.manifest),
        timing_seconds=elapsed,
        debug_printed_average=args.debug_printed_avg_form,
    )
    payload = rep.to_json()
    out_path = Path(args.out)
    out_path.write_text(payload)
    sys.stdout.write(payload)

    if args.cloud_out:
        fused = pipeline.metric_cloud(problem, result.solution)
        fused.write_ply(args.cloud_out)
        print(f"wrote {fused.count} points to {args.cloud_out}", file=sys.stderr)
    if args.report_dir:
        written = report.write_report_dir(rep, problem, args.report_dir)
        print(f"report files in {args.report_dir}: {', '.join(written)}", file=sys.stderr)
    print(f"calibrated {rep.view_counts['arm_1']}+{rep.view_counts['arm_2']} views "
          f"in {elapsed:.3f}s -> {out_path}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    if args.config == "-":
        config = synth.SceneConfig()
    else:
        config = synth.SceneConfig.from_json(args.config)
    scene = synth.generate(config, args.seed)
    manifest = synth.emit_manifest(scene, args.outdir)
    print(manifest)
    return 0


def cmd_validate_scale(args) -> int:
    try:
        calib = json.loads(Path(args.calibration).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read calibration report: {exc}") from exc
    scale = calib.get("solution", {}).get("scale")
    if not isinstance(scale, (int, float)) or scale <= 0:
        raise ManifestError("calibration report carries no positive scale")
    fused = cloud_mod.MetricCloud.read_ply(args.cloud)
    try:
        pairs = json.loads(Path(args.pairs).read_text())["pairs"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ManifestError(f"cannot read point-pair list: {exc}") from exc

    errors = []
    lines = ["index_a,index_b,real_length,measured_length,error_fraction"]
    for pair in pairs:
        a, b = int(pair["index_a"]), int(pair["index_b"])
        if not (0 <= a < fused.count and 0 <= b < fused.count):
            raise ManifestError(f"pair ({a}, {b}) indexes outside the cloud")
        measured = float(np.linalg.norm(fused.points[a] - fused.points[b]))
        err = cloud_mod.scale_error(measured, float(pair["real_length"]))
        errors.append(err)
        lines.append(
            ",".join(
                [
                    str(a),
                    str(b),
                    report.format_float(float(pair["real_length"])),
                    report.format_float(measured),
                    report.format_float(err),
                ]
            )
        )
    lines.append(f"median,,,,{report.format_float(float(np.median(errors)))}")
    lines.append(f"max,,,,{report.format_float(float(np.max(errors)))}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_residuals(args) -> int:
    problem = load_problem(args.manifest)
    try:
        calib = json.loads(Path(args.calibration).read_text())["solution"]
        solution = _solution_view(calib)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"cannot read calibration report: {exc}") from exc
    from .frames import residuals as chain_residuals

    rot, trans = chain_residuals(problem, solution)
    sys.stdout.write(
        report.canonical_json({"residual_rot": rot, "residual_trans": trans})
    )
    return 0


class _solution_view:
    """The three solution fields residuals() needs, lifted from report JSON."""

    def __init__(self, solution_dict):
        self.extrinsic_1 = np.array(solution_dict["extrinsic_1"], dtype=float)
        self.extrinsic_2 = np.array(solution_dict["extrinsic_2"], dtype=float)
        self.scale = float(solution_dict["scale"])
        if self.extrinsic_1.shape != (4, 4) or self.extrinsic_2.shape != (4, 4):
            raise ValueError("extrinsics must be 4x4 matrices")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bimanual-handeye",
        description="Marker-free bimanual hand-eye calibration from robot poses "
        "and unscaled multi-view reconstructions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="solve a two-arm manifest")
    cal.add_argument("manifest")
    cal.add_argument("--out", default="calibration.json")
    cal.add_argument("--alpha", type=float, default=0.5)
    cal.add_argument("--confidence-threshold", type=float, default=1.5)
    cal.add_argument("--no-refine", action="store_true")
    cal.add_argument("--gd-max-iters", type=int, default=2000)
    cal.add_argument("--gd-step", type=float, default=1e-2)
    cal.add_argument("--gd-tol", type=float, default=1e-10)
    cal.add_argument("--cloud-out", default=None)
    cal.add_argument("--report-dir", default=None)
    cal.add_argument("--debug-printed-avg-form", action="store_true")
    cal.set_defaults(func=cmd_calibrate)

    syn = sub.add_parser("synth", help="generate a synthetic capture")
    syn.add_argument("config", help="SceneConfig JSON path, or - for defaults")
    syn.add_argument("outdir")
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=cmd_synth)

    val = sub.add_parser("validate-scale", help="object-dimension scale errors")
    val.add_argument("calibration")
    val.add_argument("cloud")
    val.add_argument("pairs")
    val.set_defaults(func=cmd_validate_scale)

    res = sub.add_parser("residuals", help="chain residuals of a saved solution")
    res.add_argument("manifest")
    res.add_argument("calibration")
    res.set_defaults(func=cmd_residuals)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
