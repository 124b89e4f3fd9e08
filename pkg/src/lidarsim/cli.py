"""Command-line entry points.

Subcommands: `sim` (record a sequence), `serve` (interactive websocket
session), `eval ape|rpe|normals` (trajectory/normal evaluation with report
files), `scene validate`, and `replay` (re-render a recorded command log).
Exit codes: 0 success, 1 usage error, 2 runtime failure. All randomness
flows from --seed; omitting it means seed 0, never wall clock.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .control import load_path_points
from .engine import ConfigError, config_from_dict, load_run_config, run
from .evaluator import (
    EvaluationError,
    Trajectory,
    ape,
    load_normal_frames,
    plane_normal_error,
    rpe,
)
from .reporting import (
    format_stats,
    plot_normal_error_series,
    write_batch_table,
    write_metric_report,
)
from .scene import SceneError, inspect_scene, resolve_scene_path
from .store import BundleError, accumulate_world_cloud, read_bundle


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    p = _Parser(prog="lidarsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lidarsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run a simulation and record a sequence bundle")
    sim.add_argument("--config", required=True, help="run-config JSON file")
    sim.add_argument("--out", help="output bundle directory (overrides config)")
    sim.add_argument("--seed", type=int, help="RNG seed (default: config value or 0)")
    sim.add_argument("--duration", type=float, help="simulated seconds (overrides config)")
    sim.add_argument("--mode", choices=["teleop", "track", "scripted"])
    sim.add_argument("--path", help=".path.json waypoint file (track mode)")
    sim.add_argument("--threads", type=int, help="sensor worker threads (capped by LIDARSIM_THREADS)")

    srv = sub.add_parser("serve", help="run an interactive session with a websocket front door")
    srv.add_argument("--config", required=True)
    srv.add_argument("--listen", default="127.0.0.1:8765", help="bind address host:port")
    srv.add_argument("--out", help="directory for recordings (cmd_run record)")

    ev = sub.add_parser("eval", help="evaluate trajectories or normal estimates")
    evsub = ev.add_subparsers(dest="metric", required=True)

    ape_p = evsub.add_parser("ape", help="absolute pose error vs a reference trajectory")
    ape_p.add_argument("--est", required=True, help="estimate TUM file, or a directory of them")
    ape_p.add_argument("--ref", required=True, help="reference TUM file (e.g. ground_truth.txt)")
    ape_p.add_argument("--align", default="none", choices=["none", "se3", "sim3"])
    ape_p.add_argument("--max-dt", type=float, default=0.01, help="association window, s")
    ape_p.add_argument("--out", help="report directory (series CSV, summary, figures)")

    rpe_p = evsub.add_parser("rpe", help="relative pose error over fixed-delta pose pairs")
    rpe_p.add_argument("--est", required=True)
    rpe_p.add_argument("--ref", required=True)
    rpe_p.add_argument("--delta", type=float, default=1.0)
    rpe_p.add_argument("--delta-unit", default="frames", choices=["frames", "seconds"])
    rpe_p.add_argument("--max-dt", type=float, default=0.01)
    rpe_p.add_argument("--out")

    nrm = evsub.add_parser("normals", help="plane-normal error vs an error-free reference cloud")
    nrm.add_argument("--est", required=True, help="CSV: t,px,py,pz,nx,ny,nz grouped by frame")
    src = nrm.add_mutually_exclusive_group(required=True)
    src.add_argument("--gt-cloud", help="reference cloud as whitespace x y z rows")
    src.add_argument("--gt-bundle", help="noise-free sequence bundle to accumulate")
    nrm.add_argument("--k", type=int, default=5, help="neighbors per plane fit")
    nrm.add_argument("--radius", type=float, default=1.0, help="neighbor search radius, m")
    nrm.add_argument("--out")

    sc = sub.add_parser("scene", help="scene file tools")
    scsub = sc.add_subparsers(dest="action", required=True)
    val = scsub.add_parser("validate", help="check a scene file and print its census")
    val.add_argument("--scene", required=True, help="scene file path or bundled scene name")

    rp = sub.add_parser("replay", help="re-render a recorded bundle's command log")
    rp.add_argument("--bundle", required=True, help="existing bundle directory")
    rp.add_argument("--out", required=True, help="new bundle directory")
    return p


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_sim(args) -> int:
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.duration is not None:
        overrides["duration"] = args.duration
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.path is not None:
        overrides["path_points"] = load_path_points(args.path)
    if args.threads is not None:
        overrides["workers"] = args.threads
    cfg = load_run_config(args.config, **overrides)
    res = run(cfg)
    print(
        f"wrote {res.out_dir}: frames={res.frame_count} ground_truth={res.gt_count} "
        f"imu={res.imu_count} sim_time={res.sim_time:.3f}s path_length={res.path_length:.3f}m"
        + (" (tracker finished)" if res.finished_early else "")
    )
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    host, _, port = args.listen.rpartition(":")
    cfg = load_run_config(args.config, **({"out_dir": args.out} if args.out else {}))
    print(f"serving on ws://{host or '127.0.0.1'}:{port} (ctrl-c to stop)")
    serve(cfg, host or "127.0.0.1", int(port))
    return 0


def _eval_ape_one(est_path: Path, ref: Trajectory, args, rows: list) -> None:
    est = Trajectory.from_tum(est_path)
    res = ape(est, Trajectory.from_tum(args.ref) if isinstance(ref, str) else ref,
              align=args.align, max_dt=args.max_dt)
    print(f"{est_path.name}: {format_stats(res.stats)}")
    rows.append({
        "sequence": Path(args.ref).parent.name or str(args.ref),
        "estimate": est_path.name,
        "metric": "ape",
        "align": args.align,
        "samples": len(res.errors),
        **res.stats.as_dict(),
    })
    if args.out:
        ref_traj = ref if isinstance(ref, Trajectory) else Trajectory.from_tum(ref)
        write_metric_report(res, args.out, name=f"ape_{est_path.stem}", ref=ref_traj, est=est)


def _cmd_eval_ape(args) -> int:
    ref = Trajectory.from_tum(args.ref)
    est_path = Path(args.est)
    rows: list = []
    if est_path.is_dir():
        files = sorted(est_path.glob("*.txt"))
        if not files:
            raise EvaluationError(f"no .txt estimate files in {est_path}")
        for f in files:
            _eval_ape_one(f, ref, args, rows)
        if args.out:
            write_batch_table(rows, Path(args.out) / "summary.csv")
    else:
        _eval_ape_one(est_path, ref, args, rows)
    return 0


def _cmd_eval_rpe(args) -> int:
    est = Trajectory.from_tum(args.est)
    ref = Trajectory.from_tum(args.ref)
    delta = int(args.delta) if args.delta_unit == "frames" else args.delta
    res = rpe(est, ref, delta=delta, delta_unit=args.delta_unit, max_dt=args.max_dt)
    print(f"{Path(args.est).name}: {format_stats(res.stats)}")
    if args.out:
        write_metric_report(res, args.out, name=f"rpe_{Path(args.est).stem}", ref=ref, est=est)
    return 0


def _cmd_eval_normals(args) -> int:
    frames = load_normal_frames(args.est)
    if args.gt_cloud:
        cloud = np.loadtxt(args.gt_cloud, ndmin=2)
        if cloud.shape[1] != 3:
            raise EvaluationError(f"{args.gt_cloud}: expected 3 columns")
    else:
        cloud = accumulate_world_cloud(read_bundle(args.gt_bundle), max_points=2_000_000)
    res = plane_normal_error(frames, cloud, k=args.k, radius=args.radius)
    total = float(res.frame_error.sum())
    print(
        f"{Path(args.est).name}: frames={len(res.t)} total_error={total:.6f} "
        f"peak={res.frame_error.max():.6f} skipped={int(res.skipped.sum())}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "normals_series.csv", "w") as fh:
            fh.write("t,frame_error,points,skipped\n")
            for i in range(len(res.t)):
                fh.write(f"{res.t[i]:.9f},{res.frame_error[i]:.9f},"
                         f"{res.point_counts[i]},{res.skipped[i]}\n")
        plot_normal_error_series(res.t, res.frame_error, out / "normals_series.png")
        with open(out / "normals_summary.json", "w") as fh:
            json.dump({
                "frames": len(res.t),
                "total_error": total,
                "peak_error": float(res.frame_error.max()),
                "skipped": int(res.skipped.sum()),
                "k": args.k,
                "radius": args.radius,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_scene_validate(args) -> int:
    try:
        path = resolve_scene_path(args.scene)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    scene, report = inspect_scene(path)
    print(f"scene: {report.name}")
    print(f"objects: {report.object_count} (movers: {report.mover_count}, "
          f"triangles: {report.triangle_count})")
    for kind in sorted(report.kinds):
        print(f"  {kind}: {report.kinds[kind]}")
    if report.violations:
        print(f"violations ({len(report.violations)}):")
        for v in report.violations:
            print(f"  - {v}")
        return 2
    print("valid")
    return 0


def _cmd_replay(args) -> int:
    bundle = read_bundle(args.bundle, check_hashes=False)
    doc = bundle.manifest.get("config")
    if not doc:
        raise BundleError(f"{args.bundle}: manifest carries no config to replay")
    overrides = {"out_dir": args.out}
    if bundle.commands is not None and len(bundle.commands):
        overrides.update(mode="scripted", commands=bundle.commands)
    cfg = config_from_dict(doc, base_dir=Path(args.bundle), **overrides)
    res = run(cfg)
    print(f"replayed into {res.out_dir}: frames={res.frame_count} sim_time={res.sim_time:.3f}s")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "sim":
            return _cmd_sim(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "eval":
            if args.metric == "ape":
                return _cmd_eval_ape(args)
            if args.metric == "rpe":
                return _cmd_eval_rpe(args)
            return _cmd_eval_normals(args)
        if args.command == "scene":
            return _cmd_scene_validate(args)
        if args.command == "replay":
            return _cmd_replay(args)
        parser.error(f"unknown command {args.command!r}")
        return 1
    except (ConfigError, SceneError, BundleError, EvaluationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
