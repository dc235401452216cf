"""Command-line entry point: simulate, slam, raytrace, annotate, filter, eval, round.

Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline-stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .annotate import PipelineStageError, annotate_session, filter_frame, groundtruth_labels
from .config import PipelineConfig, add_config_arguments, config_from_args
from .core import (
    DegenerateInputError,
    InvalidParameterError,
    Manifest,
    PlyParseError,
    Pose,
    ensure_dir,
    read_manifest,
    read_trajectory,
    write_cloud,
    write_manifest,
    write_trajectory,
)
from .evaluation import (
    confusion,
    localization_error,
    write_boxplot_data,
    write_confusion_csv,
    write_json,
)
from .pointmap import PointMap, pointmap_slam, read_map, write_map
from .pointray import pointray_session, write_probability_ply, write_probability_report
from .simworld import SCENARIOS, TOURS, load_world, save_world, scenario_presets, simulate_session, tour

log = logging.getLogger("lidarannot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Shared helpers


def _write_frames(frames, out_dir: Path, prefix: str, poses=None, times=None, map_path=None) -> Path:
    names = []
    for i, frame in enumerate(frames):
        name = f"{prefix}_{i:04d}.ply"
        write_cloud(frame, out_dir / name)
        names.append(name)
    path = out_dir / "manifest.json"
    write_manifest(Manifest(names, poses, times, map_path), path)
    return path


def _start_pose(manifest: Manifest) -> Pose | None:
    return manifest.poses[0] if manifest.poses else None


def _truncate(traj, max_frames):
    return traj if max_frames is None else traj[:max_frames]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    world = load_world(args.world) if args.world else scenario_presets(args.scenario, args.seed)
    sensor = replace(cfg.sensor, noise_seed=args.seed) if cfg.sensor.noise_sigma > 0 else cfg.sensor
    session = simulate_session(world, sensor, _truncate(tour(args.tour, sensor.mount_height), args.max_frames))
    out = ensure_dir(args.out_dir)
    save_world(world, out / "world.json")
    _write_frames(session.frames, out, "frame", session.poses, session.times)
    log.info("simulate: %d frames written to %s", len(session.frames), out)
    return EXIT_OK


def cmd_slam(args, cfg: PipelineConfig) -> int:
    manifest = read_manifest(args.frames)
    init = read_map(args.init_map, cfg.dl_map) if args.init_map else None
    if args.localize_only and init is None:
        raise UsageError("--localize-only needs --init-map")
    res = pointmap_slam(
        manifest.load_frames(), init, cfg.icp, cfg.normals, args.seed, _start_pose(manifest),
        update_map=not args.localize_only, dl_map=cfg.dl_map,
    )
    if res.n_failed == len(res.trajectory):
        raise PipelineStageError("slam", "no frame could be localized")
    write_map(res.map, args.out_map)
    write_trajectory(res.trajectory, args.out_traj)
    log.info("slam: %d frames, %d failed, map of %d points", len(res.trajectory), res.n_failed, len(res.map))
    return EXIT_OK


def cmd_raytrace(args, cfg: PipelineConfig) -> int:
    point_map = read_map(args.map, cfg.dl_map)
    manifest = read_manifest(args.frames)
    poses = read_trajectory(args.traj) if args.traj else manifest.poses
    if poses is None:
        raise UsageError("frames manifest has no poses; pass --traj")
    report = pointray_session(point_map, manifest.load_frames(), poses, cfg.ray)
    write_probability_report(point_map, report.p_mov, args.out)
    if args.out_ply:
        write_probability_ply(point_map, report.p_mov, args.out_ply)
    if args.out_map:
        write_map(point_map, args.out_map)
    log.info("raytrace: %d frames used, %d skipped", report.frames_used, report.frames_skipped)
    return EXIT_OK


def cmd_annotate(args, cfg: PipelineConfig) -> int:
    init = read_map(args.init_map, cfg.dl_map)
    manifest = read_manifest(args.frames)
    ann = annotate_session(
        init, manifest.load_frames(), cfg.annotate, cfg.icp, cfg.normals, cfg.ray, args.seed, _start_pose(manifest)
    )
    out = ensure_dir(args.out_dir)
    write_map(ann.refined.map, out / "refined_map.ply")
    write_cloud(ann.buffer.as_cloud(), out / "buffer.ply")
    write_trajectory(ann.poses, out / "trajectory.json")
    _write_frames(ann.frames, out, "labeled", manifest.poses, manifest.times, "refined_map.ply")
    write_json(ann.counts, out / "counts.json")
    log.info("annotate: %s", ann.counts)
    return EXIT_OK


def cmd_filter(args, cfg: PipelineConfig) -> int:
    manifest = read_manifest(args.frames)
    frames = manifest.load_frames()
    if args.groundtruth:
        frames = [groundtruth_labels(f) for f in frames]
    out = ensure_dir(args.out_dir)
    filtered = [filter_frame(f, args.mode) for f in frames]
    _write_frames(filtered, out, "filtered", manifest.poses, manifest.times)
    log.info("filter: kept %d of %d points", sum(map(len, filtered)), sum(map(len, frames)))
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    if args.metric == "confusion":
        labeled = read_manifest(args.labeled).load_frames()
        gt = read_manifest(args.groundtruth).load_frames() if args.groundtruth else labeled
        cm = confusion(labeled, gt)
        write_json(cm.to_dict(), args.out)
        if args.csv:
            write_confusion_csv(cm, args.csv)
        return EXIT_OK
    est = read_trajectory(args.traj)
    gt_manifest = read_manifest(args.groundtruth)
    if gt_manifest.poses is None:
        raise InvalidParameterError("groundtruth manifest has no poses")
    rep = localization_error(est, gt_manifest.poses)
    write_json(rep.to_dict(), args.out)
    if args.boxplot:
        write_boxplot_data({Path(args.traj).stem: rep}, args.boxplot)
    return EXIT_OK


def run_round(
    cfg: PipelineConfig,
    scenarios,
    tours=("A", "B", "C"),
    initial_map: PointMap | None = None,
    mapping_scenario: str = "easy",
    mapping_tour: str = "A",
    max_frames: int | None = None,
    out_dir=None,
) -> tuple[dict, PointMap]:
    """One annotation round over scenarios and tours, chaining the refined map.

    Without an initial map, a mapping tour is simulated first and mapped
    with PointMap. Stage failures are recorded per session and the round
    continues. Returns the report and the final refined map.
    """
    for name in scenarios:
        if name not in SCENARIOS:
            raise InvalidParameterError(f"unknown scenario '{name}'")
    for name in tours:
        if name not in TOURS:
            raise InvalidParameterError(f"unknown tour '{name}'")
    report: dict = {"seed": cfg.seed, "sessions": []}
    if initial_map is None:
        world = scenario_presets(mapping_scenario, cfg.seed)
        mapping = simulate_session(world, cfg.sensor, _truncate(tour(mapping_tour, cfg.sensor.mount_height), max_frames))
        res = pointmap_slam(mapping.frames, None, cfg.icp, cfg.normals, cfg.seed, mapping.poses[0], dl_map=cfg.dl_map)
        initial_map = res.map
        loc = localization_error(res.trajectory, mapping.poses)
        report["initial_mapping"] = {
            "scenario": mapping_scenario, "tour": mapping_tour,
            "map_points": len(initial_map), "localization": loc.to_dict(),
        }
    report["initial_map_points"] = len(initial_map)
    current = initial_map
    for scen in scenarios:
        world = scenario_presets(scen, cfg.seed)
        for tname in tours:
            entry: dict = {"scenario": scen, "tour": tname}
            try:
                session = simulate_session(world, cfg.sensor, _truncate(tour(tname, cfg.sensor.mount_height), max_frames))
                ann = annotate_session(
                    current, session.frames, cfg.annotate, cfg.icp, cfg.normals, cfg.ray, cfg.seed, session.poses[0]
                )
            except PipelineStageError as e:
                log.error("round: %s/%s failed at %s: %s", scen, tname, e.step, e)
                entry.update(status="failed", step=e.step, error=str(e))
                report["sessions"].append(entry)
                continue
            current = ann.refined.map
            entry.update(
                status="ok",
                n_frames=len(session.frames),
                counts=ann.counts,
                confusion=confusion(ann.frames, session.frames).to_dict(),
                localization=localization_error(ann.poses, session.poses).to_dict(),
                refined_map_points=len(current),
            )
            if out_dir is not None:
                sess_dir = ensure_dir(Path(out_dir) / f"{scen}_{tname}")
                _write_frames(ann.frames, sess_dir, "labeled", session.poses, session.times)
            report["sessions"].append(entry)
    log.info("round: network training skipped (outside this toolkit)")
    log.info("round: planning with filtered frames skipped (outside this toolkit)")
    report["final_map_points"] = len(current)
    return report, current


def cmd_round(args, cfg: PipelineConfig) -> int:
    init = read_map(args.init_map, cfg.dl_map) if args.init_map else None
    out = ensure_dir(args.out_dir)
    report, final = run_round(
        cfg, args.scenarios, args.tours, init, args.mapping_scenario, args.mapping_tour, args.max_frames,
        out if args.write_frames else None,
    )
    write_json(report, out / "round_report.json")
    write_map(final, out / "refined_map.ply")
    failed = [s for s in report["sessions"] if s["status"] != "ok"]
    if failed and len(failed) == len(report["sessions"]):
        return EXIT_STAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lidarannot", description="Self-supervised lidar point annotation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a lidar session in a preset or custom world")
    s.add_argument("--world", help="world JSON (default: the scenario preset)")
    s.add_argument("--scenario", choices=list(SCENARIOS), default="easy")
    s.add_argument("--tour", choices=sorted(TOURS), required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--max-frames", type=int, help="keep only the first frames of the tour")
    add_config_arguments(s, ("sensor",))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("slam", help="map or localize a session with PointMap")
    s.add_argument("--frames", required=True, help="frame manifest (its first pose, if any, starts the run)")
    s.add_argument("--init-map", help="initial map PLY")
    s.add_argument("--localize-only", action="store_true", help="keep the initial map fixed")
    s.add_argument("--out-map", required=True)
    s.add_argument("--out-traj", required=True)
    s.add_argument("--seed", type=int, required=True)
    add_config_arguments(s, ("icp", "normals"))
    s.set_defaults(func=cmd_slam)

    s = sub.add_parser("raytrace", help="movable probabilities of map points with PointRay")
    s.add_argument("--map", required=True, help="map PLY (sidecar counters are continued)")
    s.add_argument("--frames", required=True)
    s.add_argument("--traj", help="trajectory JSON (default: manifest poses)")
    s.add_argument("--out", required=True, help="probability report CSV")
    s.add_argument("--out-ply", help="map PLY with a p_mov channel")
    s.add_argument("--out-map", help="map PLY with updated counters")
    add_config_arguments(s, ("ray",))
    s.set_defaults(func=cmd_raytrace)

    s = sub.add_parser("annotate", help="label one session against an initial map")
    s.add_argument("--init-map", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, required=True)
    add_config_arguments(s, ("annotate", "ray", "icp", "normals"))
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("filter", help="keep the points useful for localization or planning")
    s.add_argument("--frames", required=True, help="labeled frame manifest")
    s.add_argument("--mode", choices=["localization", "planning"], required=True)
    s.add_argument("--groundtruth", action="store_true", help="derive labels from groundtruth classes")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("eval", help="confusion matrix or localization error")
    ev = s.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    c = ev.add_parser("confusion", help="groundtruth class vs label counts")
    c.add_argument("--labeled", required=True, help="labeled frame manifest")
    c.add_argument("--groundtruth", help="groundtruth frame manifest (default: the labeled frames)")
    c.add_argument("--out", required=True, help="JSON report")
    c.add_argument("--csv", help="row-normalized CSV")
    c.set_defaults(func=cmd_eval)
    c = ev.add_parser("localization", help="trajectory error against groundtruth poses")
    c.add_argument("--traj", required=True)
    c.add_argument("--groundtruth", required=True, help="manifest with groundtruth poses")
    c.add_argument("--out", required=True, help="JSON report")
    c.add_argument("--boxplot", help="per-frame errors as gnuplot data")
    c.set_defaults(func=cmd_eval)

    s = sub.add_parser("round", help="annotate every tour of the given scenarios, chaining the map")
    s.add_argument("--scenarios", nargs="+", choices=list(SCENARIOS), required=True)
    s.add_argument("--tours", nargs="+", choices=sorted(TOURS), default=["A", "B", "C"])
    s.add_argument("--init-map", help="initial map (default: run a mapping tour)")
    s.add_argument("--mapping-scenario", choices=list(SCENARIOS), default="easy")
    s.add_argument("--mapping-tour", choices=sorted(TOURS), default="A")
    s.add_argument("--max-frames", type=int, help="truncate every tour")
    s.add_argument("--write-frames", action="store_true", help="also write labeled frames per session")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, required=True)
    add_config_arguments(s)
    s.set_defaults(func=cmd_round)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = config_from_args(args)
        if getattr(args, "max_frames", None) is not None and args.max_frames < 1:
            raise InvalidParameterError("--max-frames must be at least 1")
    except InvalidParameterError as e:
        log.error("%s", e)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except PipelineStageError as e:
        log.error("%s", e)
        return EXIT_STAGE
    except (PlyParseError, InvalidParameterError, DegenerateInputError, OSError, ValueError, KeyError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
