"""Command-line entry point: ``egoradar {simulate,extract,ego,remove,pipeline,eval}``.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
3 processing failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

from . import io
from .config import AdcWindowWarning, ConfigError
from .dsp import DspError, detections_to_array, extract_pointcloud
from .ego import EgoMotionError
from .metrics import MetricsError, rmse, sensitivity_sweep
from .notch import NotchError
from .pipeline import (PipelineConfig, estimate_frame, filter_frame, frame_cube, load_pipeline_config,
                       load_scene, run_frames, write_outputs)
from .simulate import SceneError, ground_truth_pointcloud, synthesize_frame

log = logging.getLogger("egoradar")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PROCESSING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ProcessingError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_frames(text: str | None, total: int) -> list[int]:
    """``A..B`` (inclusive) or a single index; ``None`` selects every frame."""
    if text is None:
        return list(range(total))
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo = int(a) if a else 0
            hi = int(b) if b else total - 1
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"--frames: expected A..B, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError(f"--frames: empty or negative range {text!r}")
    if hi >= total:
        raise UsageError(f"--frames: frame {hi} beyond the {total} available")
    return list(range(lo, hi + 1))


def _config(args, **extra) -> PipelineConfig:
    return load_pipeline_config(args.config, seed=args.seed, k_set=getattr(args, "k_set", None),
                                workers=getattr(args, "workers", None), **extra)


def _remove_on_error(paths):
    for p in paths:
        Path(p).unlink(missing_ok=True)


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = _config(args)
    scene = load_scene(args.scene, cfg.seed) if args.scene else cfg.scene
    if scene is None:
        raise UsageError("simulate needs a scene (--scene or 'scene' in the config)")
    frames = parse_frames(args.frames, scene.num_frames)
    out = Path(args.out)
    truth_path = out.with_suffix(".truth.csv")
    targets_path = out.with_suffix(".targets.csv")
    radar = cfg.radar
    shape = (radar.samples_per_chirp, radar.chirps_per_tx_per_frame, radar.num_rx, radar.num_tx)
    written = [out, truth_path, targets_path]
    try:
        truths = [ground_truth_pointcloud(scene, radar, f) for f in frames]
        with io.CubeWriter(out, shape, len(frames)) as w:
            for f in frames:
                w.write(synthesize_frame(scene, radar, f))
        io.write_csv(truth_path, io.TRUTH_COLUMNS, (io.truth_rows(t) for t in truths))
        io.write_csv(targets_path, io.TARGET_COLUMNS, (row for t in truths for row in io.target_rows(t)))
    except BaseException:
        _remove_on_error(written)
        raise
    log.info("wrote %d frames to %s", len(frames), out)
    return EXIT_OK


def _extract_one(job):
    cfg, f = job
    return detections_to_array(extract_pointcloud(frame_cube(cfg, f), cfg.radar, cfg.extract))


def cmd_extract(args) -> int:
    cfg = _config(args)
    cfg = dataclasses.replace(cfg, cube_path=Path(args.cube), scene=None)
    frames = parse_frames(args.frames, cfg.num_frames)
    clouds = run_frames(cfg, frames, _extract_one)
    io.write_csv(args.out, io.POINTCLOUD_COLUMNS,
                 (row for f, c in zip(frames, clouds) for row in io.pointcloud_rows(f, c)))
    return EXIT_OK


def cmd_ego(args) -> int:
    cfg = _config(args)
    clouds = io.read_pointclouds(args.pointcloud)
    available = sorted(clouds)
    if args.frames is not None:
        wanted = parse_frames(args.frames, (available[-1] + 1) if available else 0)
        frames = [f for f in wanted if f in clouds]
    else:
        frames = available
    rows, failures = [], 0
    for f in frames:
        try:
            rows.append(io.estimate_row(f, estimate_frame(cfg, clouds[f], f)))
        except EgoMotionError as exc:
            failures += 1
            log.warning("frame %d: %s", f, exc)
    io.write_csv(args.out, io.ESTIMATE_COLUMNS, rows)
    return _failure_exit(failures, len(frames))


def cmd_remove(args) -> int:
    cfg = _config(args, output_dir=args.out_dir)
    cfg = dataclasses.replace(cfg, cube_path=Path(args.cube), scene=None)
    est = io.read_estimates(args.estimates)
    by_frame = {int(r[0]): r for r in est}
    frames = parse_frames(args.frames, cfg.num_frames)
    frames = [f for f in frames if f in by_frame]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        row = by_frame[f]
        pre, post, table = filter_frame(cfg, frame_cube(cfg, f), row[1:4], int(row[4]))
        io.write_csv(out / f"frame_{f:04d}_range_profile.csv", io.PROFILE_COLUMNS, table)
        for name, im in (("doppler_azimuth_pre", pre.doppler_azimuth()), ("doppler_azimuth_post", post.doppler_azimuth()),
                         ("range_azimuth_pre", pre.range_azimuth()), ("range_azimuth_post", post.range_azimuth())):
            io.write_image(out / f"frame_{f:04d}_{name}.{cfg.image_format}", im)
    if not frames:
        raise ProcessingError("no frame has both cube data and an estimate")
    return EXIT_OK


def _failure_exit(failures: int, total: int) -> int:
    if failures:
        log.warning("%d of %d frames failed", failures, total)
    if total and failures * 2 > total:
        log.error("more than half of the frames failed")
        return EXIT_PROCESSING
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args, output_dir=args.out_dir)
    frames = parse_frames(args.frames, cfg.num_frames)
    results = run_frames(cfg, frames)
    write_outputs(cfg, results)
    for r in results:
        if not r.ok:
            log.warning("frame %d skipped: %s", r.frame, r.error)
    return _failure_exit(sum(not r.ok for r in results), len(results))


TABLE_COLUMNS = ("method", "vx_rmse", "vy_rmse", "vz_rmse")
SWEEP_COLUMNS = ("num_static", "num_moving", "trials", "failures", "vx_rmse", "vy_rmse", "vz_rmse")


def _table_rows(cfg: PipelineConfig, frames, with_k0: bool):
    truth, odr, lsr, lsr0 = [], [], [], []
    cfg0 = dataclasses.replace(cfg, ego=dataclasses.replace(cfg.ego, candidate_ks=(0,)))
    failures = 0
    for f in frames:
        cube = frame_cube(cfg, f)
        cloud = detections_to_array(extract_pointcloud(cube, cfg.radar, cfg.extract))
        try:
            est = estimate_frame(cfg, cloud, f)
            est0 = estimate_frame(cfg0, cloud, f) if with_k0 else None
        except EgoMotionError as exc:
            failures += 1
            log.warning("frame %d: %s", f, exc)
            continue
        truth.append(ground_truth_pointcloud(cfg.scene, cfg.radar, f).ego_velocity)
        odr.append(est.velocity)
        lsr.append(est.lsr_velocity)
        if with_k0:
            lsr0.append(est0.lsr_velocity)
    if not truth:
        raise ProcessingError("every frame failed")
    reports = [rmse(lsr, truth, "LSR")]
    if with_k0:
        reports.append(rmse(lsr0, truth, "LSR (k=0)"))
    reports.append(rmse(odr, truth, "ODR"))
    return [r.row() for r in reports], failures


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if args.estimates or args.truth:
        if not (args.estimates and args.truth):
            raise UsageError("--estimates and --truth go together")
        est = io.read_estimates(args.estimates)
        tru = io.read_csv(args.truth, io.TRUTH_COLUMNS)
        truth_by_frame = {int(r[0]): r[2:5] for r in tru}
        missing = [int(f) for f in est[:, 0] if int(f) not in truth_by_frame]
        if missing:
            raise io.FormatError(f"{args.truth}: no ground truth for frames {missing[:5]}")
        report = rmse(est[:, 1:4], [truth_by_frame[int(f)] for f in est[:, 0]], "ODR")
        io.write_csv(out, TABLE_COLUMNS, [report.row()])
        return EXIT_OK
    if args.table == "sweep":
        spec = _sweep_spec(args)
        rows = sensitivity_sweep(cfg.radar, spec["moving"], spec["static"], spec["trials"], cfg.seed, cfg.ego)
        io.write_csv(out, SWEEP_COLUMNS,
                     ([r.num_static, r.num_moving, r.trials, r.failures, *r.rmse] for r in rows))
        return EXIT_OK
    if cfg.scene is None:
        raise UsageError("table reproduction needs a simulated scene in the config")
    frames = parse_frames(args.frames, cfg.num_frames)
    rows, failures = _table_rows(cfg, frames, with_k0=args.table == "3")
    io.write_csv(out, TABLE_COLUMNS, rows)
    return _failure_exit(failures, len(frames))


def _sweep_spec(args) -> dict:
    doc = io.load_yaml(args.config)
    node = io.section(doc, "eval")
    io.check_keys(node, {"moving", "static", "trials"})
    spec = {"moving": node.get("moving", [1, 3, 6, 10]), "static": node.get("static", [1, 3, 6]),
            "trials": io.get_number(node, "trials", 10, int, 1)}
    for key in ("moving", "static"):
        v = spec[key]
        if not isinstance(v, list) or not v or not all(isinstance(x, int) and x >= 0 for x in v):
            raise io.FormatError(f"{io.where(node, key)}: {key!r} must be a list of non-negative integers")
    if args.trials is not None:
        spec["trials"] = args.trials
    return spec


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egoradar", description="FMCW TDM-MIMO radar ego-motion and static-background removal")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, frames=True, workers=False, k_set=False):
        sp.add_argument("--config", required=True, help="YAML pipeline config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if frames:
            sp.add_argument("--frames", help="inclusive frame range A..B")
        if workers:
            sp.add_argument("--workers", type=int, help="frames processed concurrently")
        if k_set:
            sp.add_argument("--k-set", dest="k_set", help="Doppler fold candidates, e.g. --k-set=-1,0,1")

    sp = sub.add_parser("simulate", help="synthesize a cube file and ground truth")
    common(sp)
    sp.add_argument("--scene", help="scene YAML (default: the config's scene)")
    sp.add_argument("--out", required=True, help="output RBR1 cube path")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("extract", help="cube -> point cloud CSV")
    common(sp, workers=True)
    sp.add_argument("--cube", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("ego", help="point cloud CSV -> ego velocity CSV")
    common(sp, k_set=True)
    sp.add_argument("--pointcloud", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ego)

    sp = sub.add_parser("remove", help="cube + estimates -> filtered images and range profiles")
    common(sp)
    sp.add_argument("--cube", required=True)
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--out-dir", dest="out_dir", required=True)
    sp.set_defaults(func=cmd_remove)

    sp = sub.add_parser("pipeline", help="run every stage on the configured scene or cube")
    common(sp, workers=True, k_set=True)
    sp.add_argument("--out-dir", dest="out_dir", help="output directory (default: config output.dir)")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("eval", help="RMSE tables and sensitivity sweep")
    common(sp, k_set=True)
    sp.add_argument("--table", choices=("2", "3", "sweep"), default="2")
    sp.add_argument("--trials", type=int, help="sweep trials per configuration")
    sp.add_argument("--estimates", help="score an existing estimates CSV ...")
    sp.add_argument("--truth", help="... against this ground-truth CSV")
    sp.add_argument("--out", required=True, help="report CSV path")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("ignore", AdcWindowWarning)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"egoradar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, ConfigError, SceneError, OSError) as exc:
        print(f"egoradar: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ProcessingError, DspError, EgoMotionError, NotchError, MetricsError, FloatingPointError) as exc:
        print(f"egoradar: processing failed: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
