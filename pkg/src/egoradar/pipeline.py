"""Frame-by-frame workflow: cube -> point cloud -> ego velocity -> background removal -> metrics."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import RadarConfig, preset
from .dsp import (CfarParams, DspError, ExtractParams, ImageParams, RadarImage, detections_to_array,
                  effective_v_max, extract_pointcloud, make_image, range_axis, tdm_fold_correction)
from .ego import EgoMotionError, EgoParams, OdrOptions, OdrWeights, RansacParams, estimate
from .metrics import SirReport, range_profile, range_profile_sir, to_db, truth_range_bins
from .notch import NotchError, NotchFilterSpec, profile_for_image, remove_background
from .simulate import GroundTruthFrame, Scene, ground_truth_pointcloud, synthesize_frame

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    radar: RadarConfig = field(default_factory=lambda: preset("paper_sim"))
    scene: Scene | None = None
    cube_path: Path | None = None
    seed: int = 0
    extract: ExtractParams = ExtractParams()
    ego: EgoParams = EgoParams()
    notch: NotchFilterSpec = NotchFilterSpec()
    image: ImageParams = ImageParams()
    image_elevation_rad: float = 0.0
    image_format: str = "pgm"
    write_images: bool = True
    output_dir: Path = Path("out")
    workers: int = 1

    @property
    def num_frames(self) -> int:
        if self.scene is not None:
            return self.scene.num_frames
        if self.cube_path is not None:
            return io.read_cube_header(self.cube_path)[4]
        return 0

    def ego_params_for(self, frame_index: int) -> EgoParams:
        """RANSAC seeded from (master seed, frame) so frames are independent of processing order."""
        s = int(np.random.SeedSequence([self.seed, frame_index]).generate_state(1)[0])
        return dataclasses.replace(self.ego, ransac=dataclasses.replace(self.ego.ransac, rng_seed=s))


# --------------------------------------------------------------------------
# config file

TOP_KEYS = {"seed", "radar", "scene", "scene_file", "input", "extract", "ego", "notch", "image", "output",
            "workers", "eval"}


def _windows(node, names):
    out = {}
    for key in names:
        if key in node:
            value = node[key]
            if value not in ("hann", "rect"):
                raise io.FormatError(f"{io.where(node, key)}: {key!r} must be 'hann' or 'rect'")
            out[key] = value
    return out


def _bool(node, key, default):
    if key not in node:
        return default
    if not isinstance(node[key], bool):
        raise io.FormatError(f"{io.where(node, key)}: {key!r} must be true or false")
    return node[key]


def _pair(node, key, default):
    value = node.get(key, default)
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in value)):
        raise io.FormatError(f"{io.where(node, key)}: {key!r} must be two non-negative integers")
    return tuple(value)


def parse_k_set(value, origin: str = "--k-set") -> tuple[int, ...]:
    """Fold-index set from a list or text such as ``-1,0,1`` or ``{-1, 0, 1}``."""
    if isinstance(value, str):
        text = value.strip().strip("{}[]()")
        items = [x for x in text.replace(" ", ",").split(",") if x]
    else:
        items = list(value) if isinstance(value, (list, tuple)) else [value]
    try:
        ks = tuple(int(x) for x in items)
        if any(isinstance(x, float) and x != int(x) for x in items) or any(isinstance(x, bool) for x in items):
            raise ValueError
    except (TypeError, ValueError):
        raise io.FormatError(f"{origin}: k set must be integers, got {value!r}") from None
    if not ks:
        raise io.FormatError(f"{origin}: k set is empty")
    return tuple(dict.fromkeys(ks))


def _extract_params(node) -> ExtractParams:
    io.check_keys(node, {"cfar", "range_window", "doppler_window", "dynamic_range_db", "tdm_compensation",
                         "min_range_bin", "peak_interpolation"})
    base = ExtractParams()
    cf = io.section(node, "cfar")
    io.check_keys(cf, {"guard", "training", "pfa"})
    pfa = io.get_number(cf, "pfa", base.cfar.false_alarm_prob)
    if not 0 < pfa < 1:
        raise io.FormatError(f"{io.where(cf, 'pfa')}: 'pfa' must lie in (0, 1)")
    cfar = CfarParams(_pair(cf, "guard", base.cfar.guard_cells), _pair(cf, "training", base.cfar.training_cells), pfa)
    if "dynamic_range_db" in node and node["dynamic_range_db"] is None:
        dr = None
    else:
        dr = io.get_number(node, "dynamic_range_db", base.dynamic_range_db, float, 0.0)
    return ExtractParams(
        cfar=cfar,
        dynamic_range_db=dr,
        tdm_compensation=_bool(node, "tdm_compensation", base.tdm_compensation),
        min_range_bin=io.get_number(node, "min_range_bin", base.min_range_bin, int, 0),
        peak_interpolation=_bool(node, "peak_interpolation", base.peak_interpolation),
        **_windows(node, ("range_window", "doppler_window")),
    )


def _ego_params(node) -> EgoParams:
    io.check_keys(node, {"k_set", "ransac", "sigmas", "odr"})
    base = EgoParams()
    rn = io.section(node, "ransac")
    io.check_keys(rn, {"sample_size", "threshold", "max_trials"})
    sg = io.section(node, "sigmas")
    io.check_keys(sg, {"v", "theta", "phi", "angle_unit"})
    od = io.section(node, "odr")
    io.check_keys(od, {"step_tol", "rel_decrease_tol", "max_iter"})
    try:
        ransac = RansacParams(io.get_number(rn, "sample_size", base.ransac.sample_size, int),
                              io.get_number(rn, "threshold", base.ransac.inlier_threshold_m_per_s),
                              io.get_number(rn, "max_trials", base.ransac.max_trials, int))
    except ValueError as exc:
        raise io.FormatError(f"{io.where(rn)}: {exc}") from exc
    try:
        weights = OdrWeights.from_sigmas(io.get_number(sg, "v", base.weights.sigma_v),
                                         io.get_number(sg, "theta", base.weights.sigma_theta),
                                         io.get_number(sg, "phi", base.weights.sigma_phi),
                                         sg.get("angle_unit", "rad"))
    except ValueError as exc:
        raise io.FormatError(f"{io.where(sg)}: {exc}") from exc
    odr = OdrOptions(io.get_number(od, "step_tol", base.odr.step_tol, float, 0.0),
                     io.get_number(od, "rel_decrease_tol", base.odr.rel_decrease_tol, float, 0.0),
                     io.get_number(od, "max_iter", base.odr.max_iter, int, 1))
    ks = parse_k_set(node["k_set"], io.where(node, "k_set")) if "k_set" in node else base.candidate_ks
    return EgoParams(ransac, weights, odr, ks)


def _notch_spec(node) -> NotchFilterSpec:
    io.check_keys(node, {"pole_radius", "azimuth_half_width", "elevation_half_width", "doppler_half_width",
                         "notch_elevation"})
    base = NotchFilterSpec()
    try:
        return NotchFilterSpec(io.get_number(node, "pole_radius", base.pole_radius),
                               io.get_number(node, "azimuth_half_width", base.azimuth_half_width, int),
                               io.get_number(node, "elevation_half_width", base.elevation_half_width, int),
                               io.get_number(node, "doppler_half_width", base.doppler_half_width, int),
                               _bool(node, "notch_elevation", base.notch_elevation))
    except NotchError as exc:
        raise io.FormatError(f"{io.where(node)}: {exc}") from exc


def load_pipeline_config(path, seed: int | None = None, k_set=None, workers: int | None = None,
                         output_dir=None) -> PipelineConfig:
    """Parse a YAML pipeline config; command-line overrides win over file values."""
    path = Path(path)
    doc = io.load_yaml(path)
    io.check_keys(doc, TOP_KEYS)
    base_dir = path.parent
    master = io.get_number(doc, "seed", 0, int, 0) if seed is None else int(seed)
    radar = io.radar_from_node(io.section(doc, "radar"))

    scene = None
    if "scene" in doc and "scene_file" in doc:
        raise io.FormatError(f"{io.where(doc, 'scene_file')}: give either 'scene' or 'scene_file', not both")
    if "scene" in doc:
        scene = io.scene_from_node(io.section(doc, "scene"), master)
    elif "scene_file" in doc:
        scene = load_scene(base_dir / str(doc["scene_file"]), master)

    inp = io.section(doc, "input")
    io.check_keys(inp, {"cube"})
    cube_path = base_dir / str(inp["cube"]) if "cube" in inp else None
    if scene is None and cube_path is None:
        raise io.FormatError(f"{path}: config needs a 'scene', 'scene_file' or 'input.cube'")

    img = io.section(doc, "image")
    io.check_keys(img, {"azimuth_bins", "elevation_bins", "elevation_deg", "azimuth_window", "elevation_window",
                        "range_window", "doppler_window", "format", "write"})
    ibase = ImageParams()
    image = ImageParams(io.get_number(img, "azimuth_bins", ibase.azimuth_bins, int, 1),
                        io.get_number(img, "elevation_bins", ibase.elevation_bins, int, 1),
                        **_windows(img, ("range_window", "doppler_window", "azimuth_window", "elevation_window")))
    fmt = img.get("format", "pgm")
    if fmt not in ("pgm", "csv"):
        raise io.FormatError(f"{io.where(img, 'format')}: image format must be 'pgm' or 'csv'")

    out = io.section(doc, "output")
    io.check_keys(out, {"dir"})
    out_dir = Path(output_dir) if output_dir is not None else base_dir / str(out.get("dir", "out"))

    ego = _ego_params(io.section(doc, "ego"))
    if k_set is not None:
        ego = dataclasses.replace(ego, candidate_ks=parse_k_set(k_set))
    n_workers = io.get_number(doc, "workers", 1, int, 1) if workers is None else int(workers)
    if n_workers < 1:
        raise io.FormatError("--workers must be >= 1")
    return PipelineConfig(
        radar=radar, scene=scene, cube_path=cube_path, seed=master,
        extract=_extract_params(io.section(doc, "extract")), ego=ego,
        notch=_notch_spec(io.section(doc, "notch")), image=image,
        image_elevation_rad=float(np.deg2rad(io.get_number(img, "elevation_deg", 0.0))),
        image_format=fmt, write_images=_bool(img, "write", True), output_dir=out_dir, workers=n_workers,
    )


def load_scene(path, seed: int | None = None) -> Scene:
    doc = io.load_yaml(path)
    if "scene" in doc and len(doc) == 1:
        doc = io.section(doc, "scene")
    return io.scene_from_node(doc, seed)


# --------------------------------------------------------------------------
# per-frame processing

@dataclass
class FrameResult:
    frame: int
    cloud: np.ndarray
    estimate: object | None = None
    error: str | None = None
    truth: GroundTruthFrame | None = None
    images: dict[str, RadarImage] = field(default_factory=dict)
    profile: np.ndarray | None = None  # (N_range, 3): range_m, pre_dB, post_dB
    sir: tuple[SirReport, SirReport] | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def frame_cube(cfg: PipelineConfig, frame_index: int) -> np.ndarray:
    """Raw frame from the cube file, or simulated and rounded to the file's float32 precision.

    The rounding makes inline simulation give the same results as
    ``simulate`` followed by processing of the written cube.
    """
    if cfg.cube_path is not None:
        return io.read_cube(cfg.cube_path, [frame_index])[0]
    return synthesize_frame(cfg.scene, cfg.radar, frame_index).astype(np.complex64).astype(np.complex128)


def estimate_frame(cfg: PipelineConfig, cloud: np.ndarray, frame_index: int):
    return estimate(cloud, effective_v_max(cfg.radar), cfg.ego_params_for(frame_index),
                    tdm_fold_correction(cfg.radar))


def filter_frame(cfg: PipelineConfig, cube: np.ndarray, velocity, k: int):
    """Pre/post images at the configured elevation and the range profile in dB."""
    pre = make_image(cube, cfg.radar, elevation_rad=cfg.image_elevation_rad, params=cfg.image)
    prof = profile_for_image(velocity, k, pre)
    post = remove_background(pre, prof, cfg.notch)
    pre_p, post_p = range_profile(pre), range_profile(post)
    ref = post_p.max()
    table = np.column_stack([range_axis(cfg.radar), to_db(pre_p, ref), to_db(post_p, ref)])
    return pre, post, table


def process_frame(cfg: PipelineConfig, frame_index: int) -> FrameResult:
    cube = frame_cube(cfg, frame_index)
    cloud = detections_to_array(extract_pointcloud(cube, cfg.radar, cfg.extract))
    res = FrameResult(frame_index, cloud)
    if cfg.scene is not None:
        res.truth = ground_truth_pointcloud(cfg.scene, cfg.radar, frame_index)
    try:
        res.estimate = estimate_frame(cfg, cloud, frame_index)
    except EgoMotionError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        return res
    try:
        pre, post, res.profile = filter_frame(cfg, cube, res.estimate.velocity, res.estimate.ambiguity_k)
    except (DspError, NotchError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        return res
    res.images = {
        "doppler_azimuth_pre": pre.doppler_azimuth(), "doppler_azimuth_post": post.doppler_azimuth(),
        "range_azimuth_pre": pre.range_azimuth(), "range_azimuth_post": post.range_azimuth(),
    }
    if res.truth is not None:
        tb, bb = truth_range_bins(res.truth, cfg.radar)
        if tb and bb:
            res.sir = range_profile_sir(pre, post, tb, bb)
    return res


def _process(args):
    return process_frame(*args)


def run_frames(cfg: PipelineConfig, frames, fn=_process):
    """Apply ``fn((cfg, frame))`` to every frame, results in frame order."""
    jobs = [(cfg, int(f)) for f in frames]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# --------------------------------------------------------------------------
# outputs

METRICS_COLUMNS = ("frame", "ok", "err_vx", "err_vy", "err_vz", "k", "sir_pre_dB", "sir_post_dB",
                   "sir_improvement_dB")


def write_outputs(cfg: PipelineConfig, results: list[FrameResult]) -> dict[str, Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in ("pointcloud", "estimates", "metrics")}
    io.write_csv(paths["pointcloud"], io.POINTCLOUD_COLUMNS,
                 (row for r in results for row in io.pointcloud_rows(r.frame, r.cloud)))
    io.write_csv(paths["estimates"], io.ESTIMATE_COLUMNS,
                 (io.estimate_row(r.frame, r.estimate) for r in results if r.ok))
    nan = float("nan")
    rows = []
    for r in results:
        err = (r.estimate.velocity - r.truth.ego_velocity) if (r.ok and r.truth is not None) else (nan,) * 3
        k = r.estimate.ambiguity_k if r.ok else -999
        sir = (r.sir[0].sir_db, r.sir[1].sir_db, r.sir[1].sir_db - r.sir[0].sir_db) if r.sir else (nan,) * 3
        rows.append((r.frame, r.ok, *err, k, *sir))
    io.write_csv(paths["metrics"], METRICS_COLUMNS, rows)
    if any(r.truth is not None for r in results):
        paths["truth"] = out / "truth.csv"
        io.write_csv(paths["truth"], io.TRUTH_COLUMNS, (io.truth_rows(r.truth) for r in results if r.truth))
    prof_dir = out / "profiles"
    img_dir = out / "images"
    for r in results:
        if r.profile is not None:
            prof_dir.mkdir(exist_ok=True)
            io.write_csv(prof_dir / f"frame_{r.frame:04d}_range_profile.csv", io.PROFILE_COLUMNS, r.profile)
        if cfg.write_images and r.images:
            img_dir.mkdir(exist_ok=True)
            for name, im in r.images.items():
                io.write_image(img_dir / f"frame_{r.frame:04d}_{name}.{cfg.image_format}", im)
    return paths
