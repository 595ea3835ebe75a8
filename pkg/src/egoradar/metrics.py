"""Accuracy and clutter-suppression metrics, plus the scene-count sensitivity sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RadarConfig
from .dsp import RadarImage, detections_to_array, effective_v_max, extract_pointcloud, range_bin_m, tdm_fold_correction
from .ego import EgoMotionError, EgoParams, estimate
from .scenarios import random_drive
from .simulate import GroundTruthFrame, ground_truth_pointcloud, synthesize_frame

log = logging.getLogger(__name__)

DB_FLOOR = -120.0


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RmseReport:
    label: str
    rmse: np.ndarray  # (v_x, v_y, v_z) in m/s
    num_frames: int

    def row(self) -> list:
        return [self.label, *(float(x) for x in self.rmse)]


@dataclass(frozen=True)
class SirReport:
    signal_avg_db: float
    interference_avg_db: float
    sir_db: float


def rmse(estimates, truths, label: str = "") -> RmseReport:
    est = np.asarray(estimates, float).reshape(-1, 3)
    tru = np.asarray(truths, float).reshape(-1, 3)
    if len(est) == 0:
        raise MetricsError("no frames to score")
    if est.shape != tru.shape:
        raise MetricsError(f"{len(est)} estimates vs {len(tru)} ground-truth frames")
    return RmseReport(label, np.sqrt(np.mean((est - tru) ** 2, axis=0)), len(est))


# --------------------------------------------------------------------------
# range profiles and SIR

def _range_azimuth(image) -> np.ndarray:
    if isinstance(image, RadarImage):
        if "doppler" in image.axes or "elevation" in image.axes:
            image = image.range_azimuth()
        if image.axes != ("range", "azimuth"):
            raise MetricsError(f"cannot form a range-azimuth image from axes {image.axes}")
        return image.data
    arr = np.asarray(image, float)
    if arr.ndim != 2:
        raise MetricsError("range-azimuth image must be 2D")
    return arr


def range_profile(image) -> np.ndarray:
    """Per-range maximum over azimuth of a range-azimuth magnitude image."""
    return _range_azimuth(image).max(axis=1)


def to_db(profile, reference: float, floor_db: float = DB_FLOOR) -> np.ndarray:
    p = np.asarray(profile, float)
    if not reference > 0:
        return np.full(p.shape, floor_db)
    with np.errstate(divide="ignore"):
        return np.maximum(20.0 * np.log10(p / reference), floor_db)


def sir_report(profile_db, target_bins, background_bins) -> SirReport:
    p = np.asarray(profile_db, float)
    s = float(np.mean(p[list(target_bins)]))
    i = float(np.mean(p[list(background_bins)]))
    return SirReport(s, i, s - i)


def range_profile_sir(pre_image, post_image, target_bins, background_bins, floor_db: float = DB_FLOOR,
                      ) -> tuple[SirReport, SirReport]:
    """SIR of the range profile before and after filtering.

    Both profiles are in dB relative to the largest post-filter value.
    """
    tb = sorted({int(b) for b in target_bins})
    bb = sorted({int(b) for b in background_bins})
    if not tb or not bb:
        raise MetricsError("target and background bin sets must be nonempty")
    if set(tb) & set(bb):
        raise MetricsError(f"target and background bins overlap: {sorted(set(tb) & set(bb))}")
    pre = range_profile(pre_image)
    post = range_profile(post_image)
    if pre.shape != post.shape:
        raise MetricsError("pre and post images differ in range extent")
    if max(tb[-1], bb[-1]) >= len(pre) or min(tb[0], bb[0]) < 0:
        raise MetricsError("bin index outside the range profile")
    ref = post.max()
    return (sir_report(to_db(pre, ref, floor_db), tb, bb),
            sir_report(to_db(post, ref, floor_db), tb, bb))


def truth_range_bins(truth: GroundTruthFrame, cfg: RadarConfig, guard: int = 1, exclusion: int = 2,
                     ) -> tuple[list[int], list[int]]:
    """Range bins dominated by moving targets and by static scatterers.

    Each scatterer claims its nearest range bin +- ``guard`` (the -6 dB core
    of a Hann-windowed range peak).  A claimed bin is dropped when a
    scatterer of the other class lies within ``exclusion`` bins of it (the
    Hann main-lobe half-width), since its value would then mix both classes.
    """
    dr = range_bin_m(cfg)
    n = cfg.range_fft_size
    bins = np.rint(np.asarray(truth.ranges) / dr).astype(int)
    is_static = np.asarray(truth.is_static, bool)

    def reach(sel, half):
        return {x for b in bins[sel] for x in range(b - half, b + half + 1) if 0 <= x < n}

    moving = reach(~is_static, guard) - reach(is_static, exclusion)
    static = reach(is_static, guard) - reach(~is_static, exclusion)
    return sorted(moving), sorted(static)


# --------------------------------------------------------------------------
# sensitivity sweep

@dataclass(frozen=True)
class SweepRow:
    num_static: int
    num_moving: int
    trials: int
    failures: int
    rmse: np.ndarray  # NaN when every trial failed


def run_frame(scene, cfg: RadarConfig, frame_index: int, params: EgoParams, extract_params=None):
    """Simulate, extract and estimate one frame; returns (estimate, truth)."""
    cube = synthesize_frame(scene, cfg, frame_index)
    kwargs = {} if extract_params is None else {"params": extract_params}
    cloud = detections_to_array(extract_pointcloud(cube, cfg, **kwargs))
    truth = ground_truth_pointcloud(scene, cfg, frame_index)
    est = estimate(cloud, effective_v_max(cfg), params, tdm_fold_correction(cfg))
    return est, truth


def sensitivity_sweep(cfg: RadarConfig, moving_counts, static_counts, trials: int = 10, seed: int = 0,
                      params: EgoParams = EgoParams()) -> list[SweepRow]:
    """ODR RMSE for every (static cars, moving cars) pair over random scenes.

    Each trial draws a fresh scene from a seed derived from
    (seed, num_static, num_moving, trial), so rows are reproducible one by one.
    """
    if trials < 1:
        raise MetricsError("trials must be >= 1")
    rows = []
    for ns in static_counts:
        for nm in moving_counts:
            if ns < 0 or nm < 0:
                raise MetricsError("car counts must be >= 0")
            errs, failures = [], 0
            for t in range(trials):
                rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(ns), int(nm), t]))
                scene = random_drive(int(ns), int(nm), rng)
                try:
                    est, truth = run_frame(scene, cfg, 0, params)
                except EgoMotionError as exc:
                    log.info("sweep %d static / %d moving, trial %d failed: %s", ns, nm, t, exc)
                    failures += 1
                    continue
                errs.append(est.velocity - truth.ego_velocity)
            r = np.sqrt(np.mean(np.square(errs), axis=0)) if errs else np.full(3, np.nan)
            rows.append(SweepRow(int(ns), int(nm), trials, failures, r))
    return rows
