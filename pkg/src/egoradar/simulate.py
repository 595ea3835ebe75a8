"""Point-target scene simulation: ground truth and raw TDM-MIMO I-Q cubes.

Coordinates: x to the right, y along radar boresight, z up.  Azimuth is
measured from +y towards +x, elevation from the x-y plane towards +z.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import C0, RadarConfig, derived_limits


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class PointTarget:
    initial_position_m: tuple[float, float, float]
    velocity_m_per_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    reflect_amplitude: float = 1.0
    label: str = ""

    def __post_init__(self):
        vals = np.r_[self.initial_position_m, self.velocity_m_per_s, self.reflect_amplitude]
        if vals.shape != (7,) or not np.all(np.isfinite(vals)):
            raise SceneError(f"target {self.label or '?'} has non-finite or malformed fields")
        if self.reflect_amplitude < 0:
            raise SceneError(f"target {self.label or '?'} has negative amplitude")

    @property
    def is_static(self) -> bool:
        return not np.any(self.velocity_m_per_s)


@dataclass(frozen=True)
class EgoTrajectory:
    initial_velocity_m_per_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    acceleration_m_per_s2: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def velocity(self, t: float) -> np.ndarray:
        return np.asarray(self.initial_velocity_m_per_s, float) + np.asarray(self.acceleration_m_per_s2, float) * t

    def position(self, t: float) -> np.ndarray:
        v0 = np.asarray(self.initial_velocity_m_per_s, float)
        a = np.asarray(self.acceleration_m_per_s2, float)
        return v0 * t + 0.5 * a * t * t


@dataclass(frozen=True)
class Scene:
    ego: EgoTrajectory
    targets: tuple[PointTarget, ...] = ()
    num_frames: int = 1
    noise_std: float = 0.0
    seed: int = 0
    # targets outside this field of view (or behind the radar) are not illuminated
    max_azimuth_rad: float = np.deg2rad(80.0)
    max_elevation_rad: float = np.deg2rad(80.0)
    # "error": a target beyond the max beat range is rejected; "drop": it is
    # treated as removed by the IF anti-alias filter
    out_of_range: str = "error"

    def __post_init__(self):
        if self.out_of_range not in ("error", "drop"):
            raise SceneError("out_of_range must be 'error' or 'drop'")
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.num_frames < 1:
            raise SceneError("num_frames must be >= 1")
        if not (self.noise_std >= 0):
            raise SceneError("noise_std must be >= 0")


@dataclass
class GroundTruthFrame:
    frame_index: int
    time_s: float
    ego_velocity: np.ndarray
    # columns: range_m, doppler_mps, azimuth_rad, elevation_rad
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    target_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    is_static: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def ranges(self):
        return self.targets[:, 0]

    @property
    def dopplers(self):
        return self.targets[:, 1]

    @property
    def azimuths(self):
        return self.targets[:, 2]

    @property
    def elevations(self):
        return self.targets[:, 3]


def spherical_of(relative_position) -> tuple[float, float, float]:
    """Cartesian offset -> (range, azimuth, elevation); boresight is +y."""
    x, y, z = (float(c) for c in relative_position)
    r = float(np.sqrt(x * x + y * y + z * z))
    if r == 0.0:
        raise SceneError("zero-range target: position coincides with the radar")
    return r, float(np.arctan2(x, y)), float(np.arcsin(np.clip(z / r, -1.0, 1.0)))


def relative_doppler(target_vel, ego_vel, azimuth_rad, elevation_rad):
    """Radial velocity of a target seen from the moving radar (negative = closing)."""
    dv = np.asarray(target_vel, float) - np.asarray(ego_vel, float)
    az = np.asarray(azimuth_rad, float)
    el = np.asarray(elevation_rad, float)
    dvx, dvy, dvz = dv[..., 0], dv[..., 1], dv[..., 2]
    return (dvy * np.cos(az) + dvx * np.sin(az)) * np.cos(el) + dvz * np.sin(el)


def frame_time(cfg: RadarConfig, frame_index: int) -> float:
    return frame_index / cfg.frame_rate_hz


def _frame_geometry(scene: Scene, cfg: RadarConfig, frame_index: int):
    t = frame_time(cfg, frame_index)
    ego_pos = scene.ego.position(t)
    ego_vel = scene.ego.velocity(t)
    _, max_range, _ = derived_limits(cfg)
    rows, idx, static = [], [], []
    for i, tgt in enumerate(scene.targets):
        pos = np.asarray(tgt.initial_position_m, float) + np.asarray(tgt.velocity_m_per_s, float) * t
        rel = pos - ego_pos
        if rel[1] <= 0:
            continue
        r, az, el = spherical_of(rel)
        if abs(az) >= scene.max_azimuth_rad or abs(el) >= scene.max_elevation_rad:
            continue
        if r >= max_range:
            if scene.out_of_range == "drop":
                continue
            raise SceneError(
                f"target {i}{' (' + tgt.label + ')' if tgt.label else ''} at range {r:.2f} m "
                f"exceeds max beat range {max_range:.2f} m in frame {frame_index}"
            )
        rows.append((r, float(relative_doppler(tgt.velocity_m_per_s, ego_vel, az, el)), az, el))
        idx.append(i)
        static.append(tgt.is_static)
    return t, ego_vel, np.array(rows, float).reshape(-1, 4), np.array(idx, int), np.array(static, bool)


def ground_truth_pointcloud(scene: Scene, cfg: RadarConfig, frame_index: int) -> GroundTruthFrame:
    t, ego_vel, rows, idx, static = _frame_geometry(scene, cfg, frame_index)
    return GroundTruthFrame(frame_index, t, ego_vel, rows, idx, static)


def frame_seed(master_seed: int, frame_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(frame_index)])


def synthesize_targets(truth: np.ndarray, amplitudes, cfg: RadarConfig) -> np.ndarray:
    """Noiseless cube for targets given as rows of (r, v_r, azimuth, elevation).

    The TX (vertical) slot offset inside each PRI is modelled, so TX ``q``
    sees an extra Doppler phase of ``q * dphi / N_T``; the DSP chain removes
    it again with TDM phase compensation.
    """
    ns, nc = cfg.samples_per_chirp, cfg.chirps_per_tx_per_frame
    nh, ne = cfg.num_rx, cfg.num_tx
    cube = np.zeros((ns, nc, nh, ne), complex)
    if len(truth) == 0:
        return cube
    r, vr, az, el = (truth[:, k][:, None, None] for k in range(4))
    amp = np.asarray(amplitudes, float)[:, None, None] * cfg.tx_amplitude * cfg.rx_amplitude / 2.0
    lam = cfg.wavelength
    m = np.arange(ns)[None, :, None]
    n = np.arange(nc)[None, None, :]
    tau = 2.0 * r / C0 - 2.0 * vr * n * cfg.pri_s / C0
    fast_slow = amp * np.exp(2j * np.pi * (
        cfg.chirp_slope_hz_per_s * tau * m / cfg.sample_rate_hz
        + cfg.carrier_freq_hz * tau
        - 0.5 * cfg.chirp_slope_hz_per_s * tau ** 2
    ))
    u = np.sin(az) * np.cos(el)
    v = np.sin(el)
    p = np.arange(nh)[None, :, None]
    q = np.arange(ne)[None, None, :]
    slot = -4.0 * np.pi * cfg.carrier_freq_hz * vr * q * cfg.chirp_duration_s / C0
    h = cfg.element_spacing_m
    spatial = np.exp(1j * (2.0 * np.pi * h * (p * u + q * v) / lam + slot))
    cube += np.einsum("tmn,tpq->mnpq", fast_slow, spatial, optimize=True)
    return cube


def synthesize_frame(scene: Scene, cfg: RadarConfig, frame_index: int) -> np.ndarray:
    """Raw (N_s, N_c, N_h, N_e) complex cube for one frame, plus optional AWGN."""
    _, _, rows, idx, _ = _frame_geometry(scene, cfg, frame_index)
    amps = [scene.targets[i].reflect_amplitude for i in idx]
    cube = synthesize_targets(rows, amps, cfg)
    if scene.noise_std > 0:
        rng = np.random.default_rng(frame_seed(scene.seed, frame_index))
        scale = scene.noise_std / np.sqrt(2.0)
        cube += scale * (rng.standard_normal(cube.shape) + 1j * rng.standard_normal(cube.shape))
    return cube
