"""Point-cloud extraction and radar image formation from raw I-Q cubes.

Workflow per frame: range FFT over fast time, Doppler FFT over slow time,
CA-CFAR on the non-coherently summed magnitude map, TDM phase
compensation of each detected cell, then a 2D FFT over the virtual array
for azimuth / elevation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import C0, RadarConfig, derived_limits


class DspError(ValueError):
    pass


# --------------------------------------------------------------------------
# data types

@dataclass
class RangeDopplerMap:
    spectra: np.ndarray  # (N_range, N_doppler, N_h, N_e), Doppler fft-shifted
    magnitude: np.ndarray  # (N_range, N_doppler)


@dataclass(frozen=True)
class Detection:
    range_m: float
    doppler_m_per_s: float
    azimuth_rad: float
    elevation_rad: float
    magnitude: float


@dataclass(frozen=True)
class CfarParams:
    guard_cells: tuple[int, int] = (2, 2)
    training_cells: tuple[int, int] = (8, 4)
    false_alarm_prob: float = 1e-2


@dataclass(frozen=True)
class ExtractParams:
    cfar: CfarParams = CfarParams()
    # noiseless maps: rectangular-window sidelobe ridges pass CA-CFAR
    range_window: str = "hann"
    doppler_window: str = "hann"
    dynamic_range_db: float | None = 60.0  # cells further below the map peak are never detected
    tdm_compensation: bool = True
    min_range_bin: int = 1  # drop the DC range bin
    # refine range and Doppler to a fraction of a bin from the peak's neighbours
    peak_interpolation: bool = True


@dataclass
class RadarImage:
    """Real magnitude array with named axes.

    ``axes`` is a subset of ``('range', 'azimuth', 'elevation', 'doppler')`` in
    that order; ``coords`` maps each axis name to its physical bin values
    (metres, direction cosine, direction cosine, m/s).  ``bins`` maps the
    angle axes to indices on the full angle-FFT grid, ``grid`` holds the
    full grid sizes.
    """

    data: np.ndarray
    axes: tuple[str, ...]
    coords: dict[str, np.ndarray]
    bins: dict[str, np.ndarray] = field(default_factory=dict)
    grid: dict[str, int] = field(default_factory=dict)
    v_max: float = float("nan")
    # elevation bins by which a scatterer whose Doppler folded once is displaced
    # (TDM compensation was driven by the folded Doppler)
    fold_elevation_shift: float = 0.0

    def axis(self, name: str) -> int:
        return self.axes.index(name)

    def azimuth_rad(self, elevation_rad: float = 0.0) -> np.ndarray:
        u = self.coords["azimuth"] / np.cos(elevation_rad)
        return np.arcsin(np.clip(u, -1.0, 1.0))

    def reduce(self, axis_name: str, how: str = "sum") -> RadarImage:
        k = self.axis(axis_name)
        data = self.data.sum(axis=k) if how == "sum" else self.data.max(axis=k)
        axes = tuple(a for a in self.axes if a != axis_name)
        return RadarImage(data, axes, {a: self.coords[a] for a in axes},
                          {a: b for a, b in self.bins.items() if a in axes},
                          dict(self.grid), self.v_max, self.fold_elevation_shift)

    def select(self, axis_name: str, index: int) -> RadarImage:
        k = self.axis(axis_name)
        if not 0 <= index < self.data.shape[k]:
            raise DspError(f"{axis_name} index {index} out of bounds")
        data = np.take(self.data, index, axis=k)
        axes = tuple(a for a in self.axes if a != axis_name)
        return RadarImage(data, axes, {a: self.coords[a] for a in axes},
                          {a: b for a, b in self.bins.items() if a in axes},
                          dict(self.grid), self.v_max, self.fold_elevation_shift)

    def doppler_azimuth(self) -> RadarImage:
        """(azimuth, doppler) slice: range summed, first elevation bin."""
        img = self
        if "range" in img.axes:
            img = img.reduce("range")
        if "elevation" in img.axes:
            img = img.select("elevation", 0)
        return img

    def range_azimuth(self) -> RadarImage:
        """(range, azimuth) slice: Doppler summed, first elevation bin."""
        img = self.reduce("doppler")
        if "elevation" in img.axes:
            img = img.select("elevation", 0)
        return img


# --------------------------------------------------------------------------
# transforms

def window(kind: str, n: int) -> np.ndarray:
    if kind in ("rect", "rectangular", "none", None):
        return np.ones(n)
    if kind in ("hann", "hanning"):
        return np.hanning(n + 2)[1:-1]
    raise DspError(f"unknown window {kind!r}")


def range_bin_m(cfg: RadarConfig) -> float:
    return derived_limits(cfg)[0]


def doppler_scale(cfg: RadarConfig) -> float:
    """Ratio of the carrier to the mean RF frequency over the ADC window.

    The slow-time phase advance of a sample taken at fast time t is set by
    the instantaneous frequency f_c + S t, so converting Doppler bins with
    f_c alone overstates every velocity by S t_mid / f_c.
    """
    t_mid = 0.5 * (cfg.samples_per_chirp - 1) / cfg.sample_rate_hz
    return cfg.carrier_freq_hz / (cfg.carrier_freq_hz + cfg.chirp_slope_hz_per_s * t_mid)


def effective_v_max(cfg: RadarConfig) -> float:
    """Half the Doppler aliasing period of the processed point cloud and images."""
    return cfg.v_max * doppler_scale(cfg)


def doppler_axis(cfg: RadarConfig) -> np.ndarray:
    """Velocity of each fft-shifted Doppler bin; bin N/2 is zero velocity."""
    n = cfg.doppler_fft_size
    return (np.arange(n) - n // 2) * (2.0 * effective_v_max(cfg) / n)


def range_axis(cfg: RadarConfig) -> np.ndarray:
    return np.arange(cfg.range_fft_size) * range_bin_m(cfg)


def angle_axis(n_fft: int, spacing_m: float, wavelength_m: float) -> np.ndarray:
    """Direction cosine of each fft-shifted angle bin."""
    return (np.arange(n_fft) - n_fft // 2) / n_fft * wavelength_m / spacing_m


def _check_cube(cube: np.ndarray, cfg: RadarConfig):
    expected = (cfg.samples_per_chirp, cfg.chirps_per_tx_per_frame, cfg.num_rx, cfg.num_tx)
    if cube.shape != expected:
        raise DspError(f"cube shape {cube.shape} does not match config {expected}")


def range_doppler_transform(cube: np.ndarray, cfg: RadarConfig, window_kind: str | tuple[str, str] = "rect",
                            ) -> RangeDopplerMap:
    """Range FFT over fast time and Doppler FFT over chirps for every virtual element.

    The Doppler transform uses the positive-exponent kernel so that bin
    index grows with radial velocity (closing targets land below N/2).
    """
    _check_cube(cube, cfg)
    rk, dk = (window_kind, window_kind) if isinstance(window_kind, str) else window_kind
    ns, nc = cube.shape[:2]
    x = cube * window(rk, ns)[:, None, None, None]
    x = np.fft.fft(x, n=cfg.range_fft_size, axis=0)
    x = x * window(dk, nc)[None, :, None, None]
    nd = cfg.doppler_fft_size
    x = np.fft.fftshift(np.fft.ifft(x, n=nd, axis=1) * nd, axes=1)
    return RangeDopplerMap(x, np.abs(x).sum(axis=(2, 3)))


# --------------------------------------------------------------------------
# CFAR

def _box_sum(padded: np.ndarray, half: tuple[int, int], shape: tuple[int, int], pad: tuple[int, int]):
    """Sum of a (2h0+1, 2h1+1) box centred on every original cell."""
    ii = np.pad(padded.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    r0 = np.arange(shape[0]) + pad[0] - half[0]
    c0 = np.arange(shape[1]) + pad[1] - half[1]
    r1 = r0 + 2 * half[0] + 1
    c1 = c0 + 2 * half[1] + 1
    return ii[r1][:, c1] - ii[r0][:, c1] - ii[r1][:, c0] + ii[r0][:, c0]


def cfar_threshold(power: np.ndarray, params: CfarParams = CfarParams()):
    """CA-CFAR threshold on a power map: (threshold, training-cell count).

    Both axes wrap around: the range FFT of complex IF samples is circular
    too, so leakage from a near-range target reappears at the top range
    bins and must be seen by their training cells.
    """
    gr, gd = params.guard_cells
    tr, td = params.training_cells
    if min(gr, gd, tr, td) < 0 or (tr == 0 and td == 0):
        raise DspError("degenerate CFAR window")
    if not 0 < params.false_alarm_prob < 1:
        raise DspError("false_alarm_prob must lie in (0, 1)")
    nr, nd = power.shape
    wr, wd = gr + tr, gd + td
    if nr <= 2 * wr + 1 or nd <= 2 * wd + 1:
        raise DspError(f"map {power.shape} too small for CFAR window {(2 * wr + 1, 2 * wd + 1)}")
    def padded(a):
        return np.pad(a, ((wr, wr), (wd, wd)), mode="wrap")
    p = padded(power.astype(float))
    ones = padded(np.ones_like(power, dtype=float))
    pad = (wr, wd)
    outer = _box_sum(p, (wr, wd), power.shape, pad) - _box_sum(p, (gr, gd), power.shape, pad)
    count = _box_sum(ones, (wr, wd), power.shape, pad) - _box_sum(ones, (gr, gd), power.shape, pad)
    count = np.rint(count)
    noise = outer / count
    alpha = count * (params.false_alarm_prob ** (-1.0 / count) - 1.0)
    return alpha * noise, count


def cfar_mask(magnitude: np.ndarray, params: CfarParams = CfarParams()) -> np.ndarray:
    power = np.asarray(magnitude, float) ** 2
    threshold, _ = cfar_threshold(power, params)
    return power > threshold


def _merge_wrapped(labels: np.ndarray, n: int) -> np.ndarray:
    """Union components that touch across the Doppler wrap boundary."""
    parent = np.arange(n + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    nr = labels.shape[0]
    for r in range(nr):
        a = labels[r, -1]
        if not a:
            continue
        for dr in (-1, 0, 1):
            rr = r + dr
            if 0 <= rr < nr and labels[rr, 0]:
                ra, rb = find(a), find(labels[rr, 0])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n + 1)])
    return roots[labels]


def cfar_2d(magnitude: np.ndarray, guard_cells=(2, 2), training_cells=(8, 4),
            false_alarm_prob: float = 1e-2, min_magnitude: float = 0.0) -> list[tuple[int, int]]:
    """Cell-averaging CFAR with 8-connected hits merged to their local maximum.

    Returns a list of ``(range_bin, doppler_bin)`` sorted by range then Doppler.
    """
    params = CfarParams(tuple(guard_cells), tuple(training_cells), false_alarm_prob)
    mag = np.asarray(magnitude, float)
    hits = cfar_mask(mag, params) & (mag >= min_magnitude)
    if not hits.any():
        return []
    labels, n = ndimage.label(hits, structure=np.ones((3, 3), bool))
    labels = _merge_wrapped(labels, n)
    peaks = []
    for lab in np.unique(labels[labels > 0]):
        rr, dd = np.nonzero(labels == lab)
        k = np.argmax(mag[rr, dd])
        peaks.append((int(rr[k]), int(dd[k])))
    return sorted(peaks)


# --------------------------------------------------------------------------
# angle processing

def tdm_phase_delta(doppler_m_per_s, cfg: RadarConfig):
    """Doppler phase advance over one PRI: -4 pi f_c v_r N_T T_c / c0."""
    return -4.0 * np.pi * cfg.carrier_freq_hz * np.asarray(doppler_m_per_s, float) * cfg.pri_s / C0


def tdm_phase_compensate(measurements: np.ndarray, doppler_m_per_s: float, cfg: RadarConfig) -> np.ndarray:
    """Undo the TX-slot Doppler rotation on an (N_h, N_e) element snapshot.

    Elements of the i-th TX (vertical index i-1) are rotated by
    ``-(i-1) * dphi / N_T``.
    """
    measurements = np.asarray(measurements)
    q = np.arange(measurements.shape[-1])
    rot = np.exp(-1j * q * tdm_phase_delta(doppler_m_per_s, cfg) / cfg.num_tx)
    return measurements * rot


def tdm_fold_correction(cfg: RadarConfig):
    """Angle fix-up for detections whose Doppler was folded ``k`` times.

    TDM compensation driven by a folded Doppler leaves a residual rotation
    of 2 pi k / N_T per TX slot, which moves the elevation direction cosine
    by k lambda / (h N_T).  The returned callable ``(k, az, el) -> (az, el)``
    undoes that shift; the azimuth direction cosine is unaffected.
    """
    lam, h, nt = cfg.wavelength, cfg.element_spacing_m, cfg.num_tx
    period = lam / h

    def correct(k: int, azimuths, elevations):
        az = np.asarray(azimuths, float)
        el = np.asarray(elevations, float)
        if k == 0:
            return az, el
        u = np.sin(az) * np.cos(el)
        v = np.sin(el) - k * lam / (h * nt)
        v = np.clip(np.mod(v + period / 2, period) - period / 2, -1.0, 1.0)
        cos_el = np.sqrt(1.0 - v * v)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(cos_el > 0, u / cos_el, 0.0)
        return np.arcsin(np.clip(s, -1.0, 1.0)), np.arcsin(v)

    return correct


def aoa_spectrum(measurements: np.ndarray, cfg: RadarConfig) -> np.ndarray:
    spec = np.fft.fft2(measurements, s=(cfg.azimuth_fft_size, cfg.elevation_fft_size))
    return np.fft.fftshift(spec)


def aoa_estimate(measurements: np.ndarray, cfg: RadarConfig) -> tuple[float, float] | None:
    """Azimuth and elevation from the 2D-FFT peak over the virtual array.

    Returns ``None`` when the peak direction cosines are unphysical
    (|u| > cos(elevation)).
    """
    spec = np.abs(aoa_spectrum(measurements, cfg))
    a, e = np.unravel_index(np.argmax(spec), spec.shape)
    lam, h = cfg.wavelength, cfg.element_spacing_m
    u = float(np.clip(angle_axis(cfg.azimuth_fft_size, h, lam)[a], -1.0, 1.0))
    v = float(np.clip(angle_axis(cfg.elevation_fft_size, h, lam)[e], -1.0, 1.0))
    el = np.arcsin(v)
    cos_el = np.sqrt(1.0 - v * v)
    if abs(u) > cos_el + 1e-12:
        return None
    az = np.arcsin(np.clip(u / cos_el, -1.0, 1.0)) if cos_el > 0 else 0.0
    return float(az), float(el)


# --------------------------------------------------------------------------
# point cloud

def extract_pointcloud(cube: np.ndarray, cfg: RadarConfig, params: ExtractParams = ExtractParams(),
                       ) -> list[Detection]:
    """Full per-frame chain: RD map -> CFAR -> TDM compensation -> AoA."""
    rd = range_doppler_transform(cube, cfg, (params.range_window, params.doppler_window))
    c = params.cfar
    floor = 0.0
    if params.dynamic_range_db is not None:
        floor = rd.magnitude.max() * 10 ** (-params.dynamic_range_db / 20)
    cells = cfar_2d(rd.magnitude, c.guard_cells, c.training_cells, c.false_alarm_prob, floor)
    dr = range_bin_m(cfg)
    vel = doppler_axis(cfg)
    out = []
    for rb, db in cells:
        if rb < params.min_range_bin:
            continue
        snap = rd.spectra[rb, db]
        if params.tdm_compensation:
            snap = tdm_phase_compensate(snap, vel[db], cfg)
        angles = aoa_estimate(snap, cfg)
        if angles is None:
            continue
        r_off = d_off = 0.0
        if params.peak_interpolation:
            mag = rd.magnitude
            nr, nd = mag.shape
            if 0 < rb < nr - 1:
                r_off = _peak_offset(mag[rb - 1, db], mag[rb, db], mag[rb + 1, db])
            d_off = _peak_offset(mag[rb, (db - 1) % nd], mag[rb, db], mag[rb, (db + 1) % nd])
        dv = vel[1] - vel[0]
        out.append(Detection((rb + r_off) * dr, float(vel[db] + d_off * dv), angles[0], angles[1],
                             float(rd.magnitude[rb, db])))
    return out


def _peak_offset(lo: float, mid: float, hi: float) -> float:
    """Vertex of the parabola through three log-magnitudes, in bins from the middle one."""
    if min(lo, mid, hi) <= 0:
        return 0.0
    a, b, c = np.log(lo), np.log(mid), np.log(hi)
    den = a - 2.0 * b + c
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def detections_to_array(dets: list[Detection]) -> np.ndarray:
    """(N, 5) array: range, doppler, azimuth, elevation, magnitude."""
    if not dets:
        return np.zeros((0, 5))
    return np.array([(d.range_m, d.doppler_m_per_s, d.azimuth_rad, d.elevation_rad, d.magnitude) for d in dets])


# --------------------------------------------------------------------------
# images

@dataclass(frozen=True)
class ImageParams:
    azimuth_bins: int = 32
    elevation_bins: int = 32
    range_window: str = "hann"
    doppler_window: str = "hann"
    # tapers across the virtual array; they keep clutter sidelobes out of
    # angle cells whose notch sits at a different Doppler
    azimuth_window: str = "hann"
    elevation_window: str = "hann"
    tdm_compensation: bool = True


def _compensated_spectra(cube, cfg, params: ImageParams) -> np.ndarray:
    rd = range_doppler_transform(cube, cfg, (params.range_window, params.doppler_window)).spectra
    if params.tdm_compensation:
        q = np.arange(cfg.num_tx)
        dphi = tdm_phase_delta(doppler_axis(cfg), cfg)
        rd = rd * np.exp(-1j * np.outer(dphi, q) / cfg.num_tx)[None, :, None, :]
    return rd


def make_image(cube: np.ndarray, cfg: RadarConfig, range_gate: int | str | None = None,
               elevation_rad: float | None = None, params: ImageParams = ImageParams()) -> RadarImage:
    """Magnitude image over (range, azimuth, elevation, doppler).

    ``range_gate`` selects one range bin, ``"integrated"`` sums magnitudes over
    range, ``None`` keeps every range bin.  ``elevation_rad`` keeps a single
    elevation slice (snapped to the nearest elevation-grid bin); ``None``
    keeps the full elevation grid.
    """
    _check_cube(cube, cfg)
    na, ne = params.azimuth_bins, params.elevation_bins
    if na < cfg.num_rx or ne < cfg.num_tx:
        raise DspError("image angle grid smaller than the virtual array")
    nr = cfg.range_fft_size
    if isinstance(range_gate, (int, np.integer)) and not 0 <= range_gate < nr:
        raise DspError(f"range gate {range_gate} out of bounds [0, {nr})")
    if isinstance(range_gate, str) and range_gate != "integrated":
        raise DspError(f"unknown range selection {range_gate!r}")
    lam, h = cfg.wavelength, cfg.element_spacing_m
    u_axis = angle_axis(na, h, lam)
    v_axis = angle_axis(ne, h, lam)

    rd = _compensated_spectra(cube, cfg, params)  # (R, D, H, E)
    rd = rd * (window(params.azimuth_window, cfg.num_rx)[:, None] * window(params.elevation_window, cfg.num_tx)[None, :])
    if isinstance(range_gate, (int, np.integer)):
        rd = rd[range_gate:range_gate + 1]
        r_coords = range_axis(cfg)[range_gate:range_gate + 1]
    else:
        r_coords = range_axis(cfg)

    if elevation_rad is not None:
        target_v = np.sin(elevation_rad)
        e_bins = np.array([int(np.argmin(np.abs(v_axis - target_v)))])
    else:
        e_bins = np.arange(ne)

    shifted_e = np.fft.fftshift(np.arange(ne))  # shifted position -> raw fft index
    raw_e = shifted_e[e_bins]
    # steering for the kept elevation bins: DFT rows evaluated directly
    q = np.arange(cfg.num_tx)
    steer_e = np.exp(-2j * np.pi * np.outer(raw_e, q) / ne)  # (E_sel, N_e)

    chunks = []
    step = 16
    for start in range(0, rd.shape[0], step):
        block = np.einsum("rdhq,eq->rdhe", rd[start:start + step], steer_e, optimize=True)
        block = np.fft.fftshift(np.fft.fft(block, n=na, axis=2), axes=2)
        mag = np.abs(block).transpose(0, 2, 3, 1)  # (R, A, E, D)
        if range_gate == "integrated":
            mag = mag.sum(axis=0, keepdims=True)
        chunks.append(mag)
    data = np.concatenate(chunks, axis=0) if range_gate != "integrated" else sum(chunks)
    if range_gate == "integrated":
        r_coords = np.array([np.nan])
    coords = {"range": r_coords, "azimuth": u_axis, "elevation": v_axis[e_bins], "doppler": doppler_axis(cfg)}
    return RadarImage(data, ("range", "azimuth", "elevation", "doppler"), coords,
                      {"azimuth": np.arange(na), "elevation": e_bins},
                      {"azimuth": na, "elevation": ne, "doppler": cfg.doppler_fft_size}, effective_v_max(cfg),
                      ne / cfg.num_tx if params.tdm_compensation else 0.0)
