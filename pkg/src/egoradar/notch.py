"""Static-background removal by notch filtering in azimuth-elevation-Doppler.

The expected Doppler of a stationary scatterer is known for every angle
cell once the ego velocity is known.  One notch per angle cell is placed
at that Doppler; each notch is the min-composition of three 1D
second-order notch responses, and all notches multiply into the image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import RadarImage


class NotchError(ValueError):
    pass


@dataclass(frozen=True)
class NotchFilterSpec:
    pole_radius: float = 0.9
    # localisation half-widths (bins) per axis: azimuth, elevation, doppler
    azimuth_half_width: int = 4
    elevation_half_width: int = 4
    doppler_half_width: int = 4
    notch_elevation: bool = True

    def __post_init__(self):
        if not 0 < self.pole_radius < 1:
            raise NotchError("pole_radius must lie in (0, 1)")
        if min(self.azimuth_half_width, self.doppler_half_width) < 1 or self.elevation_half_width < 0:
            raise NotchError("localisation half-widths must be >= 1 (elevation >= 0)")


@dataclass
class StaticDopplerProfile:
    """Expected static-clutter Doppler per (azimuth bin, elevation bin).

    ``doppler`` is the measured (folded) velocity, ``doppler_bin`` its
    fractional position on the fft-shifted Doppler axis; infeasible angle
    cells (u^2 + v^2 >= 1) hold NaN.  ``fold`` counts how often each cell's
    Doppler wrapped (measured = true + 2 fold v_max) and ``elevation_shift``
    is how many elevation bins one fold displaces the clutter in the image.
    """

    true_doppler: np.ndarray
    doppler: np.ndarray
    doppler_bin: np.ndarray
    k: int
    v_max: float
    doppler_grid: int
    fold: np.ndarray | None = None
    elevation_shift: float = 0.0

    def elevation_center(self, elevation_bin: int) -> np.ndarray:
        """Image elevation bin (per azimuth) holding the clutter of ``elevation_bin``."""
        ne = self.doppler_bin.shape[1]
        fold = np.zeros(self.doppler_bin.shape[0]) if self.fold is None else self.fold[:, elevation_bin]
        return np.mod(elevation_bin + fold * self.elevation_shift, ne)


# --------------------------------------------------------------------------
# 1D / 3D responses

def notch_magnitude(delta_omega, pole_radius: float) -> np.ndarray:
    """|H| of the second-order notch prototype at offset ``delta_omega`` from the notch.

    Prototype: H(z) = g (1 - 2 z^-1 + z^-2) / (1 - 2 r z^-1 + r^2 z^-2), i.e. the
    biquad notch with omega_0 = 0, translated to each notch frequency.  Gain g
    makes |H| = 1 half a turn away from the notch; |H| grows monotonically
    with distance from the notch, so values lie in [0, 1].
    """
    r = pole_radius
    c = np.cos(np.asarray(delta_omega, float))
    g = ((1.0 + r) / 2.0) ** 2
    return g * (2.0 - 2.0 * c) / (1.0 + r * r - 2.0 * r * c)


def notch_response_1d(notch_bin: float, grid_size: int, spec: NotchFilterSpec = NotchFilterSpec()) -> np.ndarray:
    """Magnitude response on every bin of a ``grid_size`` FFT grid."""
    if not 0 <= notch_bin < grid_size:
        raise NotchError(f"notch bin {notch_bin} outside [0, {grid_size})")
    k = np.arange(grid_size)
    return notch_magnitude(2.0 * np.pi * (k - notch_bin) / grid_size, spec.pole_radius)


def notch_bandwidth_bins(grid_size: int, pole_radius: float) -> float:
    """-3 dB full width of the notch, in bins."""
    from scipy.optimize import brentq

    half = brentq(lambda w: notch_magnitude(w, pole_radius) - np.sqrt(0.5), 1e-9, np.pi)
    return 2.0 * half * grid_size / (2.0 * np.pi)


def compose_3d(h_theta, h_phi, h_v) -> np.ndarray:
    """Point-wise minimum of the three 1D responses broadcast to 3D."""
    h_theta = np.asarray(h_theta, float)
    h_phi = np.asarray(h_phi, float)
    h_v = np.asarray(h_v, float)
    return np.minimum(np.minimum(h_theta[:, None, None], h_phi[None, :, None]), h_v[None, None, :])


# --------------------------------------------------------------------------
# profile

def static_doppler_profile(velocity, k: int, azimuth_cosines, elevation_cosines, v_max: float,
                           doppler_grid: int, elevation_shift: float = 0.0) -> StaticDopplerProfile:
    """Static-scatterer Doppler over an (azimuth, elevation) direction-cosine grid."""
    v = np.asarray(velocity, float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise NotchError("velocity must be a finite 3-vector")
    u = np.asarray(azimuth_cosines, float)[:, None]
    w = np.asarray(elevation_cosines, float)[None, :]
    fwd2 = 1.0 - u * u - w * w
    with np.errstate(invalid="ignore"):
        fwd = np.where(fwd2 > 0, np.sqrt(np.where(fwd2 > 0, fwd2, 0.0)), np.nan)
    true = -(v[0] * u + v[1] * fwd + v[2] * w)
    folded = np.mod(true + 2.0 * k * v_max + v_max, 2.0 * v_max) - v_max
    dv = 2.0 * v_max / doppler_grid
    with np.errstate(invalid="ignore"):
        fold = np.where(np.isfinite(true), np.rint((folded - true) / (2.0 * v_max)), 0.0)
    return StaticDopplerProfile(true, folded, folded / dv + doppler_grid // 2, int(k), float(v_max), doppler_grid,
                                fold, float(elevation_shift))


def profile_for_image(velocity, k: int, image: RadarImage) -> StaticDopplerProfile:
    """Profile over the image's full angle grid (azimuth x every elevation bin)."""
    na, ne = image.grid["azimuth"], image.grid["elevation"]
    spacing = (image.coords["azimuth"][1] - image.coords["azimuth"][0]) if na > 1 else 2.0
    u = (np.arange(na) - na // 2) * spacing
    w = (np.arange(ne) - ne // 2) * spacing * na / ne
    return static_doppler_profile(velocity, k, u, w, image.v_max, image.grid["doppler"], image.fold_elevation_shift)


# --------------------------------------------------------------------------
# filtering

def _window_bins(center: float, half: int, size: int, wrap: bool):
    lo = int(np.ceil(center - half))
    hi = int(np.floor(center + half))
    idx = np.arange(lo, hi + 1)
    if wrap:
        return idx, np.mod(idx, size)
    keep = (idx >= 0) & (idx < size)
    return idx[keep], idx[keep]


def _circular_offset(x, center, n):
    return np.mod(np.asarray(x, float) - center + n / 2, n) - n / 2


def notch_mask(profile: StaticDopplerProfile, elevation_bins, spec: NotchFilterSpec = NotchFilterSpec()):
    """Combined multiplicative response over (azimuth, selected elevations, doppler).

    Each notch is applied only inside its localisation window; cells
    outside every window stay exactly 1.  The elevation grid is periodic,
    like the angle FFT that produced it.
    """
    na, ne = profile.doppler_bin.shape
    nd = profile.doppler_grid
    e_sel = np.asarray(elevation_bins, int)
    mask = np.ones((na, len(e_sel), nd))
    r = spec.pole_radius
    we = spec.elevation_half_width
    for e in range(ne):
        centers = profile.elevation_center(e)
        for a in range(na):
            d0 = profile.doppler_bin[a, e]
            if not np.isfinite(d0):
                continue
            e_off = _circular_offset(e_sel, centers[a], ne)
            e_local = np.flatnonzero(np.abs(e_off) <= we)
            if not len(e_local):
                continue
            if spec.notch_elevation:
                h_phi = notch_magnitude(2 * np.pi * e_off[e_local] / ne, r)
            else:
                h_phi = np.ones(len(e_local))
            a_off, a_idx = _window_bins(a, spec.azimuth_half_width, na, wrap=True)
            d_off, d_idx = _window_bins(d0, spec.doppler_half_width, nd, wrap=True)
            h_theta = notch_magnitude(2 * np.pi * (a_off - a) / na, r)
            h_v = notch_magnitude(2 * np.pi * (d_off - d0) / nd, r)
            mask[np.ix_(a_idx, e_local, d_idx)] *= compose_3d(h_theta, h_phi, h_v)
    return mask


def profile_row(profile: StaticDopplerProfile, elevation_bin: int) -> np.ndarray:
    """Fractional Doppler bins of the notches centred on one image elevation bin.

    Returns shape (m, N_azimuth); NaN marks "no notch".  m is 1 unless folded
    and unfolded clutter elevations land on the same image bin.  This is the
    input the 2D path needs to match the 3D path on that slice.
    """
    na, ne = profile.doppler_bin.shape
    rows = []
    for e in range(ne):
        hit = np.isclose(profile.elevation_center(e), elevation_bin) & np.isfinite(profile.doppler_bin[:, e])
        if not hit.any():
            continue
        for row in rows:
            if not np.any(hit & np.isfinite(row)):
                break
        else:
            row = np.full(na, np.nan)
            rows.append(row)
        row[hit] = profile.doppler_bin[hit, e]
    return np.array(rows).reshape(-1, na)


def _check_axes(image: RadarImage, profile: StaticDopplerProfile):
    for name in ("azimuth", "elevation", "doppler"):
        if name not in image.axes:
            raise NotchError(f"image lacks a {name} axis")
    if image.data.shape[image.axis("azimuth")] != profile.doppler_bin.shape[0]:
        raise NotchError("azimuth axis does not match profile")
    if image.grid.get("elevation") != profile.doppler_bin.shape[1]:
        raise NotchError("elevation grid does not match profile")
    if image.data.shape[image.axis("doppler")] != profile.doppler_grid:
        raise NotchError("doppler axis does not match profile")


def remove_background(image: RadarImage, profile: StaticDopplerProfile,
                      spec: NotchFilterSpec = NotchFilterSpec()) -> RadarImage:
    """Multiply the image by every localised static-clutter notch."""
    _check_axes(image, profile)
    mask = notch_mask(profile, image.bins["elevation"], spec)
    # axes are always a subsequence of (range, azimuth, elevation, doppler)
    shape = [1] * image.data.ndim
    for name, n in zip(("azimuth", "elevation", "doppler"), mask.shape):
        shape[image.axis(name)] = n
    return RadarImage(image.data * mask.reshape(shape), image.axes, dict(image.coords), dict(image.bins), dict(image.grid),
                      image.v_max)


def remove_background_2d(slice_ad: np.ndarray, profile_row, spec: NotchFilterSpec = NotchFilterSpec(),
                         ) -> np.ndarray:
    """Azimuth x Doppler variant for a fixed elevation slice.

    ``profile_row`` holds the fractional Doppler bin of the static clutter per
    azimuth bin (NaN = no notch), shape (N_azimuth,) or (m, N_azimuth).  Only
    notches of this elevation are used and the elevation response is taken
    as 1.
    """
    slice_ad = np.asarray(slice_ad, float)
    rows = np.asarray(profile_row, float)
    na, nd = slice_ad.shape
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != na:
        raise NotchError("profile row does not match azimuth axis")
    mask = np.ones((na, nd))
    r = spec.pole_radius
    for m, a in zip(*np.nonzero(np.isfinite(rows))):
        d0 = rows[m, a]
        a_off, a_idx = _window_bins(a, spec.azimuth_half_width, na, wrap=True)
        d_off, d_idx = _window_bins(d0, spec.doppler_half_width, nd, wrap=True)
        h_theta = notch_magnitude(2 * np.pi * (a_off - a) / na, r)
        h_v = notch_magnitude(2 * np.pi * (d_off - d0) / nd, r)
        mask[np.ix_(a_idx, d_idx)] *= np.minimum(h_theta[:, None], h_v[None, :])
    return slice_ad * mask
