import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egoradar.dsp import RadarImage, angle_axis, effective_v_max, make_image
from egoradar.notch import (NotchError, NotchFilterSpec, StaticDopplerProfile, compose_3d, notch_bandwidth_bins,
                            notch_magnitude, notch_mask, notch_response_1d, profile_for_image, profile_row,
                            remove_background, remove_background_2d, static_doppler_profile)
from egoradar.simulate import EgoTrajectory, PointTarget, Scene, synthesize_frame

NA, NE, ND = 32, 32, 256


def synthetic_image(data=None, v_max=16.0):
    data = np.ones((NA, NE, ND)) if data is None else data
    u = angle_axis(NA, 0.5, 1.0)
    return RadarImage(data, ("azimuth", "elevation", "doppler"),
                      {"azimuth": u, "elevation": angle_axis(NE, 0.5, 1.0), "doppler": np.zeros(ND)},
                      {"azimuth": np.arange(NA), "elevation": np.arange(NE)},
                      {"azimuth": NA, "elevation": NE, "doppler": ND}, v_max)


def single_notch_profile(a, e, d0):
    bins = np.full((NA, NE), np.nan)
    bins[a, e] = d0
    return StaticDopplerProfile(bins, bins, bins, 0, 16.0, ND, np.zeros((NA, NE)))


# --------------------------------------------------------------------------
# 1D response

@pytest.mark.parametrize("grid", [32, 128, 256])
def test_zero_at_integer_notch(grid):
    for k in (0, 5, grid // 2, grid - 1):
        assert notch_response_1d(k, grid)[k] <= 1e-3


def test_response_bounded_and_unity_half_turn_away():
    h = notch_response_1d(10, 128)
    assert h.min() >= 0 and h.max() <= 1 + 1e-12
    assert h[10 + 64] == pytest.approx(1.0)


def test_pole_radius_to_one_limit():
    h = notch_response_1d(40, 128, NotchFilterSpec(pole_radius=0.9999))
    far = np.abs(np.arange(128) - 40) >= 2
    assert h[far].min() > 0.99


def test_above_09_farther_than_6_bins():
    h = notch_response_1d(50, 128)
    dist = np.abs(np.arange(128) - 50)
    assert h[dist > 6].min() >= 0.9


@pytest.mark.parametrize("grid", [32, 128, 256])
def test_passband_beyond_three_bandwidths(grid):
    bw = notch_bandwidth_bins(grid, 0.9)
    h = notch_response_1d(grid // 3, grid)
    dist = np.abs(np.arange(grid) - grid // 3)
    dist = np.minimum(dist, grid - dist)
    assert 20 * np.log10(h[dist > 3 * bw].min()) >= -1.0


def test_bandwidth_is_half_power_width():
    bw = notch_bandwidth_bins(128, 0.9)
    assert notch_magnitude(np.pi * bw / 128, 0.9) == pytest.approx(np.sqrt(0.5))


def test_notch_bin_outside_grid():
    with pytest.raises(NotchError):
        notch_response_1d(128, 128)


def test_spec_validated():
    with pytest.raises(NotchError):
        NotchFilterSpec(pole_radius=1.0)
    with pytest.raises(NotchError):
        NotchFilterSpec(doppler_half_width=0)


@given(st.floats(-np.pi, np.pi), st.floats(0.5, 0.999))
@settings(max_examples=200, deadline=None)
def test_magnitude_within_unit_interval(w, r):
    assert -1e-12 <= notch_magnitude(w, r) <= 1 + 1e-12


# --------------------------------------------------------------------------
# composition

def test_compose_zero_at_notch_point():
    h = compose_3d(notch_response_1d(3, 16), notch_response_1d(5, 16), notch_response_1d(7, 32))
    assert h[3, 5, 7] == 0.0


def test_compose_identity_cases():
    a, b = notch_response_1d(3, 16), notch_response_1d(5, 20)
    ones = np.ones(24)
    np.testing.assert_array_equal(compose_3d(a, b, ones)[:, :, 4], np.minimum(a[:, None], b[None, :]))
    np.testing.assert_array_equal(compose_3d(np.ones(4), np.ones(5), np.ones(6)), np.ones((4, 5, 6)))


# --------------------------------------------------------------------------
# profile

def test_profile_u_shape():
    u = np.linspace(-0.9, 0.9, 19)
    p = static_doppler_profile((0, 8, 0), 0, u, [0.0], 16.2, 256)
    np.testing.assert_allclose(p.true_doppler[:, 0], -8 * np.sqrt(1 - u ** 2))
    np.testing.assert_allclose(p.doppler, p.true_doppler)


def test_profile_zero_velocity():
    p = static_doppler_profile((0, 0, 0), 0, np.linspace(-0.5, 0.5, 5), np.linspace(-0.3, 0.3, 3), 16.2, 256)
    np.testing.assert_array_equal(p.doppler, 0.0)
    np.testing.assert_array_equal(p.doppler_bin, 128.0)


def test_profile_fold_arithmetic():
    p = static_doppler_profile((0, 8, 0), 1, [0.0], [0.0], 5.5, 256)
    assert p.doppler[0, 0] == pytest.approx(3.0)
    assert p.fold[0, 0] == 1


def test_profile_infeasible_cells_nan():
    p = static_doppler_profile((0, 8, 0), 0, [0.9], [0.9], 16.2, 256)
    assert np.isnan(p.doppler_bin[0, 0])


def test_profile_rejects_bad_velocity():
    with pytest.raises(NotchError):
        static_doppler_profile((0, np.nan, 0), 0, [0.0], [0.0], 16.2, 256)


# --------------------------------------------------------------------------
# filtering

def test_notch_point_attenuated():
    img = synthetic_image()
    out = remove_background(img, single_notch_profile(10, 12, 100.0))
    assert out.data[10, 12, 100] == 0.0


def test_passband_preserved():
    bw = notch_bandwidth_bins(ND, 0.9)
    img = synthetic_image()
    out = remove_background(img, single_notch_profile(10, 12, 100.0))
    d = int(np.ceil(100 + 3 * bw)) + 1
    assert 20 * np.log10(out.data[10, 12, d]) >= -1.0


def test_untouched_outside_windows():
    rng = np.random.default_rng(0)
    img = synthetic_image(rng.random((NA, NE, ND)))
    spec = NotchFilterSpec()
    out = remove_background(img, single_notch_profile(10, 12, 100.0), spec)
    mask = np.ones((NA, NE, ND), bool)
    mask[6:15, 8:17, 96:105] = False
    np.testing.assert_array_equal(out.data[mask], img.data[mask])


def test_zero_velocity_notches_zero_doppler_line_only():
    img = synthetic_image()
    u = img.coords["azimuth"]
    prof = static_doppler_profile((0, 0, 0), 0, u, img.coords["elevation"], 16.0, ND)
    out = remove_background(img, prof)
    changed = np.nonzero(out.data != img.data)[2]
    assert changed.min() >= ND // 2 - 4 and changed.max() <= ND // 2 + 4
    feasible = np.isfinite(prof.doppler_bin)
    assert np.all(out.data[..., ND // 2][feasible] == 0.0)


def _clutter_image(cfg):
    targets = tuple(PointTarget((x, 12.0, z)) for x in (-6, -2, 2, 6) for z in (-1, 1))
    scene = Scene(EgoTrajectory((0.5, 8.0, -0.3)), targets)
    return make_image(synthesize_frame(scene, cfg, 0), cfg, elevation_rad=0.0)


def test_filter_never_increases_and_hits_centers(sim_cfg):
    img = _clutter_image(sim_cfg)
    prof = profile_for_image((0.5, 8.0, -0.3), 0, img)
    out = remove_background(img, prof)
    assert np.all(out.data >= 0) and np.all(out.data <= img.data)
    e = int(img.bins["elevation"][0])
    mask = notch_mask(prof, [e])[:, 0, :]
    for a in range(img.grid["azimuth"]):
        d0 = prof.doppler_bin[a, e]
        if np.isfinite(d0):
            assert 20 * np.log10(mask[a, int(np.rint(d0)) % ND] + 1e-300) <= -25


def test_2d_and_3d_paths_agree(sim_cfg):
    img = _clutter_image(sim_cfg)
    prof = profile_for_image((0.5, 8.0, -0.3), 0, img)
    spec = NotchFilterSpec(elevation_half_width=0, notch_elevation=False)
    e = int(img.bins["elevation"][0])
    p3 = remove_background(img, prof, spec).data[:, :, 0, :]
    row = profile_row(prof, e)
    p2 = np.stack([remove_background_2d(img.data[r, :, 0, :], row, spec) for r in range(img.data.shape[0])])
    assert np.max(np.abs(p2 - p3)) <= 1e-9 * np.abs(p3).max()


def test_fold_shift_moves_notch_in_elevation():
    img = synthetic_image()
    prof = single_notch_profile(10, 12, 100.0)
    prof.fold[10, 12] = 1
    prof.elevation_shift = 8.0
    out = remove_background(img, prof)
    assert out.data[10, 20, 100] == 0.0
    assert out.data[10, 12, 100] == 1.0


def test_axis_mismatch_rejected():
    img = synthetic_image(np.ones((NA, NE, 128)))
    with pytest.raises(NotchError):
        remove_background(img, single_notch_profile(1, 1, 5.0))
    with pytest.raises(NotchError):
        remove_background_2d(np.ones((NA, ND)), np.zeros(NA + 1))
