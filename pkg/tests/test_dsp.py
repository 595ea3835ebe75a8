import numpy as np
import pytest

from egoradar.dsp import (CfarParams, DspError, ExtractParams, angle_axis, aoa_estimate, aoa_spectrum, cfar_2d,
                          detections_to_array, doppler_axis, effective_v_max, extract_pointcloud, make_image,
                          range_bin_m, range_doppler_transform, tdm_fold_correction, tdm_phase_compensate)
from egoradar.scenarios import paper_drive
from egoradar.simulate import (EgoTrajectory, PointTarget, Scene, ground_truth_pointcloud, synthesize_frame,
                               synthesize_targets)


def angle_bin(cfg):
    """Direction-cosine width of one angle-FFT bin."""
    return cfg.wavelength / (cfg.element_spacing_m * cfg.azimuth_fft_size)


def within_one_bin(det, row, cfg):
    r, vr, az, el = row
    dv = 2 * effective_v_max(cfg) / cfg.doppler_fft_size
    du = angle_bin(cfg)
    return (abs(det[0] - r) <= range_bin_m(cfg)
            and abs(det[1] - vr) <= dv
            and abs(np.sin(det[2]) * np.cos(det[3]) - np.sin(az) * np.cos(el)) <= du
            and abs(np.sin(det[3]) - np.sin(el)) <= du)


# --------------------------------------------------------------------------
# range-Doppler transform

def test_single_tone_lands_on_predicted_bins(sim_cfg):
    ns, nc = sim_cfg.samples_per_chirp, sim_cfg.chirps_per_tx_per_frame
    f_beat = 20 / 128 * sim_cfg.sample_rate_hz
    tone = np.exp(2j * np.pi * f_beat * np.arange(ns) / sim_cfg.sample_rate_hz)
    cube = np.broadcast_to(tone[:, None, None, None], (ns, nc, 8, 8)).astype(complex)
    mag = range_doppler_transform(cube, sim_cfg).magnitude
    assert np.unravel_index(np.argmax(mag), mag.shape) == (20, sim_cfg.doppler_fft_size // 2)


def test_zero_cube_gives_zero_map(sim_cfg):
    rd = range_doppler_transform(np.zeros((128, 255, 8, 8), complex), sim_cfg)
    assert rd.magnitude.shape == (128, 256)
    assert not rd.magnitude.any()


def test_slow_time_phase_step_shifts_doppler(sim_cfg):
    cube = synthesize_targets(np.array([[10.0, 0.0, 0.0, 0.0]]), [1.0], sim_cfg)
    step = np.exp(2j * np.pi * 5 * np.arange(255) / 256)
    shifted = cube * step[None, :, None, None]
    a = range_doppler_transform(cube, sim_cfg).magnitude
    b = range_doppler_transform(shifted, sim_cfg).magnitude
    ra, da = np.unravel_index(np.argmax(a), a.shape)
    rb, db = np.unravel_index(np.argmax(b), b.shape)
    # positive phase ramp = shrinking delay = closing target, i.e. lower bins
    assert ra == rb and db - da == -5


def test_shape_mismatch_rejected(sim_cfg):
    with pytest.raises(DspError):
        range_doppler_transform(np.zeros((10, 10, 8, 8), complex), sim_cfg)


# --------------------------------------------------------------------------
# CFAR

def test_cfar_single_cell():
    mag = np.zeros((64, 64))
    mag[30, 40] = 5.0
    assert cfar_2d(mag) == [(30, 40)]


def test_cfar_zero_map():
    assert cfar_2d(np.zeros((64, 64))) == []


def test_cfar_two_separated_targets():
    mag = np.zeros((128, 128))
    mag[20, 30] = mag[90, 100] = 50.0
    assert cfar_2d(mag) == [(20, 30), (90, 100)]


def test_cfar_merges_across_doppler_wrap():
    mag = np.zeros((64, 64))
    mag[30, 0] = 5.0
    mag[30, 63] = 4.0
    assert cfar_2d(mag) == [(30, 0)]


def test_cfar_rejects_tiny_map():
    with pytest.raises(DspError):
        cfar_2d(np.zeros((10, 10)))
    with pytest.raises(DspError):
        cfar_2d(np.zeros((64, 64)), false_alarm_prob=0.0)


# --------------------------------------------------------------------------
# TDM compensation and angle estimation

def test_tdm_zero_doppler_is_identity(sim_cfg, rng):
    x = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    np.testing.assert_array_equal(tdm_phase_compensate(x, 0.0, sim_cfg), x)
    np.testing.assert_array_equal(tdm_phase_compensate(x, 7.3, sim_cfg)[:, 0], x[:, 0])


def _snapshot(cfg, az, el):
    p, q = np.meshgrid(np.arange(cfg.num_rx), np.arange(cfg.num_tx), indexing="ij")
    u, v = np.sin(az) * np.cos(el), np.sin(el)
    return np.exp(2j * np.pi * cfg.element_spacing_m * (p * u + q * v) / cfg.wavelength)


def test_aoa_boresight(sim_cfg):
    spec = np.abs(aoa_spectrum(_snapshot(sim_cfg, 0.0, 0.0), sim_cfg))
    assert np.unravel_index(np.argmax(spec), spec.shape) == (64, 64)
    assert aoa_estimate(_snapshot(sim_cfg, 0.0, 0.0), sim_cfg) == (0.0, 0.0)


def test_aoa_thirty_degrees(sim_cfg):
    snap = _snapshot(sim_cfg, np.deg2rad(30), 0.0)
    spec = np.abs(aoa_spectrum(snap, sim_cfg))
    a, _ = np.unravel_index(np.argmax(spec), spec.shape)
    assert abs((a - 64) - 0.5 * 128 / 2) <= 1
    az, el = aoa_estimate(snap, sim_cfg)
    assert abs(np.sin(az) - 0.5) <= angle_bin(sim_cfg)


def test_aoa_conjugate_negates(sim_cfg):
    snap = _snapshot(sim_cfg, np.deg2rad(20), np.deg2rad(-10))
    az, el = aoa_estimate(snap, sim_cfg)
    az_c, el_c = aoa_estimate(np.conj(snap), sim_cfg)
    assert abs(np.sin(az_c) + np.sin(az)) <= angle_bin(sim_cfg)
    assert abs(np.sin(el_c) + np.sin(el)) <= angle_bin(sim_cfg)


def test_angle_axis_is_centered():
    ax = angle_axis(128, 0.5, 1.0)
    assert ax[64] == 0.0 and ax[0] == -1.0


# --------------------------------------------------------------------------
# point cloud extraction

def test_single_static_target_round_trip(sim_cfg):
    scene = Scene(EgoTrajectory((0.5, 8.0, -0.3)), (PointTarget((2.0, 12.0, 1.0)),))
    truth = ground_truth_pointcloud(scene, sim_cfg, 0)
    dets = detections_to_array(extract_pointcloud(synthesize_frame(scene, sim_cfg, 0), sim_cfg))
    assert len(dets) == 1
    assert within_one_bin(dets[0], truth.targets[0], sim_cfg)


def test_rectangular_window_round_trip(sim_cfg):
    row = np.array([[11.3, -3.2, 0.2, -0.1]])
    params = ExtractParams(range_window="rect", doppler_window="rect", peak_interpolation=False)
    dets = detections_to_array(extract_pointcloud(synthesize_targets(row, [1.0], sim_cfg), sim_cfg, params))
    assert any(within_one_bin(d, row[0], sim_cfg) for d in dets)


def test_empty_scene_gives_empty_cloud(sim_cfg):
    assert extract_pointcloud(np.zeros((128, 255, 8, 8), complex), sim_cfg) == []
    assert detections_to_array([]).shape == (0, 5)


def test_paper_scene_detects_static_and_moving(sim_cfg):
    scene = paper_drive()
    truth = ground_truth_pointcloud(scene, sim_cfg, 0)
    dets = detections_to_array(extract_pointcloud(synthesize_frame(scene, sim_cfg, 0), sim_cfg))
    # attribute every detection to the nearest truth scatterer in (range, doppler)
    d2 = (dets[:, None, 0] - truth.ranges[None]) ** 2 + (dets[:, None, 1] - truth.dopplers[None]) ** 2
    nearest = np.argmin(d2, axis=1)
    assert truth.is_static[nearest].sum() >= 6
    assert (~truth.is_static[nearest]).sum() >= 1


def test_doppler_aliasing_folds_into_interval(sim_cfg):
    vmax = effective_v_max(sim_cfg)
    row = np.array([[10.0, vmax + 2.0, 0.0, 0.0]])
    dets = detections_to_array(extract_pointcloud(synthesize_targets(row, [1.0], sim_cfg), sim_cfg))
    assert len(dets) == 1
    assert dets[0, 1] == pytest.approx(-vmax + 2.0, abs=2 * vmax / 256)


def test_doppler_axis_matches_effective_v_max(sim_cfg):
    ax = doppler_axis(sim_cfg)
    assert ax[128] == 0.0
    assert ax[0] == pytest.approx(-effective_v_max(sim_cfg))
    assert effective_v_max(sim_cfg) == pytest.approx(sim_cfg.v_max, rel=5e-3)


def test_fold_correction_restores_elevation(amb_cfg):
    el = 0.2
    row = np.array([[10.0, -8.0, 0.1, el]])
    dets = detections_to_array(extract_pointcloud(synthesize_targets(row, [1.0], amb_cfg), amb_cfg))
    assert len(dets) == 1
    correct = tdm_fold_correction(amb_cfg)
    az0, el0 = correct(0, dets[:, 2], dets[:, 3])
    np.testing.assert_array_equal(el0, dets[:, 3])
    _, el1 = correct(1, dets[:, 2], dets[:, 3])
    assert abs(np.sin(el1[0]) - np.sin(el)) <= angle_bin(amb_cfg)
    assert abs(np.sin(dets[0, 3]) - np.sin(el)) > 0.2


# --------------------------------------------------------------------------
# images

def test_boresight_image_peak(sim_cfg):
    scene = Scene(EgoTrajectory((0.0, 8.0, 0.0)), (PointTarget((0.0, 10.0, 0.0)),))
    img = make_image(synthesize_frame(scene, sim_cfg, 0), sim_cfg, elevation_rad=0.0).doppler_azimuth()
    assert img.axes == ("azimuth", "doppler")
    a, d = np.unravel_index(np.argmax(img.data), img.data.shape)
    assert img.coords["azimuth"][a] == 0.0
    assert img.coords["doppler"][d] == pytest.approx(-8.0, abs=2 * effective_v_max(sim_cfg) / 256)


def test_zero_cube_gives_zero_image(sim_cfg):
    img = make_image(np.zeros((128, 255, 8, 8), complex), sim_cfg, elevation_rad=0.0)
    assert img.data.shape == (128, 32, 1, 256)
    assert not img.data.any()


def test_static_ridge_follows_u_shape(sim_cfg):
    az = np.deg2rad([-50, -25, 0, 25, 50])
    targets = tuple(PointTarget((10 * np.sin(a), 10 * np.cos(a), 0.0)) for a in az)
    scene = Scene(EgoTrajectory((0.0, 8.0, 0.0)), targets)
    img = make_image(synthesize_frame(scene, sim_cfg, 0), sim_cfg, elevation_rad=0.0).doppler_azimuth()
    u = img.coords["azimuth"]
    vel = img.coords["doppler"]
    for a in az:
        col = int(np.argmin(np.abs(u - np.sin(a))))
        assert vel[np.argmax(img.data[col])] == pytest.approx(-8 * np.cos(a), abs=0.3)


def test_image_range_gate_bounds(sim_cfg):
    with pytest.raises(DspError):
        make_image(np.zeros((128, 255, 8, 8), complex), sim_cfg, range_gate=500)
