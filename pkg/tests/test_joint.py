import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rel_err, stripped
from isacsim.estimators.axes import angle_axis, delay_axis, doppler_axis
from isacsim.estimators.joint import (SUBSPACE_CAP, SmoothingWindow, SubspaceTooLarge, auto_window,
                                      direct_spectrum2d, mssp, music2d, music3d, periodogram2d, periodogram3d,
                                      subspace_peaks)
from isacsim.estimators.oned import eig_desc, periodogram
from isacsim.estimators.spectrum import Spectrum2D, SpectrumND, find_peaks, find_peaks_nd
from isacsim.ofdm import OfdmConfig, reshape_angle
from isacsim.scene import ArrayGeometry, Carrier, Scene, Target

SMALL = OfdmConfig(16, 8)


def delay_doppler(ofdm, delays, dopplers, gains=None):
    """N x P single-antenna matrix of point targets."""
    At = delay_axis(ofdm).steering(np.asarray(delays, float))
    Av = doppler_axis(ofdm).steering(np.asarray(dopplers, float))
    g = np.ones(len(delays)) if gains is None else np.asarray(gains)
    return (At * g) @ Av.T


def cells_off(point, truth, steps):
    return np.abs(np.asarray(point) - np.asarray(truth)) / np.asarray(steps)


# --- smoothing ---------------------------------------------------------------------

def test_full_window_gives_single_vectorized_snapshot():
    X = np.arange(12.0).reshape(3, 4)
    S = mssp(X, (3, 4))
    assert S.shape == (12, 1)
    np.testing.assert_array_equal(S[:, 0], X.ravel(order="F"))


def test_smoothing_output_shape():
    assert mssp(np.zeros((128, 64)), (64, 32)).shape == (2048, 65 * 33)


def test_window_larger_than_data_is_rejected():
    with pytest.raises(ValueError):
        mssp(np.zeros((8, 8)), (9, 2))


def test_single_target_smoothed_covariance_is_rank_one(ofdm):
    S = mssp(delay_doppler(ofdm, [0.3e-6], [1500.0]), (16, 8))
    w, _ = eig_desc(S @ S.conj().T)
    assert w[1] <= 1e-12 * w[0]


def test_smoothing_restores_rank_of_coherent_targets(ofdm):
    X = delay_doppler(ofdm, [0.2e-6, 0.5e-6], [1000.0, 3000.0])
    assert mssp(X, X.shape).shape[1] == 1  # one snapshot: rank one whatever the target count
    S = mssp(X, (16, 8))
    w, _ = eig_desc(S @ S.conj().T)
    assert w[1] / w[0] > 1e-3 and w[2] <= 1e-10 * w[0]


def test_kronecker_ordering_2d(ofdm):
    tau, nu = 0.41e-6, -2200.0
    s = mssp(delay_doppler(ofdm, [tau], [nu]), (8, 4))[:, 0]
    ref = np.kron(doppler_axis(ofdm, 4).steering(nu), delay_axis(ofdm, 8).steering(tau))
    assert rel_err(s / s[0], ref / ref[0]) <= 1e-10


def test_kronecker_ordering_3d():
    geom = ArrayGeometry(8)
    scene = Scene(geom, Carrier(), [Target(17.0, 120.0, 30.0)])
    Y = stripped(scene, SMALL).data
    s = mssp(Y, (4, 8, 4))[:, 0]
    tau, nu = scene.delays()[0], scene.dopplers()[0]
    ref = np.kron(np.kron(doppler_axis(SMALL, 4).steering(nu), delay_axis(SMALL, 8).steering(tau)),
                  angle_axis(geom).with_length(4).steering(17.0))
    assert rel_err(s / s[0], ref / ref[0]) <= 1e-10


# --- 2D spectra --------------------------------------------------------------------

def test_periodogram2d_equals_direct_matched_filter(ofdm):
    X = delay_doppler(ofdm, [0.13e-6, 0.53e-6, 0.33e-6], [1490.0, 2240.0, 3730.0])
    fft = periodogram2d(X, ofdm, 256, 128)
    direct = direct_spectrum2d(X, ofdm, *fft.grids)
    assert rel_err(fft.power, direct.power) <= 1e-9


def test_periodogram2d_of_zero_is_zero(ofdm):
    assert not np.any(periodogram2d(np.zeros((128, 64)), ofdm).power)


def test_periodogram2d_rejects_small_fft(ofdm):
    with pytest.raises(ValueError):
        periodogram2d(np.zeros((128, 64)), ofdm, 64, 64)


def test_single_target_2d_spectrum_is_separable(ofdm):
    X = delay_doppler(ofdm, [0.37e-6], [2600.0])
    two = periodogram2d(X, ofdm, 512, 256).power
    d = periodogram(X, delay_axis(ofdm), 512).power
    v = periodogram(X.T, doppler_axis(ofdm), 256).power
    assert rel_err(two, np.outer(d, v)) <= 1e-9


def test_music2d_null_property(ofdm):
    delays, dopplers = [0.13e-6, 0.53e-6, 0.33e-6], [1490.0, 2240.0, 3730.0]
    spec = music2d(delay_doppler(ofdm, delays, dopplers), ofdm, 3, (64, 32))
    ev = spec.meta["model"].evaluator
    for t, v in zip(delays, dopplers):
        den = ev.denominator((np.array([t]), np.array([v])))[0, 0]
        assert np.sqrt(den) <= 1e-6 * np.sqrt(64 * 32)


def test_music2d_single_target_peak_within_one_cell(ofdm):
    tau, nu = 0.271e-6, -1234.0
    rng = np.random.default_rng(1)
    X = delay_doppler(ofdm, [tau], [nu]) + 0.1 * (rng.standard_normal((128, 64)) + 1j * rng.standard_normal((128, 64)))
    spec = music2d(X, ofdm, 1, (32, 16))
    i, j = np.unravel_index(np.argmax(spec.power), spec.power.shape)
    off = cells_off([spec.grids[0][i], spec.grids[1][j]], [tau, nu], [ofdm.delay_resolution, ofdm.doppler_resolution])
    assert np.all(off <= 1.0)


def test_music2d_window_cap(ofdm):
    with pytest.raises(SubspaceTooLarge):
        music2d(np.zeros((128, 64)), ofdm, 1, (128, 64))


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi))
def test_2d_peaks_invariant_to_complex_scaling(mag, phase):
    ofdm = OfdmConfig(32, 16)
    rng = np.random.default_rng(4)
    X = delay_doppler(ofdm, [0.5e-6, 2.0e-6], [1000.0, -3000.0])
    X = X + 0.05 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    c = mag * np.exp(1j * phase)
    for fn in (lambda Z: periodogram2d(Z, ofdm), lambda Z: music2d(Z, ofdm, 2)):
        a = find_peaks_nd(fn(X), 2).points
        b = find_peaks_nd(fn(c * X), 2).points
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


# --- 3D spectra --------------------------------------------------------------------

def test_periodogram3d_finds_three_triples(three, three_clean, ofdm):
    spec = periodogram3d(three_clean, three.geometry, ofdm)
    pk = find_peaks_nd(spec, 3)
    steps = [np.nan, ofdm.delay_resolution, ofdm.doppler_resolution]
    cell = angle_axis(three.geometry).cell
    for truth in three.truth():
        off = cells_off(pk.points, truth, [cell] + steps[1:])
        assert np.any(np.all(off <= 1.0, axis=1)), truth


def test_periodogram3d_origin_target():
    scene = Scene(ArrayGeometry(8), Carrier(), [Target(0.0, 1e-9, 0.0)])
    spec = periodogram3d(stripped(scene, SMALL), scene.geometry, SMALL)
    idx = np.unravel_index(np.argmax(spec.power), spec.power.shape)
    assert spec.grids[0][idx[0]] == pytest.approx(0.0, abs=1e-9)
    assert spec.grids[1][idx[1]] == 0.0 and spec.grids[2][idx[2]] == 0.0


def test_periodogram3d_projection_matches_1d(three, three_clean, ofdm):
    spec = periodogram3d(three_clean, three.geometry, ofdm, (64, 256, 128))
    proj = SpectrumND((spec.grids[0],), spec.power.max(axis=(1, 2)), ("angle",))
    p3 = np.sort(find_peaks_nd(proj, 3, interpolate=False).points[:, 0])
    one = periodogram(reshape_angle(three_clean), angle_axis(three.geometry), 64)
    p1 = np.sort(find_peaks(one, 3, interpolate=False).params)
    np.testing.assert_allclose(p3, p1, atol=1e-9)


@pytest.fixture(scope="module")
def small_scene():
    return Scene(ArrayGeometry(8), Carrier(),
                 [Target(-15.0, 300.0, 40.0), Target(25.0, 700.0, -60.0)])


def test_music3d_null_property(small_scene):
    spec = music3d(stripped(small_scene, SMALL), small_scene.geometry, SMALL, 2, (4, 8, 4))
    ev = spec.meta["model"].evaluator
    for th, tau, nu in small_scene.truth():
        den = ev.denominator((np.array([th]), np.array([tau]), np.array([nu]))).item()
        assert np.sqrt(den) <= 1e-6 * np.sqrt(4 * 8 * 4)


def test_music3d_peaks_within_coarse_cell(small_scene):
    spec = music3d(stripped(small_scene, SMALL, 10.0, 3), small_scene.geometry, SMALL, 2, (4, 8, 4))
    pk = subspace_peaks(spec, 2)
    steps = [np.median(np.diff(g)) for g in spec.grids]
    steps[0] = 2 * np.max(np.diff(spec.grids[0]))
    for truth in small_scene.truth():
        assert np.any(np.all(cells_off(pk.points, truth, steps) <= 1.0, axis=1)), truth


def test_music3d_refuses_oversized_window(three_clean, three, ofdm):
    with pytest.raises(SubspaceTooLarge):
        music3d(three_clean, three.geometry, ofdm, 3, (16, 32, 16))


def test_music3d_default_window_fits_cap(three, ofdm):
    assert int(np.prod(auto_window((16, 128, 64)))) <= SUBSPACE_CAP // 2
    assert SmoothingWindow((8, 16, 16)).dimension == 2048


@settings(max_examples=5, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi))
def test_3d_peaks_invariant_to_complex_scaling(small_scene, mag, phase):
    Y = stripped(small_scene, SMALL, 10.0, 8).data
    c = mag * np.exp(1j * phase)
    a = subspace_peaks(music3d(Y, small_scene.geometry, SMALL, 2, (4, 8, 4)), 2).points
    b = subspace_peaks(music3d(c * Y, small_scene.geometry, SMALL, 2, (4, 8, 4)), 2).points
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-12)
    a = find_peaks_nd(periodogram3d(Y, small_scene.geometry, SMALL), 2).points
    b = find_peaks_nd(periodogram3d(c * Y, small_scene.geometry, SMALL), 2).points
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_spectrum_file_round_trip(tmp_path, ofdm):
    spec = periodogram2d(delay_doppler(ofdm, [0.3e-6], [1500.0]), ofdm)
    spec.save(tmp_path / "s.bin")
    back = Spectrum2D.load(tmp_path / "s.bin")
    assert back.names == spec.names
    for a, b in zip(back.grids, spec.grids):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(back.power, spec.power, rtol=1e-6)
