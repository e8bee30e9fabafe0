import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rel_err, stripped
from isacsim.estimators.oned import eig_desc, sample_covariance
from isacsim.ofdm import (OfdmConfig, SensingTensor, TensorKind, load_tensor, noise_free_tensor, qpsk_symbols,
                          reshape_angle, reshape_delay, reshape_doppler, save_tensor, strip_symbols, synthesize,
                          trial_rng)
from isacsim.scene import ArrayGeometry, Carrier, DomainError, Scene, Target


def test_numerology_of_baseline(ofdm):
    assert ofdm.bandwidth == pytest.approx(15.36e6)
    assert ofdm.cpi == pytest.approx(666.67e-6, rel=1e-4)


def test_snr_calibration_over_seeds(three, ofdm):
    clean = noise_free_tensor(three, ofdm)
    power = np.mean(np.abs(clean) ** 2)
    for seed in range(100):
        t = synthesize(three, ofdm, snr_db=5.0, seed=seed)
        noise = t.data - clean
        measured = 10 * np.log10(power / np.mean(np.abs(noise) ** 2))
        assert abs(measured - 5.0) <= 0.2


def test_noise_free_synthesis_is_bit_reproducible(three, ofdm):
    a = synthesize(three, ofdm, qpsk_symbols(128, 64, 3))
    b = synthesize(three, ofdm, qpsk_symbols(128, 64, 3))
    assert a.data.tobytes() == b.data.tobytes()


def test_same_seed_same_noise(three, ofdm):
    a = synthesize(three, ofdm, snr_db=0.0, seed=11)
    b = synthesize(three, ofdm, snr_db=0.0, seed=11)
    assert a.data.tobytes() == b.data.tobytes()


def test_spatial_covariance_rank_matches_target_count(three_clean):
    w, _ = eig_desc(sample_covariance(reshape_angle(three_clean)))
    assert np.sum(w > 1e-9 * w[0]) == 3


def test_single_static_broadside_target_gives_all_ones():
    scene = Scene(ArrayGeometry(4), Carrier(), [Target(0.0, 1e-9, 0.0)])
    y = noise_free_tensor(scene, OfdmConfig(8, 4))
    np.testing.assert_allclose(y, np.ones((4, 8, 4)), atol=1e-12)


def test_opposite_gains_cancel():
    t = Target(12.0, 40.0, 5.0)
    scene = Scene(ArrayGeometry(8), Carrier(), [t, Target(12.0, 40.0, 5.0, -1.0)])
    assert np.max(np.abs(noise_free_tensor(scene, OfdmConfig(16, 8)))) == 0.0


def test_ambiguous_target_reports_its_index():
    scene = Scene(ArrayGeometry(8), Carrier(), [Target(0, 10), Target(0, 2000)])
    with pytest.raises(DomainError, match="target 1"):
        noise_free_tensor(scene, OfdmConfig())


def test_stripping_random_symbols_equals_unit_symbols(three, ofdm):
    b = qpsk_symbols(128, 64, 5)
    s = strip_symbols(synthesize(three, ofdm, b), b).data
    assert rel_err(s, noise_free_tensor(three, ofdm)) <= 1e-12


def test_strip_with_unit_symbols_is_identity(three, ofdm):
    t = synthesize(three, ofdm)
    assert np.array_equal(strip_symbols(t, np.ones((128, 64))).data, t.data)


def test_strip_then_remultiply_recovers_tensor(three, ofdm):
    b = qpsk_symbols(128, 64, 2)
    t = synthesize(three, ofdm, b, snr_db=10, seed=1)
    back = strip_symbols(t, b).data * b[None]
    np.testing.assert_allclose(back, t.data, rtol=0, atol=1e-13)


def test_strip_refuses_zero_symbols(three, ofdm):
    b = np.ones((128, 64))
    b[3, 4] = 0
    with pytest.raises(ZeroDivisionError):
        strip_symbols(synthesize(three, ofdm), b)


def test_delay_reshape_needs_stripped_tensor(three, ofdm):
    with pytest.raises(ValueError):
        reshape_delay(synthesize(three, ofdm))


def test_angle_reshape_column_order(three_clean):
    X = reshape_angle(three_clean)
    rng = np.random.default_rng(0)
    for n, p in zip(rng.integers(0, 128, 20), rng.integers(0, 64, 20)):
        np.testing.assert_array_equal(X[:, n + p * 128], three_clean.data[:, n, p])


def test_reshape_shapes(three_clean):
    assert reshape_angle(three_clean).shape == (16, 128 * 64)
    assert reshape_delay(three_clean).shape == (128, 16 * 64)
    assert reshape_doppler(three_clean).shape == (64, 16 * 128)


def test_single_target_delay_snapshots_share_one_steering(ofdm):
    scene = Scene(ArrayGeometry(8), Carrier(), [Target(20.0, 35.0, 9.0)])
    X = reshape_delay(stripped(scene, ofdm))
    s = np.linalg.svd(X, compute_uv=False)
    assert s[1] / s[0] <= 1e-10


def test_tensor_file_round_trip(tmp_path, three, ofdm):
    t = stripped(three, ofdm, 10.0, 4)
    save_tensor(t, tmp_path / "y.bin")
    back = load_tensor(tmp_path / "y.bin")
    assert back.kind is TensorKind.STRIPPED
    np.testing.assert_array_equal(back.data, t.data.astype(np.complex64))


def test_tensor_loader_rejects_foreign_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a tensor")
    with pytest.raises(ValueError):
        load_tensor(tmp_path / "x.bin")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 1000), st.integers(0, 1000))
def test_trial_streams_depend_only_on_counter(seed, i, t):
    a = trial_rng(seed, i, t).standard_normal(4)
    b = trial_rng(seed, i, t).standard_normal(4)
    c = trial_rng(seed, i, t + 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_qpsk_is_unit_modulus():
    np.testing.assert_allclose(np.abs(qpsk_symbols(32, 16, 0)), 1.0)


def test_sensing_tensor_defaults_to_unstripped():
    assert SensingTensor(np.zeros((2, 2, 2))).kind is TensorKind.WITH_SYMBOLS
