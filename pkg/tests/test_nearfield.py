import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isacsim.estimators.oned import EstimationError, sample_covariance
from isacsim.nearfield import (NearFieldGrid, bf2d, covariance_bundle, estimate_nearfield, farfield_mismatch_demo,
                               fft_enhanced, gamma_matrix, gen_esprit_spectrum, generalized_esprit,
                               modified_music, music2d_estimate, null_residual, psi_from_phase, rdrr_decompose,
                               rr_estimate, rr_spectrum, soc_estimate, soc_sequences, spatial_snapshots, xi_vector)
from isacsim.scene import (ArrayGeometry, Carrier, DomainError, Reference, Target, fresnel_phases,
                           rayleigh_distance, steer_near_fresnel)

C28 = Carrier(28e9)
WIDE = ArrayGeometry(257, 0.25, Reference.CENTER)
PAIR = [Target(10.0, 5.0), Target(20.0, 10.0)]


def fresnel_data(geom, pairs, Q=None):
    """Snapshots of the quadratic-phase model with exactly orthogonal source sequences."""
    K = len(pairs)
    Q = Q or 4 * K
    A = np.column_stack([steer_near_fresnel(geom, w, p) for w, p in pairs])
    S = np.exp(2j * np.pi * np.outer(np.arange(K), np.arange(Q)) / Q)
    return A @ S


def fresnel_pairs(geom, carrier, targets):
    return [tuple(float(v) for v in fresnel_phases(geom, carrier, t.angle, t.range)) for t in targets]


# --- decomposition -----------------------------------------------------------------

def test_gamma_xi_factorization_on_grid():
    geom = ArrayGeometry(33, 0.25, Reference.CENTER)
    J = geom.half_length
    for w in np.linspace(-1.5, 1.5, 10):
        G = gamma_matrix(w, geom)
        for p in np.linspace(0, np.pi / (2 * J), 10):
            a = steer_near_fresnel(geom, w, p)
            assert np.max(np.abs(G @ xi_vector(p, J) - a)) <= 1e-12


def test_gamma_at_zero_folds_mirror_elements():
    geom = ArrayGeometry(9, 0.25, Reference.CENTER)
    G = gamma_matrix(0.0, geom)
    np.testing.assert_array_equal(G.sum(axis=0).real, [2, 2, 2, 2, 1])
    np.testing.assert_array_equal(np.abs(G).sum(axis=1), np.ones(9))


def test_rr_quadratic_form_vanishes_at_truth():
    geom = ArrayGeometry(65, 0.25, Reference.CENTER)
    pairs = fresnel_pairs(geom, C28, [Target(-12.0, 1.5), Target(30.0, 3.0)])
    bundle = covariance_bundle(fresnel_data(geom, pairs), 2)
    for w, p in pairs:
        xi = xi_vector(p, geom.half_length)
        assert np.real(xi.conj() @ rdrr_decompose(w, bundle, geom) @ xi) <= 1e-10


def test_psi_from_phase_recovers_wrapped_quadratic():
    J = 40
    s = (J - np.arange(J + 1)) ** 2.0
    g = np.angle(np.exp(1j * (0.7 + 0.003 * s)))
    psi, jump = psi_from_phase(g, J)
    assert psi == pytest.approx(0.003, abs=1e-12)
    assert jump


def test_psi_from_phase_needs_three_points():
    with pytest.raises(ValueError):
        psi_from_phase(np.zeros(2), 1)


# --- SoC -----------------------------------------------------------------------------

def test_soc_sequences_carry_linear_and_quadratic_phase():
    geom = ArrayGeometry(65, 0.25, Reference.CENTER)
    w, p = fresnel_pairs(geom, C28, [Target(14.0, 2.0)])[0]
    r1, r2 = soc_sequences(fresnel_data(geom, [(w, p)]), geom)
    np.testing.assert_allclose(r1, np.exp(-2j * w * np.arange(len(r1))), atol=1e-12)
    np.testing.assert_allclose(r2, np.exp(1j * (w + p * (2 * np.arange(len(r2)) + 1))), atol=1e-12)


def test_soc_single_target():
    geom = ArrayGeometry(65, 0.25, Reference.CENTER)
    t = Target(14.0, 2.0)
    est = soc_estimate(fresnel_data(geom, fresnel_pairs(geom, C28, [t])), geom, C28, 1)
    assert est.angles[0] == pytest.approx(14.0, abs=0.01)
    assert est.ranges[0] == pytest.approx(2.0, rel=0.02)


def test_symmetric_methods_need_odd_quarter_wave_arrays():
    X = np.ones((64, 4), dtype=complex)
    with pytest.raises((DomainError, ValueError)):
        soc_estimate(X, ArrayGeometry(64, 0.25, Reference.CENTER), C28, 1)
    with pytest.raises(DomainError):
        soc_estimate(np.ones((65, 4), dtype=complex), ArrayGeometry(65, 0.5, Reference.CENTER), C28, 1)


def test_soc_flags_unresolved_quadratic_phase():
    X = spatial_snapshots(WIDE, C28, PAIR, 512, seed=0)
    est = soc_estimate(X, WIDE, C28, 2)
    assert len(est) == 2 and est.flags.get("shortfall")


# --- rank-reduction spectra ----------------------------------------------------------

@pytest.fixture(scope="module")
def fresnel_bundle():
    geom = ArrayGeometry(65, 0.25, Reference.CENTER)
    targets = [Target(-12.0, 1.5), Target(30.0, 3.0)]
    X = fresnel_data(geom, fresnel_pairs(geom, C28, targets))
    return geom, targets, covariance_bundle(X, 2)


@pytest.mark.parametrize("spectrum", [rr_spectrum, gen_esprit_spectrum])
def test_rank_spectra_dip_deeply_at_truth(fresnel_bundle, spectrum):
    geom, targets, bundle = fresnel_bundle
    background = np.median(spectrum(bundle, geom, np.linspace(-80, 80, 321)))
    for t in targets:
        assert spectrum(bundle, geom, np.array([t.angle]))[0] - background >= 23.0


def test_gen_esprit_angles_do_not_depend_on_combiner(fresnel_bundle):
    geom, targets, bundle = fresnel_bundle
    J = geom.half_length
    Wr = np.linalg.qr(np.random.default_rng(3).standard_normal((J, 2)) + 0j)[0]
    grid = np.arange(-60, 60.01, 0.1)
    ref = np.sort(generalized_esprit(bundle, geom, C28, 2, grid).angles)
    for W in ("select", Wr):
        np.testing.assert_allclose(np.sort(generalized_esprit(bundle, geom, C28, 2, grid, W=W).angles), ref,
                                   atol=1e-4)
    np.testing.assert_allclose(ref, [-12.0, 30.0], atol=0.01)


def test_modified_music_window_limits(fresnel_bundle):
    geom, _, bundle = fresnel_bundle
    est = modified_music(None, geom, C28, 2, L=3, cov=bundle.R)
    np.testing.assert_allclose(np.sort(est.angles), [-12.0, 30.0], atol=0.05)
    with pytest.raises(ValueError):
        modified_music(None, geom, C28, 2, L=2, cov=bundle.R)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi))
def test_rr_and_gen_esprit_invariant_to_scaling(mag, phase):
    geom = ArrayGeometry(33, 0.25, Reference.CENTER)
    X = spatial_snapshots(geom, C28, [Target(-8.0, 1.0), Target(25.0, 2.0)], 64, 20.0, 1)
    grid = np.arange(-60, 60.01, 0.2)
    ranges = NearFieldGrid.default(geom, C28).ranges
    c = mag * np.exp(1j * phase)
    for fn in (lambda b: rr_estimate(b, geom, C28, 2, grid, ranges),
               lambda b: generalized_esprit(b, geom, C28, 2, grid, ranges)):
        a, b = fn(covariance_bundle(X, 2)), fn(covariance_bundle(c * X, 2))
        np.testing.assert_allclose(a.as_array(), b.as_array(), rtol=1e-6)


# --- 2D searches -----------------------------------------------------------------------

def test_beam_focusing_of_identity_is_flat():
    geom = ArrayGeometry(17, 0.5, Reference.CENTER)
    spec = bf2d(np.eye(17), geom, C28, NearFieldGrid(np.linspace(-60, 60, 13), np.linspace(0.1, 0.5, 5)))
    np.testing.assert_allclose(spec.power, 17.0, rtol=1e-12)


def test_exact_steering_lies_in_signal_subspace():
    bundle = covariance_bundle(spatial_snapshots(WIDE, C28, PAIR, 64, seed=2), 2)
    for t in PAIR:
        assert null_residual(bundle, WIDE, C28, t.angle, t.range) <= 1e-6


def range_width(geom, target, ranges):
    """Half-power width of the focused beam over range at the target's angle."""
    R = sample_covariance(spatial_snapshots(geom, C28, [target], 8, seed=0))
    p = bf2d(R, geom, C28, NearFieldGrid(np.array([target.angle]), ranges)).power[:, 0]
    above = ranges[p >= p.max() / 2]
    return above[-1] - above[0]


def test_closer_target_focuses_more_sharply_in_range():
    ranges = np.linspace(2.0, 40.0, 2000)
    assert range_width(WIDE, Target(10.0, 5.0), ranges) < range_width(WIDE, Target(10.0, 10.0), ranges) / 2


@pytest.fixture(scope="module")
def wide_estimates():
    X = spatial_snapshots(WIDE, C28, PAIR, 4096, seed=0)
    grid = NearFieldGrid.default(WIDE, C28)
    out = {alg: estimate_nearfield(alg, X, WIDE, C28, 2, grid)
           for alg in ("bf2d", "music2d", "rd", "rr", "fft-enhanced", "mod-music", "gen-esprit")}
    return grid, out


@pytest.mark.parametrize("alg", ["bf2d", "rd", "rr", "fft-enhanced", "mod-music", "gen-esprit"])
def test_methods_agree_with_2d_music_within_one_cell(wide_estimates, alg):
    grid, est = wide_estimates
    ref, got = est["music2d"], est[alg]
    o, q = np.argsort(ref.angles), np.argsort(got.angles)
    angle_cell = grid.angles[1] - grid.angles[0]
    for (ta, ra), (tb, rb) in zip(ref.as_array()[o], got.as_array()[q]):
        i = np.searchsorted(grid.ranges, ra)
        assert abs(ta - tb) <= angle_cell
        assert abs(ra - rb) <= grid.ranges[i] - grid.ranges[i - 1]


def test_fft_enhanced_matches_full_search_with_far_fewer_evaluations(wide_estimates):
    _, est = wide_estimates
    full, fast = est["music2d"], est["fft-enhanced"]
    np.testing.assert_allclose(np.sort(fast.angles), np.sort(full.angles), atol=1e-9)
    assert fast.evaluations * 10 <= full.evaluations


def test_fft_enhanced_rejects_noise_only_data():
    geom = ArrayGeometry(33, 0.25, Reference.CENTER)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((33, 2000)) + 1j * rng.standard_normal((33, 2000))
    with pytest.raises(EstimationError):
        fft_enhanced(covariance_bundle(X, 1), geom, C28, 1)


def test_music2d_refines_off_grid_targets():
    geom = ArrayGeometry(65, 0.25, Reference.CENTER)
    t = Target(7.33, 1.77)
    bundle = covariance_bundle(spatial_snapshots(geom, C28, [t], 16, seed=0), 1)
    est = music2d_estimate(bundle, geom, C28, 1, NearFieldGrid.default(geom, C28, angle_step=0.5))
    assert est.angles[0] == pytest.approx(7.33, abs=0.05)
    assert est.ranges[0] == pytest.approx(1.77, rel=0.03)


# --- far-field processing of near-field data -----------------------------------------

def test_far_target_gives_one_far_field_peak():
    geom = ArrayGeometry(257, 0.5, Reference.CENTER)
    t = Target(20.0, 1e4 * rayleigh_distance(geom, C28))
    rep = farfield_mismatch_demo(geom, C28, [t], 64)
    assert rep.maxima[0] == 1
    assert rep.spread_db[0] <= 0.1


def test_far_field_spread_grows_as_target_approaches():
    geom = ArrayGeometry(257, 0.5, Reference.CENTER)
    ray = rayleigh_distance(geom, C28)
    spread = [farfield_mismatch_demo(geom, C28, [Target(20.0, f * ray)], 64).spread_db[0]
              for f in (1.0, 0.3, 0.1, 0.03)]
    assert np.all(np.diff(spread) > 0)
