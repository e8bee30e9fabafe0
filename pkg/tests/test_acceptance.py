"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints under
"acceptance criteria". Monte-Carlo criteria use the full trial counts and
take minutes on one core.
"""

import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conftest import rel_err, stripped
from isacsim import scenarios
from isacsim.complexity import JOINT, NEAR_FIELD, ONE_D, TABLE_ANTENNAS, joint, near_field, one_d, table_1d
from isacsim.estimators.axes import angle_axis, delay_axis, doppler_axis
from isacsim.estimators.joint import music2d, periodogram2d, subspace_peaks
from isacsim.estimators.oned import (direct_spectrum, esprit, fft_music, music, periodogram, root_music,
                                     sample_covariance, subspaces)
from isacsim.estimators.spectrum import find_peaks_nd
from isacsim.experiments import (ExperimentSpec, run_nearfield_suite, run_resolution_sweep, run_rmse_sweep,
                                 sweep, threshold_drop, transition)
from isacsim.frameworks import (AXES, Framework, FrameworkConfig, group_triples, match_to_truth, resolution_cells,
                                run_framework, run_joint3d)
from isacsim.nearfield import NEARFIELD_ALGORITHMS, covariance_bundle, farfield_mismatch_demo, music2d_estimate, \
    NearFieldGrid
from isacsim.ofdm import OfdmConfig, reshape_angle, reshape_delay, reshape_doppler, synthesize
from isacsim.scene import Carrier, Scene, SteeringKind, Target, steer_far, units

TESTS = Path(__file__).parent


def matched(est, truth):
    C = np.abs(np.asarray(est, float)[:, None] - np.asarray(truth, float)[None])
    r, c = linear_sum_assignment(C)
    return C[r, c]


def all_within_cells(points, truth, cells):
    """Every truth row has its own estimate within one cell on every axis."""
    m = match_to_truth(np.asarray(points), np.asarray(truth), cells, gate=np.inf)
    return m.match_rate == 1.0 and bool(np.all(np.abs(m.errors) <= cells)), m


# 1 ---------------------------------------------------------------------------------

def test_criterion_1_unit_conversion(verdict):
    c28 = Carrier(28e9)
    ref = [(20, 8, 0.133e-6, 1.493e3), (80, 12, 0.533e-6, 2.240e3), (50, 20, 0.333e-6, 3.733e3)]
    worst = 0.0
    for r, v, tau, nu in ref:
        t, n = units(Target(0.0, r, v), c28)
        worst = max(worst, abs(t / tau - 1), abs(n / nu - 1))
    verdict(1, worst <= 5e-3, f"delays/Dopplers of the reference targets within {100 * worst:.3f}% (limit 0.5%)")


# 2 ---------------------------------------------------------------------------------

BANDS = {
    ("periodogram", -10.0): (6.5, 7.5), ("periodogram", 10.0): (6.5, 7.5),
    ("music", 10.0): (0.7, 1.5), ("esprit-ls", 10.0): (0.4, 1.0),
    ("music", -10.0): (3.0, 5.0), ("esprit-ls", -10.0): (3.0, 5.0),
}


@pytest.mark.slow
def test_criterion_2_angular_resolution(verdict):
    seps = sweep(0.2, 9.0, 0.2)
    spec = ExperimentSpec("resolution", scenarios.two_targets(0.0), scenarios.baseline_ofdm(),
                          ("periodogram", "music", "esprit-ls"), "angle", (-10.0, 10.0), 200, 11, seps,
                          options={"gates": {-10.0: 0.5, 10.0: 0.3}})
    table = run_resolution_sweep(spec)
    parts, ok = [], True
    for (alg, snr), (lo, hi) in BANDS.items():
        x = transition(seps, table.column("probability", snr_db=snr, algorithm=alg))
        good = lo <= x <= hi
        ok &= good
        parts.append(f"{alg}@{snr:+.0f}dB={x:.2f}{'' if good else f' (want {lo}-{hi})'}")
    verdict(2, ok, "resolution transitions " + ", ".join(parts))


# 3 ---------------------------------------------------------------------------------

def test_criterion_3_delay_doppler_resolution(verdict):
    ofdm = scenarios.baseline_ofdm()
    base = Scene(scenarios.two_targets(0.0).geometry, Carrier(28e9), [Target(0.0, 30.0, 10.0),
                                                                      Target(30.0, 30.0, 10.0)])
    parts, ok = [], True
    for axis, cell in (("delay", 1 / ofdm.bandwidth), ("doppler", 1 / ofdm.cpi)):
        spec = ExperimentSpec("resolution", base, ofdm, ("periodogram",), axis, (10.0,), 100, 3,
                              (0.5 * cell, 1.1 * cell), gate=0.3 * cell)
        half, wide = run_resolution_sweep(spec).column("probability")
        ok &= wide >= 0.9 and half <= 0.2
        parts.append(f"{axis} P(1.1 cell)={wide:.2f} P(0.5 cell)={half:.2f}")
    verdict(3, ok, "; ".join(parts) + " (want >= 0.9 and <= 0.2)")


# 4 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_threshold_effect(verdict):
    snrs = sweep(-40, 20, 5)
    parts, ok = [], True
    for axis in ("angle", "delay", "doppler"):
        spec = ExperimentSpec("rmse", scenarios.separated_targets(), scenarios.baseline_ofdm(),
                              ("periodogram", "music", "esprit-ls"), axis, snrs, 300, 21)
        table = run_rmse_sweep(spec)
        col = table.columns[3]
        for alg in spec.algorithms:
            ratio, center = threshold_drop(snrs, table.column(col, algorithm=alg))
            good = ratio >= 10 and -25 <= center <= -15
            ok &= good
            parts.append(f"{axis}/{alg} x{ratio:.0f}@{center:g}dB{'' if good else ' (miss)'}")
    verdict(4, ok, "steepest 10 dB RMSE drop " + ", ".join(parts))


# 5 ---------------------------------------------------------------------------------

def test_criterion_5_oracle_equivalences(verdict, three, three_clean, ofdm):
    geom = three.geometry
    domains = {"angle": (reshape_angle(three_clean), angle_axis(geom), three.angles()),
               "delay": (reshape_delay(three_clean), delay_axis(ofdm), three.delays()),
               "doppler": (reshape_doppler(three_clean), doppler_axis(ofdm), three.dopplers())}
    worst = {"periodogram": 0.0, "fft-music": 0.0, "esprit": 0.0, "root-music": 0.0, "null": 0.0}
    for X, ax, truth in domains.values():
        fft = periodogram(X[:, :64], ax, 512)
        worst["periodogram"] = max(worst["periodogram"], rel_err(fft.power, direct_spectrum(X[:, :64], ax,
                                                                                            fft.grid).power))
        f = fft_music(X, ax, 3, 1024)
        worst["fft-music"] = max(worst["fft-music"], rel_err(1 / f.power, 1 / music(X, ax, 3, f.grid).power))
        scale = np.max(np.abs(truth))
        worst["esprit"] = max(worst["esprit"], np.max(matched(esprit(X, ax, 3, "ls"), truth)) / scale)
        worst["root-music"] = max(worst["root-music"], np.max(matched(root_music(X, ax, 3), truth)) / scale)
        En = subspaces(sample_covariance(X), 3).noise
        null = max(np.linalg.norm(En.conj().T @ a) / np.sqrt(ax.length) for a in ax.steering(truth).T)
        worst["null"] = max(worst["null"], null)
    ok = (worst["periodogram"] <= 1e-9 and worst["fft-music"] <= 1e-9 and worst["esprit"] <= 1e-6
          and worst["root-music"] <= 1e-6 and worst["null"] <= 1e-6)
    verdict(5, ok, "worst over angle/delay/Doppler: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# 6 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_joint_estimation(verdict):
    scene, ofdm = scenarios.equal_angle_targets(), scenarios.baseline_ofdm()
    T = stripped(scene, ofdm, 10.0, 6)
    X = np.tensordot(steer_far(scene.geometry, 10.0).conj(), T.data, axes=(0, 0)) / scene.geometry.num_elements
    truth = np.column_stack([scene.delays(), scene.dopplers()])
    cells2 = np.array([ofdm.delay_resolution, ofdm.doppler_resolution])
    nt, nv = 4 * ofdm.num_subcarriers, 4 * ofdm.num_symbols
    tg = np.arange(nt) / (2 * nt * ofdm.subcarrier_spacing)
    vg = (np.arange(nv) - nv // 2) / (nv * ofdm.total_symbol_time)
    mu = subspace_peaks(music2d(X, ofdm, 3, (64, 32), tg, vg), 3)
    ok_mu, _ = all_within_cells(mu.points, truth, cells2)
    pg = find_peaks_nd(periodogram2d(X, ofdm), 3, exclusion=2)
    ok_pg, _ = all_within_cells(pg.points, truth, cells2)

    five = scenarios.five_targets()
    T5 = stripped(five, ofdm, 10.0, 7)
    est = run_joint3d(T5, five.geometry, ofdm, five.num_targets, FrameworkConfig(Framework.JOINT3D))
    ok_3d, m = all_within_cells(est.as_array(), five.truth(), resolution_cells(five.geometry, ofdm))
    distinct = len(np.unique(five.angles()))
    verdict(6, ok_mu and ok_pg and ok_3d and distinct < five.num_targets,
            f"2D MUSIC 64x32 resolves 3/3: {ok_mu}; 2D periodogram 3/3: {ok_pg}; "
            f"3D recovers {len(m.pairs)}/5 triples within one cell: {ok_3d} "
            f"(only {distinct} distinct angles for 1D angle estimation)")


# 7 ---------------------------------------------------------------------------------

def test_criterion_7_framework_agreement(verdict, three, three_clean, ofdm):
    cells = resolution_cells(three.geometry, ofdm)
    results = {fw: run_framework(three_clean, three.geometry, ofdm, 3, FrameworkConfig(fw)).as_array()
               for fw in Framework}
    ref = results[Framework.JOINT3D]
    agree = True
    for fw, E in results.items():
        same, _ = all_within_cells(E, ref, cells)
        truth_ok, _ = all_within_cells(E, three.truth(), cells)
        agree &= same and truth_ok
    est = dict(zip(AXES, (three.angles(), three.delays(), three.dopplers())))
    axes3 = {"angle": angle_axis(three.geometry), "delay": delay_axis(ofdm), "doppler": doppler_axis(ofdm)}
    _, _, scores = group_triples(three_clean.data, axes3, est, 3)
    true = {(0, 0, 0), (1, 1, 1), (2, 2, 2)}
    lo_true = min(scores[k] for k in true)
    hi_false = max(v for k, v in scores.items() if k not in true)
    ok = agree and lo_true > hi_false and len(scores) == 27
    verdict(7, ok, f"four frameworks agree within one cell: {agree}; weakest true triple power "
                   f"{lo_true:.3g} vs strongest of 24 false {hi_false:.3g}")


# 8 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_near_field(verdict):
    pair = scenarios.spread_pair()
    rep = farfield_mismatch_demo(pair.geometry, pair.carrier, pair.targets)
    ok_ff = rep.maxima[0] > 1 and rep.maxima[1] == 1

    scene = scenarios.focusing_pair()
    T = synthesize(scene, OfdmConfig(16, 16), None, SteeringKind.NEAR_EXACT, 10.0, np.random.default_rng(8))
    grid = NearFieldGrid.default(scene.geometry, scene.carrier, angle_step=0.1)
    est = music2d_estimate(covariance_bundle(reshape_angle(T), 2), scene.geometry, scene.carrier, 2, grid)
    ok_nf = True
    parts = []
    for t in scene.targets:
        k = int(np.argmin(np.abs(est.angles - t.angle)))
        i = min(max(int(np.searchsorted(grid.ranges, t.range)), 1), len(grid.ranges) - 1)
        rcell = grid.ranges[i] - grid.ranges[i - 1]
        good = abs(est.angles[k] - t.angle) <= 0.1 and abs(est.ranges[k] - t.range) <= rcell
        ok_nf &= good
        parts.append(f"({est.angles[k]:.3f} deg, {est.ranges[k]:.3f} m)")
    verdict(8, ok_ff and ok_nf, f"far-field maxima near/far target {rep.maxima[0]}/{rep.maxima[1]} "
                                f"(want >1 / 1); 2D MUSIC at 10 dB: {', '.join(parts)} within one cell: {ok_nf}")


# 9 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_near_field_rmse_ordering(verdict):
    scene, ofdm = scenarios.fresnel_target(), scenarios.nearfield_ofdm()
    spec = ExperimentSpec("nearfield", scene, ofdm, NEARFIELD_ALGORITHMS, "angle", (10.0,), 200, 9)
    table = run_nearfield_suite(spec)
    rmse = {a: float(table.column("rmse_angle_deg", algorithm=a)[0]) for a in NEARFIELD_ALGORITHMS}
    best = min(rmse.values())
    ok_rdrr = all(rmse[a] <= 1.1 * best and rmse[a] < 0.3 for a in ("rd", "rr"))
    ok_soc = rmse["soc"] == max(rmse.values())

    low = ExperimentSpec("nearfield", scene, ofdm, ("bf2d", "music2d"), "angle", (-5.0, -15.0), 50, 19)
    lt = run_nearfield_suite(low)
    degrade = {a: tuple(lt.column("rmse_angle_deg", algorithm=a)) for a in ("bf2d", "music2d")}
    ok_low = all(r5 < 0.5 and r15 >= 10 * r5 for r5, r15 in degrade.values())
    verdict(9, ok_rdrr and ok_soc and ok_low,
            "angle RMSE at 10 dB " + ", ".join(f"{a} {v:.3f}" for a, v in rmse.items())
            + "; BF/MUSIC at -5/-15 dB " + ", ".join(f"{a} {r5:.2f}/{r15:.2f}" for a, (r5, r15) in degrade.items()))


# 10 --------------------------------------------------------------------------------

REFERENCE_TABLE = {
    "periodogram": ["1.596e8"] * 5,
    "music": ["2.879e6", "4.799e7", "7.874e8", "3.221e9", "1.343e10"],
    "pm-music": ["2.876e6", "4.774e7", "7.708e8", "3.088e9", "1.236e10"],
    "root-music": ["/"] * 5,
    "fft-music": ["2.354e6", "3.500e7", "5.586e8", "2.292e9", "9.684e9"],
    "esprit-ls": ["2.101e6", "3.382e7", "5.537e8", "2.282e9", "9.664e9"],
    "esprit-tls": ["2.102e6", "3.382e7", "5.537e8", "2.282e9", "9.664e9"],
    "pm-esprit": ["2.098e6", "3.357e7", "5.371e8", "2.148e9", "8.593e9"],
    "omp": ["7.094e8", "2.837e9", "1.135e10", "2.270e10", "4.540e10"],
}


def test_criterion_10_complexity_tables(verdict):
    t = table_1d()
    wrong = [(a, M) for a, cells in REFERENCE_TABLE.items() for M, c in zip(TABLE_ANTENNAS, cells)
             if t.cell(a, M) != c]
    values = [one_d(a, 64) for a in ONE_D] + [joint(a) for a in JOINT] + [near_field(a) for a in NEAR_FIELD]
    finite = all(math.isfinite(v) and v > 0 for v in values)
    n = sum(len(c) for c in REFERENCE_TABLE.values())
    verdict(10, not wrong and finite, f"{n - len(wrong)}/{n} reference cells exact; "
                                      f"{len(values)} closed forms evaluate: {finite}")


# 11 --------------------------------------------------------------------------------

PROPERTIES = [
    "test_scene.py::test_every_steering_model_has_unit_modulus",
    "test_scene.py::test_far_steering_conjugate_symmetry",
    "test_scene.py::test_fresnel_fidelity_on_grid",
    "test_scene.py::test_unit_round_trip_within_one_ulp",
    "test_ofdm.py::test_snr_calibration_over_seeds",
    "test_ofdm.py::test_trial_streams_depend_only_on_counter",
    "test_ofdm.py::test_same_seed_same_noise",
    "test_joint.py::test_smoothing_restores_rank_of_coherent_targets",
    "test_nearfield.py::test_gamma_xi_factorization_on_grid",
    "test_estimators_1d.py::test_estimates_invariant_to_complex_scaling",
    "test_joint.py::test_2d_peaks_invariant_to_complex_scaling",
    "test_joint.py::test_3d_peaks_invariant_to_complex_scaling",
    "test_nearfield.py::test_rr_and_gen_esprit_invariant_to_scaling",
    "test_experiments.py::test_serial_and_pooled_runs_write_identical_csv",
]


def test_criterion_11_property_suite(verdict):
    ids = [str(TESTS / p) for p in PROPERTIES]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    verdict(11, proc.returncode == 0, f"{len(PROPERTIES)} property tests: {tail}")
