"""Static raster exports and the figure-reproduction recipes."""

from __future__ import annotations

import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import scenarios  # noqa: E402
from .estimators.axes import angle_axis  # noqa: E402
from .estimators.joint import music2d, periodogram2d  # noqa: E402
from .estimators.oned import omp, periodogram, spectrum_1d  # noqa: E402
from .estimators.spectrum import Spectrum1D, SpectrumND, find_peaks, find_peaks_nd  # noqa: E402
from .experiments import (ExperimentKind, ExperimentSpec, run_nearfield_suite,  # noqa: E402
                          run_resolution_sweep, run_rmse_sweep, sweep, write_manifest)
from .frameworks import Framework, FrameworkConfig, run_framework  # noqa: E402
from .nearfield import (NEARFIELD_ALGORITHMS, NearFieldGrid, covariance_bundle,  # noqa: E402
                        farfield_mismatch_demo, music2d_estimate, music2d_nf)
from .ofdm import OfdmConfig, qpsk_symbols, reshape_angle, strip_symbols, synthesize  # noqa: E402
from .scene import SteeringKind, rayleigh_distance, steer_far  # noqa: E402

DB_FLOOR = -40.0


def to_db(power, floor=DB_FLOOR) -> np.ndarray:
    """Normalize to the maximum and clip at ``floor`` dB."""
    p = np.asarray(power, dtype=float)
    top = p.max() if p.size and p.max() > 0 else 1.0
    return np.maximum(10 * np.log10(np.maximum(p / top, 1e-30)), floor)


def save_heatmap(spec: SpectrumND, path, axes=(0, 1), scale=(1.0, 1.0), labels=None, title=""):
    """Raster of a 2D spectrum (or the max-projection of a higher-dimensional one) in dB."""
    p = spec.power
    keep = tuple(axes)
    other = tuple(i for i in range(p.ndim) if i not in keep)
    if other:
        p = p.max(axis=other)
    if keep[0] > keep[1]:
        p = p.T
    y, x = spec.grids[keep[0]] * scale[0], spec.grids[keep[1]] * scale[1]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(to_db(p), origin="lower", aspect="auto", cmap="viridis", vmin=DB_FLOOR, vmax=0,
                   extent=(x[0], x[-1], y[0], y[-1]))
    fig.colorbar(im, ax=ax, label="normalized power (dB)")
    lab = labels or (spec.names[keep[0]], spec.names[keep[1]])
    ax.set_ylabel(lab[0])
    ax.set_xlabel(lab[1])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def save_series(x, series: dict, path, xlabel="", ylabel="", logy=False, db=False, marks=None, title=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, y in series.items():
        y = to_db(y) if db else np.asarray(y, dtype=float)
        ax.plot(x, y, label=name)
    for m in (() if marks is None else marks):
        ax.axvline(m, color="k", lw=0.6, ls=":")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def _stripped(scene, ofdm, snr_db, seed, model=SteeringKind.FAR):
    rng = np.random.default_rng(seed)
    b = qpsk_symbols(ofdm.num_subcarriers, ofdm.num_symbols, rng)
    return strip_symbols(synthesize(scene, ofdm, b, model, snr_db, rng), b)


def _write_peaks(path, names, points, powers):
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank"] + list(names) + ["power"])
        pts = np.asarray(points, dtype=float).reshape(len(powers), -1)
        for i, (pt, pw) in enumerate(zip(pts, powers)):
            w.writerow([i] + [repr(float(v)) for v in pt] + [repr(float(pw))])


# ------------------------------------------------------------------ recipes

def fig8(out: Path, snr_db=10.0, seed=0, **_):
    """Angle periodogram of the three-target scene."""
    scene, ofdm = scenarios.three_targets(), scenarios.baseline_ofdm()
    X = reshape_angle(_stripped(scene, ofdm, snr_db, seed))
    spec = periodogram(X, angle_axis(scene.geometry), 64 * scene.geometry.num_elements)
    pk = find_peaks(spec, scene.num_targets)
    spec.to_csv(out / "fig8_spectrum.csv")
    pk.to_csv(out / "fig8_peaks.csv")
    save_series(spec.grid, {"periodogram": spec.power}, out / "fig8.png", "angle (deg)", "power (dB)", db=True,
                marks=scene.angles())
    return [out / "fig8_spectrum.csv", out / "fig8_peaks.csv", out / "fig8.png"], dict(
        scene=scene, ofdm=ofdm, snr_db=snr_db)


def fig9(out: Path, snr_db=10.0, seed=0, **_):
    """Angle MUSIC spectrum of the three-target scene."""
    scene, ofdm = scenarios.three_targets(), scenarios.baseline_ofdm()
    X = reshape_angle(_stripped(scene, ofdm, snr_db, seed))
    spec = spectrum_1d(X, angle_axis(scene.geometry), "music", scene.num_targets)
    spec.to_csv(out / "fig9_spectrum.csv")
    find_peaks(spec, scene.num_targets).to_csv(out / "fig9_peaks.csv")
    save_series(spec.grid, {"music": spec.power}, out / "fig9.png", "angle (deg)", "power (dB)", db=True,
                marks=scene.angles())
    return [out / "fig9_spectrum.csv", out / "fig9_peaks.csv", out / "fig9.png"], dict(
        scene=scene, ofdm=ofdm, snr_db=snr_db)


def fig10(out: Path, snr_db=10.0, seed=0, **_):
    """Periodogram, MUSIC and OMP on targets 5 degrees apart."""
    from .scene import Scene, Target
    base = scenarios.three_targets()
    scene = Scene(base.geometry, base.carrier,
                  [Target(a, t.range, t.velocity) for a, t in zip((-5, 0, 10), base.targets)])
    ofdm = scenarios.baseline_ofdm()
    X = reshape_angle(_stripped(scene, ofdm, snr_db, seed))
    axis = angle_axis(scene.geometry)
    grid = axis.default_grid()
    per = spectrum_1d(X, axis, "periodogram", n_fft=1024)
    series = {"periodogram": np.interp(grid, per.grid, per.power),
              "music": spectrum_1d(X, axis, "music", 3, grid).power}
    r = omp(X, axis, 3, grid)
    omp_line = np.zeros_like(grid)
    omp_line[r.support] = r.gains ** 2
    series["omp"] = omp_line
    Spectrum1D(grid, series["music"]).to_csv(out / "fig10_music.csv")
    Spectrum1D(grid, series["periodogram"]).to_csv(out / "fig10_periodogram.csv")
    _write_peaks(out / "fig10_omp.csv", ["param"], r.params, r.gains ** 2)
    save_series(grid, series, out / "fig10.png", "angle (deg)", "power (dB)", db=True, marks=scene.angles())
    return [out / "fig10_music.csv", out / "fig10_periodogram.csv", out / "fig10_omp.csv", out / "fig10.png"], dict(
        scene=scene, ofdm=ofdm, snr_db=snr_db)


def _framework_recipe(out, name, framework, snr_db, seed):
    scene, ofdm = scenarios.five_targets(), scenarios.baseline_ofdm()
    T = _stripped(scene, ofdm, snr_db, seed)
    cfg = FrameworkConfig(framework)
    est = run_framework(T, scene.geometry, ofdm, scene.num_targets, cfg)
    est.to_csv(out / f"{name}_estimates.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(scene.angles(), scene.delays() * 1e6, marker="o", facecolors="none", edgecolors="k", label="truth")
    ax.scatter(est.theta, est.tau * 1e6, marker="x", c="r", label="estimate")
    ax.set_xlabel("angle (deg)")
    ax.set_ylabel("delay (us)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"{name}.png", dpi=110)
    plt.close(fig)
    return [out / f"{name}_estimates.csv", out / f"{name}.png"], dict(scene=scene, ofdm=ofdm, snr_db=snr_db,
                                                                        framework=cfg)


def fig11(out: Path, snr_db=10.0, seed=0, **_):
    """Parallel one-domain estimation with power grouping on the five-target scene."""
    return _framework_recipe(out, "fig11", Framework.PARALLEL, snr_db, seed)


def fig12(out: Path, snr_db=10.0, seed=0, **_):
    """Sequential angle, delay, Doppler estimation on the five-target scene."""
    return _framework_recipe(out, "fig12", Framework.SEQUENTIAL, snr_db, seed)


def _beamformed(scene, ofdm, snr_db, seed, angle):
    T = _stripped(scene, ofdm, snr_db, seed)
    w = steer_far(scene.geometry, angle)
    return np.tensordot(w.conj(), T.data, axes=(0, 0)) / scene.geometry.num_elements


def fig16a(out: Path, snr_db=10.0, seed=0, **_):
    """Delay-Doppler periodogram of three targets sharing one angle."""
    scene, ofdm = scenarios.equal_angle_targets(), scenarios.baseline_ofdm()
    X = _beamformed(scene, ofdm, snr_db, seed, 10.0)
    spec = periodogram2d(X, ofdm)
    return _joint_outputs(out, "fig16a", spec, scene, ofdm, snr_db)


def fig16b(out: Path, snr_db=10.0, seed=0, **_):
    """Delay-Doppler MUSIC (64 x 32 smoothing window) of the same three targets."""
    scene, ofdm = scenarios.equal_angle_targets(), scenarios.baseline_ofdm()
    X = _beamformed(scene, ofdm, snr_db, seed, 10.0)
    nt, nv = 4 * ofdm.num_subcarriers, 4 * ofdm.num_symbols
    tg = np.arange(nt) / (2 * nt * ofdm.subcarrier_spacing)   # first half of the unambiguous delays
    vg = (np.arange(nv) - nv // 2) / (nv * ofdm.total_symbol_time)
    spec = music2d(X, ofdm, scene.num_targets, (64, 32), tg, vg)
    spec.meta.pop("model", None)
    return _joint_outputs(out, "fig16b", spec, scene, ofdm, snr_db)


def _joint_outputs(out, name, spec, scene, ofdm, snr_db):
    pk = find_peaks_nd(spec, scene.num_targets, exclusion=2)
    spec.save(out / f"{name}_spectrum.bin")
    _write_peaks(out / f"{name}_peaks.csv", spec.names, pk.points, pk.powers)
    save_heatmap(spec, out / f"{name}.png", scale=(1e6, 1e-3), labels=("delay (us)", "Doppler (kHz)"))
    return [out / f"{name}_spectrum.bin", out / f"{name}_peaks.csv", out / f"{name}.png"], dict(
        scene=scene, ofdm=ofdm, snr_db=snr_db)


def fig13(out: Path, snr_db=None, seed=0, trials=30, workers=1, **_):
    """RMSE against SNR for periodogram, MUSIC and ESPRIT in all three domains."""
    scene = scenarios.separated_targets()
    ofdm = scenarios.baseline_ofdm()
    files, params = [], {}
    snrs = sweep(-40, 20, 5) if snr_db is None else (snr_db,)
    for axis in ("angle", "delay", "doppler"):
        spec = ExperimentSpec(ExperimentKind.RMSE_SWEEP, scene, ofdm, ("periodogram", "music", "esprit-ls"), axis,
                              snrs, trials, seed, workers=workers)
        table = run_rmse_sweep(spec)
        col = table.columns[3]
        table.to_csv(out / f"fig13_{axis}.csv")
        series = {a: table.column(col, algorithm=a) for a in spec.algorithms}
        save_series(snrs, series, out / f"fig13_{axis}.png", "SNR (dB)", f"RMSE ({col.split('_')[-1]})", logy=True)
        files += [out / f"fig13_{axis}.csv", out / f"fig13_{axis}.png"]
        params[axis] = spec
    return files, params


def fig15(out: Path, snr_db=None, seed=0, trials=50, workers=1, **_):
    """Two-target resolution probability against angular separation."""
    seps = tuple(np.round(np.arange(0.2, 9.0 + 1e-9, 0.2), 2))
    snrs = (-10.0, 10.0) if snr_db is None else (float(snr_db),)
    gates = {-10.0: 0.5, 10.0: 0.3}
    spec = ExperimentSpec(ExperimentKind.RESOLUTION_SWEEP, scenarios.two_targets(0.0), scenarios.baseline_ofdm(),
                          ("periodogram", "music", "esprit-ls"), "angle", snrs, trials, seed, seps,
                          options={"gates": {s: gates.get(s, 0.3) for s in snrs}}, workers=workers)
    table = run_resolution_sweep(spec)
    table.to_csv(out / "fig15.csv")
    files = [out / "fig15.csv"]
    for s in snrs:
        series = {a: table.column("probability", snr_db=s, algorithm=a) for a in spec.algorithms}
        p = out / f"fig15_{int(s)}dB.png"
        save_series(seps, series, p, "separation (deg)", "probability of resolution")
        files.append(p)
    return files, dict(spec=spec)


def fig17(out: Path, seed=0, **_):
    """Far-field periodogram applied to spherical-wave data from two distances."""
    scene = scenarios.spread_pair()
    rep = farfield_mismatch_demo(scene.geometry, scene.carrier, scene.targets, seed=seed)
    rep.spectrum.to_csv(out / "fig17_spectrum.csv")
    import csv
    with open(out / "fig17_targets.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["angle_deg", "range_m", "local_maxima", "spread_db"])
        for t, n, s in zip(scene.targets, rep.maxima, rep.spread_db):
            w.writerow([repr(float(t.angle)), repr(float(t.range)), int(n), repr(float(s))])
    save_series(rep.spectrum.grid, {"far-field periodogram": rep.spectrum.power}, out / "fig17.png",
                "angle (deg)", "power (dB)", db=True, marks=scene.angles())
    return [out / "fig17_spectrum.csv", out / "fig17_targets.csv", out / "fig17.png"], dict(
        scene=scene, rayleigh_m=rayleigh_distance(scene.geometry, scene.carrier))


def fig18(out: Path, snr_db=10.0, seed=0, **_):
    """Near-field 2D MUSIC over angle and distance for two targets."""
    scene = scenarios.focusing_pair()
    ofdm = OfdmConfig(16, 16)
    T = synthesize(scene, ofdm, None, SteeringKind.NEAR_EXACT, snr_db, np.random.default_rng(seed))
    X = reshape_angle(T)
    bundle = covariance_bundle(X, scene.num_targets)
    grid = NearFieldGrid.default(scene.geometry, scene.carrier, angle_step=0.1)
    spec = music2d_nf(bundle, scene.geometry, scene.carrier, grid)
    est = music2d_estimate(bundle, scene.geometry, scene.carrier, scene.num_targets, grid)
    spec.save(out / "fig18_spectrum.bin")
    _write_peaks(out / "fig18_peaks.csv", ("angle_deg", "range_m"), est.as_array(), np.ones(len(est)))
    save_heatmap(spec, out / "fig18.png", labels=("distance (m)", "angle (deg)"))
    return [out / "fig18_spectrum.bin", out / "fig18_peaks.csv", out / "fig18.png"], dict(
        scene=scene, ofdm=ofdm, snr_db=snr_db, grid_ranges=grid.ranges)


def fig20(out: Path, snr_db=None, seed=0, trials=20, workers=1, **_):
    """Angle and distance RMSE of the near-field estimators against SNR."""
    scene = scenarios.fresnel_target()
    snrs = sweep(-15, 10, 5) if snr_db is None else (float(snr_db),)
    spec = ExperimentSpec(ExperimentKind.NEAR_FIELD_SUITE, scene, scenarios.nearfield_ofdm(), NEARFIELD_ALGORITHMS,
                          "angle", snrs, trials, seed, workers=workers)
    table = run_nearfield_suite(spec)
    table.to_csv(out / "fig20.csv")
    for col, name in (("rmse_angle_deg", "fig20_angle.png"), ("rmse_range_m", "fig20_range.png")):
        series = {a: table.column(col, algorithm=a) for a in spec.algorithms}
        save_series(snrs, series, out / name, "SNR (dB)", col, logy=True)
    return [out / "fig20.csv", out / "fig20_angle.png", out / "fig20_range.png"], dict(spec=spec)


RECIPES = {
    "fig8": fig8, "fig9": fig9, "fig10": fig10, "fig11": fig11, "fig12": fig12, "fig13": fig13, "fig15": fig15,
    "fig16a": fig16a, "fig16b": fig16b, "fig17": fig17, "fig18": fig18, "fig20": fig20,
}


def reproduce(figure_id: str, out_dir, **kw) -> list:
    """Run a recipe, write its files plus ``<id>_manifest.json`` and return the paths."""
    if figure_id not in RECIPES:
        raise KeyError(f"unknown figure {figure_id!r}; available: {', '.join(RECIPES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, params = RECIPES[figure_id](out, **kw)
    man = out / f"{figure_id}_manifest.json"
    write_manifest(man, {"figure": figure_id, **params, **{k: v for k, v in kw.items() if k != "workers"}},
                   seed=kw.get("seed", 0), wall_s=time.perf_counter() - t0, outputs=files)
    return list(files) + [man]
