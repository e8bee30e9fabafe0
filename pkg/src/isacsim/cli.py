"""Command-line entry point: ``isacsim <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import scenarios
from .config import ConfigError, RunConfig, default_config, experiment_spec, load_config
from .experiments import ExperimentKind, sweep, write_manifest


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_manifest.json")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    preset = getattr(args, "scene", None)
    if preset:
        if preset not in scenarios.SCENES:
            raise ConfigError(f"unknown scene {preset!r}; available: {', '.join(scenarios.SCENES)}")
        cfg.scene = scenarios.SCENES[preset]()
    if getattr(args, "snr", None) is not None:
        cfg.snr_db = args.snr
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _pair(text, name):
    try:
        parts = tuple(int(p) for p in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise ConfigError(f"{name} must look like 64x32") from None
    return parts


def _span(text):
    """'start:stop:step' or a comma list."""
    if ":" in text:
        a, b, c = (float(x) for x in text.split(":"))
        return sweep(a, b, c)
    return tuple(float(x) for x in text.split(","))


def _synth(cfg: RunConfig, model="far"):
    from .ofdm import qpsk_symbols, synthesize
    from .scene import SteeringKind
    rng = np.random.default_rng(cfg.seed)
    b = qpsk_symbols(cfg.ofdm.num_subcarriers, cfg.ofdm.num_symbols, rng)
    return synthesize(cfg.scene, cfg.ofdm, b, SteeringKind(model), cfg.snr_db, rng), b


def _stripped_input(args, cfg, model="far"):
    """Tensor from --tensor (plus --symbols if not yet stripped) or synthesized from the config."""
    from .ofdm import TensorKind, load_tensor, strip_symbols
    if args.tensor:
        T = load_tensor(args.tensor)
        if T.kind is TensorKind.WITH_SYMBOLS:
            if not args.symbols:
                raise ConfigError("tensor still carries symbols; pass --symbols or synthesize with --strip")
            T = strip_symbols(T, np.load(args.symbols))
        return T
    T, b = _synth(cfg, model)
    return strip_symbols(T, b)


def _common(p, tensor=True):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--scene", help=f"scene preset ({', '.join(scenarios.SCENES)})")
    p.add_argument("--snr", type=float, help="SNR in dB (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    if tensor:
        p.add_argument("--tensor", help="tensor file from `synth`; synthesized from the config when omitted")
        p.add_argument("--symbols", help="symbol grid (.npy) for a tensor that still carries symbols")
    p.add_argument("-K", "--targets", type=int, help="number of targets (default: scene size)")


def _K(args, cfg):
    return args.targets if args.targets else cfg.scene.num_targets


# ----------------------------------------------------------------- commands

def cmd_synth(args):
    from .ofdm import save_tensor, strip_symbols
    cfg = _run_config(args)
    T, b = _synth(cfg, args.model)
    if args.strip:
        T = strip_symbols(T, b)
    elif args.symbols_out:
        np.save(args.symbols_out, b)
    save_tensor(T, args.out)
    write_manifest(_manifest_path(args.out), dict(scene=cfg.scene, ofdm=cfg.ofdm, snr_db=cfg.snr_db,
                                                  model=args.model, stripped=args.strip),
                   seed=cfg.seed, outputs=[args.out])
    print(f"wrote {args.out} shape={T.shape} kind={T.kind.name.lower()} noise_var={T.noise_var:.4g}")


def cmd_estimate(args):
    from .estimators.axes import make_axis
    from .estimators.oned import SPECTRUM_ALGORITHMS, estimate_1d, spectrum_1d
    from .estimators.spectrum import find_peaks, PeakSet
    from .ofdm import reshape_angle, reshape_delay, reshape_doppler
    cfg = _run_config(args)
    T = _stripped_input(args, cfg)
    X = {"angle": reshape_angle, "delay": reshape_delay, "doppler": reshape_doppler}[args.axis](T)
    axis = make_axis(args.axis, cfg.scene.geometry, cfg.ofdm)
    K = _K(args, cfg)
    outputs = []
    if args.alg in SPECTRUM_ALGORITHMS:
        spec = spectrum_1d(X, axis, args.alg, K, n_fft=args.nfft)
        pk = find_peaks(spec, K)
        if args.spectrum:
            spec.to_csv(args.spectrum)
            outputs.append(args.spectrum)
    else:
        x, s = estimate_1d(X, axis, args.alg, K)
        pk = PeakSet(x, s, np.arange(len(x)))
    pk.to_csv(args.out)
    outputs.append(args.out)
    write_manifest(_manifest_path(args.out), dict(scene=cfg.scene, ofdm=cfg.ofdm, snr_db=cfg.snr_db, axis=args.axis,
                                                  algorithm=args.alg, K=K, tensor=args.tensor),
                   seed=cfg.seed, outputs=outputs)
    for i, (x, p) in enumerate(zip(pk.params, pk.powers)):
        print(f"{i}\t{x:.6g}\t{p:.6g}")


def _write_peaks_nd(path, names, pk):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank"] + list(names) + ["power"])
        for i, (pt, pw) in enumerate(zip(pk.points, pk.powers)):
            w.writerow([i] + [repr(float(v)) for v in pt] + [repr(float(pw))])


def _joint_outputs(args, cfg, spec, K, extra):
    from .estimators.joint import subspace_peaks
    from .estimators.spectrum import find_peaks_nd
    pk = subspace_peaks(spec, K) if "model" in spec.meta else find_peaks_nd(spec, K, exclusion=2)
    spec.meta.pop("model", None)
    _write_peaks_nd(args.out, spec.names, pk)
    outputs = [args.out]
    if args.spectrum:
        spec.save(args.spectrum)
        outputs.append(args.spectrum)
    if args.heatmap:
        from .figures import save_heatmap
        save_heatmap(spec, args.heatmap, axes=(spec.ndim - 2, spec.ndim - 1))
        outputs.append(args.heatmap)
    write_manifest(_manifest_path(args.out), dict(scene=cfg.scene, ofdm=cfg.ofdm, snr_db=cfg.snr_db, K=K, **extra),
                   seed=cfg.seed, outputs=outputs)
    for i, (pt, pw) in enumerate(zip(pk.points, pk.powers)):
        print(i, "\t".join(f"{v:.6g}" for v in pt), f"{pw:.6g}", sep="\t")


def cmd_estimate2d(args):
    from .estimators.joint import music2d, periodogram2d
    from .scene import steer_far
    cfg = _run_config(args)
    T = _stripped_input(args, cfg)
    K = _K(args, cfg)
    w = steer_far(cfg.scene.geometry, args.angle)
    X = np.tensordot(w.conj(), T.data, axes=(0, 0)) / cfg.scene.geometry.num_elements
    nfft = _pair(args.nfft, "--nfft") if args.nfft else (None, None)
    if args.alg == "periodogram":
        spec = periodogram2d(X, cfg.ofdm, *nfft)
    else:
        window = _pair(args.window, "--window") if args.window else None
        grids = {}
        if args.nfft:
            nt, nv = nfft
            grids = dict(delay_grid=np.arange(nt) / (nt * cfg.ofdm.subcarrier_spacing),
                         doppler_grid=(np.arange(nv) - nv // 2) / (nv * cfg.ofdm.total_symbol_time))
        spec = music2d(X, cfg.ofdm, K, window, forward_backward=args.forward_backward, **grids)
    _joint_outputs(args, cfg, spec, K, dict(algorithm=args.alg, angle=args.angle, window=args.window,
                                            nfft=args.nfft))


def cmd_estimate3d(args):
    from .estimators.joint import music3d, periodogram3d
    cfg = _run_config(args)
    T = _stripped_input(args, cfg)
    K = _K(args, cfg)
    if args.alg == "periodogram":
        nfft = _pair(args.nfft, "--nfft") if args.nfft else None
        spec = periodogram3d(T, cfg.scene.geometry, cfg.ofdm, nfft)
    else:
        window = _pair(args.window, "--window") if args.window else None
        spec = music3d(T, cfg.scene.geometry, cfg.ofdm, K, window)
    _joint_outputs(args, cfg, spec, K, dict(algorithm=args.alg, window=args.window, nfft=args.nfft))


def cmd_nearfield(args):
    from .nearfield import (NearFieldGrid, bf2d, covariance_bundle, estimate_nearfield, music2d_nf)
    from .ofdm import load_tensor, reshape_angle
    cfg = _run_config(args)
    T = load_tensor(args.tensor) if args.tensor else _synth(cfg, "near_exact")[0]
    X = reshape_angle(T)
    K = _K(args, cfg)
    geom = cfg.scene.geometry.centered()
    grid = NearFieldGrid.default(geom, cfg.scene.carrier, angle_step=args.angle_step, num_ranges=args.num_ranges)
    est = estimate_nearfield(args.alg, X, geom, cfg.scene.carrier, K, grid)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["target_idx", "angle_deg", "range_m", "algorithm"])
        for i, (a, r) in enumerate(zip(est.angles, est.ranges)):
            w.writerow([i, repr(float(a)), repr(float(r)), args.alg])
    outputs = [args.out]
    if args.spectrum and args.alg in ("bf2d", "music2d"):
        bundle = covariance_bundle(X, K)
        spec = bf2d(bundle.R, geom, cfg.scene.carrier, grid) if args.alg == "bf2d" else \
            music2d_nf(bundle, geom, cfg.scene.carrier, grid)
        spec.save(args.spectrum)
        outputs.append(args.spectrum)
        if args.heatmap:
            from .figures import save_heatmap
            save_heatmap(spec, args.heatmap, labels=("distance (m)", "angle (deg)"))
            outputs.append(args.heatmap)
    write_manifest(_manifest_path(args.out), dict(scene=cfg.scene, ofdm=cfg.ofdm, snr_db=cfg.snr_db,
                                                  algorithm=args.alg, K=K, angle_step=args.angle_step,
                                                  num_ranges=args.num_ranges, flags=est.flags),
                   seed=cfg.seed, outputs=outputs)
    for i, (a, r) in enumerate(zip(est.angles, est.ranges)):
        print(f"{i}\t{a:.4f} deg\t{r:.4f} m")


def cmd_pipeline(args):
    from .frameworks import run_framework
    cfg = _run_config(args)
    T = _stripped_input(args, cfg)
    K = _K(args, cfg)
    fw = cfg.framework if args.framework is None else replace(cfg.framework, framework=args.framework)
    if args.grouping:
        fw = replace(fw, grouping=args.grouping)
    if args.beamformer:
        fw = replace(fw, beamformer=args.beamformer)
    if args.joint:
        fw = replace(fw, joint=args.joint)
    est = run_framework(T, cfg.scene.geometry, cfg.ofdm, K, fw)
    est.to_csv(args.out)
    write_manifest(_manifest_path(args.out), dict(scene=cfg.scene, ofdm=cfg.ofdm, snr_db=cfg.snr_db, K=K,
                                                  framework=fw, flags=est.flags), seed=cfg.seed, outputs=[args.out])
    for i in range(len(est)):
        print(f"{i}\t{est.theta[i]:.4f} deg\t{est.tau[i] * 1e6:.5f} us\t{est.doppler[i]:.2f} Hz")


def _experiment(args, kind, **fixed):
    cfg = _run_config(args)
    over = dict(kind=kind.value, trials=args.trials, workers=args.workers, axis=args.axis)
    if args.algorithms:
        over["algorithms"] = args.algorithms.split(",")
    if args.snr_sweep:
        over["snr_db"] = _span(args.snr_sweep)
    elif args.snr is not None:
        over["snr_db"] = (args.snr,)
    if args.seed is not None:
        over["seed"] = args.seed
    over.update(fixed)
    return cfg, experiment_spec(cfg, **over)


def _write_table(table, spec, out):
    table.to_csv(out)
    write_manifest(_manifest_path(out), dict(spec=spec), seed=spec.seed, wall_s=table.wall_s, outputs=[out])


def cmd_mc_rmse(args):
    from .experiments import run_nearfield_suite, run_rmse_sweep
    kind = ExperimentKind.NEAR_FIELD_SUITE if args.nearfield else ExperimentKind.RMSE_SWEEP
    fixed = {"steering": "near_exact"} if args.nearfield else {}
    cfg, spec = _experiment(args, kind, **fixed)
    table = run_nearfield_suite(spec) if args.nearfield else run_rmse_sweep(spec)
    _write_table(table, spec, args.out)
    for r in table.rows:
        print("\t".join("" if v is None else f"{v:.4g}" if isinstance(v, float) else str(v) for v in r.values()))


def cmd_resolution(args):
    from .experiments import run_resolution_sweep, transition
    fixed = {}
    if args.separations:
        fixed["separations"] = _span(args.separations)
    if args.gate is not None:
        fixed["gate"] = args.gate
    cfg, spec = _experiment(args, ExperimentKind.RESOLUTION_SWEEP, **fixed)
    table = run_resolution_sweep(spec)
    _write_table(table, spec, args.out)
    for snr in spec.snr_db:
        for alg in spec.algorithms:
            p = table.column("probability", snr_db=snr, algorithm=alg)
            print(f"{snr:g} dB\t{alg}\ttransition={transition(spec.separations, p):.3g}")


def cmd_bench(args):
    from .complexity import JOINT, NEAR_FIELD, joint, near_field, table_1d, time_1d, sci
    if args.table == "1d":
        antennas = tuple(int(m) for m in args.antennas.split(",")) if args.antennas else None
        t = table_1d(antennas or (16, 64, 256, 512, 1024), Ns=args.grid_points)
        if args.time:
            time_1d(t)
        t.to_csv(args.out)
        for alg in t.rows:
            print(alg.ljust(12), "  ".join(t.cell(alg, M) for M in t.antennas))
    else:
        names = JOINT if args.table == "joint" else NEAR_FIELD
        fn = joint if args.table == "joint" else near_field
        antennas = tuple(int(m) for m in args.antennas.split(",")) if args.antennas else (
            (16,) if args.table == "joint" else (64, 128, 512))
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["algorithm"] + [f"theoretical_M{M}" for M in antennas])
            for alg in names:
                cells = [sci(fn(alg, M=M)) for M in antennas]
                w.writerow([alg] + cells)
                print(alg.ljust(14), "  ".join(cells))
    write_manifest(_manifest_path(args.out), dict(table=args.table, antennas=args.antennas,
                                                  grid_points=args.grid_points, timed=args.time),
                   outputs=[args.out])


def cmd_reproduce(args):
    from .figures import RECIPES, reproduce
    if args.list or not args.figure:
        print("available:", ", ".join(RECIPES))
        return
    kw = {"seed": args.seed if args.seed is not None else 0, "workers": args.workers}
    if args.trials:
        kw["trials"] = args.trials
    if args.snr is not None:
        kw["snr_db"] = args.snr
    t0 = time.perf_counter()
    for p in reproduce(args.figure, args.out, **kw):
        print(p)
    print(f"done in {time.perf_counter() - t0:.1f} s")


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .estimators.oned import ALGORITHMS
    from .nearfield import NEARFIELD_ALGORITHMS
    ap = argparse.ArgumentParser(prog="isacsim", description="MIMO-OFDM sensing simulator and estimators")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a sensing tensor")
    _common(p, tensor=False)
    p.add_argument("--model", choices=["far", "near_exact", "near_fresnel"], default="far")
    p.add_argument("--strip", action="store_true", help="divide out the transmit symbols before saving")
    p.add_argument("--symbols-out", help="save the symbol grid (.npy) alongside an unstripped tensor")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="1D angle, delay or Doppler estimation")
    _common(p)
    p.add_argument("--axis", choices=["angle", "delay", "doppler"], default="angle")
    p.add_argument("--alg", choices=ALGORITHMS, default="periodogram")
    p.add_argument("--nfft", type=int, help="FFT size for FFT-based spectra")
    p.add_argument("--spectrum", help="spectrum CSV (param,power)")
    p.add_argument("-o", "--out", required=True, help="peak CSV (rank,param,power)")
    p.set_defaults(func=cmd_estimate)

    for name, fn, algs in (("estimate2d", cmd_estimate2d, ["periodogram", "music"]),
                           ("estimate3d", cmd_estimate3d, ["periodogram", "music"])):
        p = sub.add_parser(name, help=("joint delay-Doppler" if name == "estimate2d" else
                                       "joint angle-delay-Doppler") + " estimation")
        _common(p)
        p.add_argument("--alg", choices=algs, default="periodogram")
        p.add_argument("--window", help="smoothing window, e.g. 64x32 (MUSIC)")
        p.add_argument("--nfft", help="FFT sizes, e.g. 1024x512")
        p.add_argument("--spectrum", help="binary spectrum dump")
        p.add_argument("--heatmap", help="PNG raster of the spectrum")
        p.add_argument("-o", "--out", required=True, help="peak CSV")
        if name == "estimate2d":
            p.add_argument("--angle", type=float, default=0.0, help="beam direction before the 2D stage (deg)")
            p.add_argument("--forward-backward", action="store_true")
        p.set_defaults(func=fn)

    p = sub.add_parser("nearfield", help="near-field angle and distance estimation")
    _common(p)
    p.add_argument("--alg", choices=NEARFIELD_ALGORITHMS, default="music2d")
    p.add_argument("--angle-step", type=float, default=0.1)
    p.add_argument("--num-ranges", type=int, default=60)
    p.add_argument("--spectrum", help="binary spectrum dump (bf2d and music2d)")
    p.add_argument("--heatmap", help="PNG raster of the spectrum")
    p.add_argument("-o", "--out", required=True, help="estimate CSV")
    p.set_defaults(func=cmd_nearfield)

    p = sub.add_parser("pipeline", help="run an estimation framework")
    _common(p)
    p.add_argument("--framework", choices=["parallel", "sequential", "joint2d", "joint3d"])
    p.add_argument("--grouping", choices=["power", "correlation"])
    p.add_argument("--beamformer", choices=["zf", "mrc", "mmse"])
    p.add_argument("--joint", choices=["periodogram", "music"])
    p.add_argument("-o", "--out", required=True, help="estimate CSV")
    p.set_defaults(func=cmd_pipeline)

    for name, fn in (("mc-rmse", cmd_mc_rmse), ("resolution", cmd_resolution)):
        p = sub.add_parser(name, help="Monte-Carlo RMSE against SNR" if name == "mc-rmse" else
                           "two-target resolution probability")
        p.add_argument("--config")
        p.add_argument("--scene")
        p.add_argument("--seed", type=int)
        p.add_argument("--snr", type=float)
        p.add_argument("--snr-sweep", help="start:stop:step or a comma list (dB)")
        p.add_argument("--algorithms", help="comma list")
        p.add_argument("--axis", choices=["angle", "delay", "doppler", "joint"])
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("-o", "--out", required=True, help="result CSV")
        if name == "mc-rmse":
            p.add_argument("--nearfield", action="store_true", help="near-field estimators on exact spherical data")
        else:
            p.add_argument("--separations", help="start:stop:step or a comma list")
            p.add_argument("--gate", type=float, help="per-trial RMSE a success must stay under")
        p.set_defaults(func=fn)

    p = sub.add_parser("bench", help="theoretical complexity tables")
    p.add_argument("--table", choices=["1d", "joint", "nearfield"], default="1d")
    p.add_argument("--antennas", help="comma list of array sizes")
    p.add_argument("--grid-points", type=int, default=1801)
    p.add_argument("--time", action="store_true", help="also measure wall time (1d table)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("reproduce", help="regenerate a figure's data and raster")
    p.add_argument("figure", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--out", default="figures")
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"isacsim {args.command}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
