"""Monte-Carlo orchestration: RMSE sweeps, resolution curves and the near-field suite.

Every trial draws from its own counter-derived stream (master seed, SNR or
separation index, trial index), so results are identical whether trials
run serially or in a process pool.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import __version__
from .estimators.axes import make_axis
from .estimators.oned import EstimationError, estimate_1d
from .frameworks import FrameworkConfig, match_to_truth, resolution_cells, run_framework
from .nearfield import NearFieldGrid, estimate_nearfield
from .ofdm import (OfdmConfig, qpsk_symbols, reshape_angle, reshape_delay, reshape_doppler, strip_symbols,
                   synthesize, trial_rng)
from .scene import SPEED_OF_LIGHT, Scene, SteeringKind

FAILURE_LIMIT = 0.05
AXIS_UNITS = {"angle": "deg", "delay": "s", "doppler": "hz", "range": "m"}


class ExperimentKind(enum.Enum):
    RMSE_SWEEP = "rmse"
    RESOLUTION_SWEEP = "resolution"
    SPECTRUM_DUMP = "spectrum"
    COMPLEXITY_BENCH = "bench"
    NEAR_FIELD_SUITE = "nearfield"


def sweep(start: float, stop: float, step: float) -> tuple:
    """Inclusive arithmetic sweep, rounded to kill float drift (-40, -35, ..., 20)."""
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """Everything a run needs; ``axis`` is angle, delay, doppler or joint.

    For resolution sweeps ``scene`` holds the two targets at zero
    separation; the second one is moved along ``axis`` by each entry of
    ``separations`` (degrees, seconds or hertz).  ``gate`` is the per-trial
    RMSE a resolution success must stay under.
    """

    kind: ExperimentKind
    scene: Scene
    ofdm: OfdmConfig
    algorithms: tuple = ("periodogram",)
    axis: str = "angle"
    snr_db: tuple = (10.0,)
    trials: int = 100
    seed: int = 0
    separations: tuple = ()
    gate: float | None = None
    framework: FrameworkConfig | None = None
    steering: SteeringKind = SteeringKind.FAR
    options: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ExperimentKind(self.kind))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if len(self.snr_db) == 0:
            raise ValueError("SNR sweep is empty")
        if self.kind is ExperimentKind.RESOLUTION_SWEEP and len(self.separations) == 0:
            raise ValueError("separation sweep is empty")
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))


@dataclass(eq=False)
class ResultTable:
    """Rows of aggregated results; ``wall_s`` is kept out of the CSV so reruns are byte-identical."""

    columns: tuple
    rows: list = field(default_factory=list)
    wall_s: float = 0.0

    def add(self, **row):
        for k in ("probability", "match_rate"):
            if k in row and not 0.0 <= row[k] <= 1.0:
                raise ValueError(f"{k} outside [0, 1]")
        for k, v in row.items():
            if k.startswith("rmse") and v is not None and not v >= 0:
                raise ValueError("negative RMSE")
        self.rows.append({c: row.get(c) for c in self.columns})

    def select(self, **where) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]

    def column(self, name, **where) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.select(**where)], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow(["" if r[c] is None else _fmt(r[c]) for c in self.columns])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _pool_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _draw(spec: ExperimentSpec, scene: Scene, snr, rng):
    """One fresh symbol grid and noise draw, symbols already divided out."""
    N, P = spec.ofdm.num_subcarriers, spec.ofdm.num_symbols
    b = qpsk_symbols(N, P, rng)
    return strip_symbols(synthesize(scene, spec.ofdm, b, spec.steering, snr, rng), b)


_RESHAPE = {"angle": reshape_angle, "delay": reshape_delay, "doppler": reshape_doppler}


def _truth(scene: Scene, axis: str) -> np.ndarray:
    return {"angle": scene.angles, "delay": scene.delays, "doppler": scene.dopplers}[axis]()


def _match_1d(est, truth):
    C = np.abs(np.asarray(est, dtype=float)[:, None] - truth[None, :])
    r, c = linear_sum_assignment(C)
    return C[r, c]


# ---------------------------------------------------------------- RMSE sweep

def _rmse_trial(args):
    spec, i, t = args
    rng = trial_rng(spec.seed, i, t)
    tensor = _draw(spec, spec.scene, spec.snr_db[i], rng)
    K = spec.scene.num_targets
    out = {}
    if spec.axis == "joint":
        geom = spec.scene.geometry
        truth = spec.scene.truth()
        cells = resolution_cells(geom, spec.ofdm)
        for name in spec.algorithms:
            cfg = FrameworkConfig(name) if spec.framework is None else replace(spec.framework, framework=name)
            try:
                est = run_framework(tensor, geom, spec.ofdm, K, cfg)
            except (EstimationError, np.linalg.LinAlgError, ValueError):
                out[name] = None
                continue
            m = match_to_truth(est, truth, weights=cells)
            out[name] = (m.errors, len(m.pairs))
        return out
    axis = make_axis(spec.axis, spec.scene.geometry, spec.ofdm)
    X = _RESHAPE[spec.axis](tensor)
    truth = _truth(spec.scene, spec.axis)
    for alg in spec.algorithms:
        try:
            x, _ = estimate_1d(X, axis, alg, K)
        except (EstimationError, np.linalg.LinAlgError):
            out[alg] = None
            continue
        if len(x) < K:
            out[alg] = None
            continue
        out[alg] = (_match_1d(x, truth)[:, None], K)
    return out


def run_rmse_sweep(spec: ExperimentSpec) -> ResultTable:
    """RMSE against SNR for each algorithm (1D axis) or framework (``axis="joint"``).

    Failed trials (exceptions or fewer than K estimates) are excluded; a
    point with 5% or more failures is marked invalid.
    """
    t0 = time.perf_counter()
    joint = spec.axis == "joint"
    cols = ["snr_db", "algorithm", "axis"]
    cols += ["rmse_angle_deg", "rmse_delay_s", "rmse_doppler_hz"] if joint else [f"rmse_{AXIS_UNITS[spec.axis]}"]
    cols += ["match_rate", "trials", "failures", "valid"]
    table = ResultTable(tuple(cols))
    tasks = [(spec, i, t) for i in range(len(spec.snr_db)) for t in range(spec.trials)]
    results = _pool_map(_rmse_trial, tasks, spec.workers)
    K = spec.scene.num_targets
    for i, snr in enumerate(spec.snr_db):
        chunk = results[i * spec.trials:(i + 1) * spec.trials]
        for alg in spec.algorithms:
            ok = [r[alg] for r in chunk if r[alg] is not None]
            fails = spec.trials - len(ok)
            row = dict(snr_db=snr, algorithm=alg, axis=spec.axis, trials=spec.trials, failures=fails,
                       valid=fails < FAILURE_LIMIT * spec.trials)
            errs = [e for e, _ in ok if len(e)]
            E = np.vstack(errs) if errs else np.zeros((0, 3 if joint else 1))
            rmse = np.sqrt(np.mean(E ** 2, axis=0)) if len(E) else np.full(E.shape[1], np.nan)
            row["match_rate"] = sum(n for _, n in ok) / (K * len(ok)) if ok else 0.0
            if joint:
                row.update(rmse_angle_deg=float(rmse[0]), rmse_delay_s=float(rmse[1]),
                           rmse_doppler_hz=float(rmse[2]))
            else:
                row[f"rmse_{AXIS_UNITS[spec.axis]}"] = float(rmse[0])
            table.add(**row)
    table.wall_s = time.perf_counter() - t0
    return table


def threshold_drop(snr, rmse, width=10.0):
    """Largest RMSE ratio between SNR points ``width`` dB apart, with the window center.

    Returns (ratio, center_db) of the steepest ``width``-dB window.
    """
    snr = np.asarray(snr, dtype=float)
    rmse = np.asarray(rmse, dtype=float)
    best = (0.0, np.nan)
    for i, s in enumerate(snr):
        j = np.flatnonzero(np.isclose(snr, s + width))
        if len(j) and rmse[j[0]] > 0:
            r = rmse[i] / rmse[j[0]]
            if r > best[0]:
                best = (float(r), s + width / 2)
    return best


# ---------------------------------------------------------- resolution sweep

def separated_scene(base: Scene, axis: str, separation: float) -> Scene:
    """Move the second target of ``base`` by ``separation`` along ``axis``."""
    t0, t1 = base.targets[0], base.targets[1]
    lam = base.carrier.wavelength
    if axis == "angle":
        t1 = replace(t1, angle=t0.angle + separation)
    elif axis == "delay":
        t1 = replace(t1, range=t0.range + separation * SPEED_OF_LIGHT / 2)
    elif axis == "doppler":
        t1 = replace(t1, velocity=t0.velocity + separation * lam / 2)
    else:
        raise ValueError(f"resolution sweeps run on angle, delay or doppler, not {axis!r}")
    return replace(base, targets=[t0, t1] + list(base.targets[2:]))


def _resolution_trial(args):
    spec, j, i, t = args
    scene = separated_scene(spec.scene, spec.axis, spec.separations[j])
    rng = trial_rng(spec.seed, j, i, t)
    tensor = _draw(spec, scene, spec.snr_db[i], rng)
    axis = make_axis(spec.axis, scene.geometry, spec.ofdm)
    X = _RESHAPE[spec.axis](tensor)
    truth = _truth(scene, spec.axis)
    out = {}
    for alg in spec.algorithms:
        try:
            x, _ = estimate_1d(X, axis, alg, scene.num_targets)
        except (EstimationError, np.linalg.LinAlgError):
            out[alg] = False
            continue
        if len(x) < scene.num_targets:
            out[alg] = False
            continue
        out[alg] = bool(np.sqrt(np.mean(_match_1d(x, truth) ** 2)) <= _gate(spec, i))
    return out


def _gate(spec, i):
    g = spec.gate if spec.gate is not None else spec.options.get("gates", {}).get(spec.snr_db[i])
    if g is None:
        raise ValueError("resolution sweep needs a success gate")
    return g


def run_resolution_sweep(spec: ExperimentSpec) -> ResultTable:
    """Probability that both targets are found with per-trial RMSE under the gate.

    ``options["gates"]`` may map SNR to gate when it differs per SNR point.
    """
    t0 = time.perf_counter()
    table = ResultTable(("snr_db", "algorithm", "axis", "separation", "probability", "trials"))
    nS, nR = len(spec.separations), len(spec.snr_db)
    tasks = [(spec, j, i, t) for i in range(nR) for j in range(nS) for t in range(spec.trials)]
    results = _pool_map(_resolution_trial, tasks, spec.workers)
    for i, snr in enumerate(spec.snr_db):
        for j, sep in enumerate(spec.separations):
            base = (i * nS + j) * spec.trials
            chunk = results[base:base + spec.trials]
            for alg in spec.algorithms:
                p = sum(r[alg] for r in chunk) / spec.trials
                table.add(snr_db=snr, algorithm=alg, axis=spec.axis, separation=float(sep), probability=p,
                          trials=spec.trials)
    table.wall_s = time.perf_counter() - t0
    return table


def transition(separations, probability, level=0.5) -> float:
    """Smallest separation where the probability first reaches ``level`` and stays there.

    Linear interpolation between the bracketing sweep points; nan if never.
    """
    s = np.asarray(separations, dtype=float)
    p = np.asarray(probability, dtype=float)
    above = p >= level
    if not above[-1]:
        return float("nan")
    k = len(p) - 1
    while k > 0 and above[k - 1]:
        k -= 1
    if k == 0:
        return float(s[0])
    return float(s[k - 1] + (level - p[k - 1]) * (s[k] - s[k - 1]) / (p[k] - p[k - 1]))


# ---------------------------------------------------------- near-field suite

def _nearfield_grid(spec):
    geom = spec.scene.geometry.centered()
    return NearFieldGrid.default(geom, spec.scene.carrier, angle_step=spec.options.get("angle_step", 0.5),
                                 num_ranges=spec.options.get("num_ranges", 60))


def _nearfield_trial(args):
    spec, i, t = args
    rng = trial_rng(spec.seed, i, t)
    N, P = spec.ofdm.num_subcarriers, spec.ofdm.num_symbols
    tensor = synthesize(spec.scene, spec.ofdm, qpsk_symbols(N, P, rng), SteeringKind.NEAR_EXACT,
                        spec.snr_db[i], rng)
    X = reshape_angle(tensor)
    geom = spec.scene.geometry.centered()
    grid = _nearfield_grid(spec)
    truth = np.column_stack([spec.scene.angles(), spec.scene.ranges()])
    K = spec.scene.num_targets
    out = {}
    for alg in spec.algorithms:
        try:
            est = estimate_nearfield(alg, X, geom, spec.scene.carrier, K, grid)
        except (EstimationError, np.linalg.LinAlgError):
            out[alg] = None
            continue
        E = est.as_array()
        if len(E) < K:
            out[alg] = None
            continue
        r, c = linear_sum_assignment(np.abs(E[:, None, 0] - truth[None, :, 0]))
        out[alg] = E[r] - truth[c]
    return out


def run_nearfield_suite(spec: ExperimentSpec) -> ResultTable:
    """Angle and distance RMSE of each near-field estimator against SNR."""
    t0 = time.perf_counter()
    table = ResultTable(("snr_db", "algorithm", "rmse_angle_deg", "rmse_range_m", "trials", "failures", "valid"))
    tasks = [(spec, i, t) for i in range(len(spec.snr_db)) for t in range(spec.trials)]
    results = _pool_map(_nearfield_trial, tasks, spec.workers)
    for i, snr in enumerate(spec.snr_db):
        chunk = results[i * spec.trials:(i + 1) * spec.trials]
        for alg in spec.algorithms:
            ok = [r[alg] for r in chunk if r[alg] is not None]
            fails = spec.trials - len(ok)
            E = np.vstack(ok) if ok else np.full((1, 2), np.nan)
            rmse = np.sqrt(np.mean(E ** 2, axis=0))
            table.add(snr_db=snr, algorithm=alg, rmse_angle_deg=float(rmse[0]), rmse_range_m=float(rmse[1]),
                      trials=spec.trials, failures=fails, valid=fails < FAILURE_LIMIT * spec.trials)
    table.wall_s = time.perf_counter() - t0
    return table


RUNNERS = {
    ExperimentKind.RMSE_SWEEP: run_rmse_sweep,
    ExperimentKind.RESOLUTION_SWEEP: run_resolution_sweep,
    ExperimentKind.NEAR_FIELD_SUITE: run_nearfield_suite,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    if spec.kind not in RUNNERS:
        raise ValueError(f"{spec.kind.value!r} experiments are run through their own command")
    return RUNNERS[spec.kind](spec)


# ------------------------------------------------------------------ manifest

def git_describe(cwd=None) -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=cwd or Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def plain(obj):
    """JSON-ready copy of dataclasses, enums and numpy values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(plain(k)): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_manifest(path, params: dict, seed=None, wall_s=None, outputs=()):
    """JSON manifest next to a result: resolved parameters, seed, version and git state."""
    doc = {
        "params": plain(params),
        "seed": seed,
        "package_version": __version__,
        "git_describe": git_describe(),
        "outputs": [str(Path(o).name) for o in outputs],
    }
    if wall_s is not None:
        doc["wall_s"] = round(float(wall_s), 3)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def default_workers() -> int:
    return max(1, min(8, (os.cpu_count() or 1)))
