"""Declarative run configuration: ``[scene]``, ``[ofdm]``, ``[framework]`` and ``[experiment]``.

Example::

    [scene]
    num_elements = 16
    spacing_wavelengths = 0.5
    reference = "first"
    carrier_hz = 28e9

    [[target]]
    angle_deg = -20
    range_m = 20
    velocity_mps = 8

    [ofdm]
    num_subcarriers = 128
    num_symbols = 64
    snr_db = 10
    seed = 1

    [experiment]
    kind = "rmse"
    algorithms = ["periodogram", "music"]
    snr_start = -40
    snr_stop = 20
    snr_step = 5
    trials = 300
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import scenarios
from .experiments import ExperimentKind, ExperimentSpec, sweep
from .frameworks import FrameworkConfig
from .ofdm import OfdmConfig
from .scene import ArrayGeometry, Carrier, Reference, Scene, SteeringKind, Target


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: Scene
    ofdm: OfdmConfig
    snr_db: float | None = None
    seed: int = 0
    framework: FrameworkConfig = field(default_factory=FrameworkConfig)
    experiment: dict = field(default_factory=dict)

    def experiment_spec(self, **override) -> ExperimentSpec:
        return experiment_spec(self, **override)


def _known(section: dict, keys, name):
    extra = set(section) - set(keys)
    if extra:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(extra))}")


SCENE_KEYS = ("preset", "num_elements", "spacing_wavelengths", "reference", "carrier_hz", "target")
TARGET_KEYS = ("angle_deg", "range_m", "velocity_mps", "gain_re", "gain_im")


def parse_scene(section: dict, targets=None) -> Scene:
    _known(section, SCENE_KEYS, "scene")
    targets = list(section.get("target", [])) + list(targets or [])
    if "preset" in section:
        if section["preset"] not in scenarios.SCENES:
            raise ConfigError(f"unknown scene preset {section['preset']!r}; "
                              f"available: {', '.join(scenarios.SCENES)}")
        base = scenarios.SCENES[section["preset"]]()
    else:
        base = None
    geom = ArrayGeometry(
        int(section.get("num_elements", base.geometry.num_elements if base else 16)),
        float(section.get("spacing_wavelengths", base.geometry.spacing if base else 0.5)),
        Reference(section.get("reference", base.geometry.reference.value if base else "first")))
    carrier = Carrier(float(section.get("carrier_hz", base.carrier.frequency if base else 28e9)))
    parsed = []
    for t in targets:
        _known(t, TARGET_KEYS, "target")
        parsed.append(Target(float(t["angle_deg"]), float(t["range_m"]), float(t.get("velocity_mps", 0.0)),
                             complex(float(t.get("gain_re", 1.0)), float(t.get("gain_im", 0.0)))))
    if not parsed and base is not None:
        parsed = list(base.targets)
    return Scene(geom, carrier, parsed)


OFDM_KEYS = ("num_subcarriers", "num_symbols", "subcarrier_spacing_hz", "cp_ratio", "snr_db", "seed")


def parse_ofdm(section: dict):
    _known(section, OFDM_KEYS, "ofdm")
    cfg = OfdmConfig(int(section.get("num_subcarriers", 128)), int(section.get("num_symbols", 64)),
                     float(section.get("subcarrier_spacing_hz", 120e3)), float(section.get("cp_ratio", 0.25)))
    snr = section.get("snr_db")
    return cfg, None if snr is None else float(snr), int(section.get("seed", 0))


FRAMEWORK_KEYS = ("framework", "algorithms", "grouping", "beamformer", "order", "joint", "floor_db",
                  "branch_counts", "n_fft")


def parse_framework(section: dict) -> FrameworkConfig:
    _known(section, FRAMEWORK_KEYS, "framework")
    kw = dict(section)
    if "branch_counts" in kw:
        kw["branch_counts"] = tuple(kw["branch_counts"])
    try:
        return FrameworkConfig(**kw)
    except ValueError as e:
        raise ConfigError(f"[framework] {e}") from e


EXPERIMENT_KEYS = ("kind", "algorithms", "axis", "snr_db", "snr_start", "snr_stop", "snr_step", "trials", "seed",
                   "separations", "sep_start", "sep_stop", "sep_step", "gate", "gates", "steering", "workers",
                   "angle_step", "num_ranges")


def load_config(path) -> RunConfig:
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    return parse_config(doc)


def loads_config(text: str) -> RunConfig:
    return parse_config(tomllib.loads(text))


def parse_config(doc: dict) -> RunConfig:
    extra = set(doc) - {"scene", "target", "ofdm", "framework", "experiment"}
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    scene = parse_scene(doc.get("scene", {}), doc.get("target"))
    ofdm, snr, seed = parse_ofdm(doc.get("ofdm", {}))
    fw = parse_framework(doc.get("framework", {}))
    exp = dict(doc.get("experiment", {}))
    _known(exp, EXPERIMENT_KEYS, "experiment")
    return RunConfig(scene, ofdm, snr, seed, fw, exp)


def experiment_spec(cfg: RunConfig, **override) -> ExperimentSpec:
    """Resolve the ``[experiment]`` section (plus overrides) into an ExperimentSpec."""
    e = {**cfg.experiment, **{k: v for k, v in override.items() if v is not None}}
    if "snr_db" in e:
        s = e["snr_db"]
        snrs = tuple(s) if isinstance(s, (list, tuple)) else (float(s),)
    elif "snr_start" in e:
        snrs = sweep(e["snr_start"], e.get("snr_stop", e["snr_start"]), e.get("snr_step", 5.0))
    elif cfg.snr_db is not None:
        snrs = (cfg.snr_db,)
    else:
        raise ConfigError("no SNR given: set [experiment] snr_db or snr_start/stop/step, or [ofdm] snr_db")
    if "separations" in e:
        seps = tuple(float(x) for x in e["separations"])
    elif "sep_start" in e:
        seps = sweep(e["sep_start"], e["sep_stop"], e["sep_step"])
    else:
        seps = ()
    options = {k: e[k] for k in ("angle_step", "num_ranges") if k in e}
    if "gates" in e:
        options["gates"] = {float(k): float(v) for k, v in e["gates"].items()}
    algs = e.get("algorithms", ["periodogram"])
    try:
        return ExperimentSpec(
            ExperimentKind(e.get("kind", "rmse")), cfg.scene, cfg.ofdm, tuple([algs] if isinstance(algs, str) else algs),
            e.get("axis", "angle"), snrs, int(e.get("trials", 100)), int(e.get("seed", cfg.seed)), seps,
            None if e.get("gate") is None else float(e["gate"]), cfg.framework,
            SteeringKind(e.get("steering", "far")), options, int(e.get("workers", 1)))
    except ValueError as err:
        raise ConfigError(f"[experiment] {err}") from err


def default_config() -> RunConfig:
    return RunConfig(scenarios.three_targets(), scenarios.baseline_ofdm())


def config_path(p) -> Path:
    p = Path(p)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return p
