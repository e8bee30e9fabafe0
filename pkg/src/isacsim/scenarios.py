"""Named scenes used by the experiments, tests and CLI recipes."""

from __future__ import annotations

from .ofdm import OfdmConfig
from .scene import ArrayGeometry, Carrier, Reference, Scene, Target


def baseline_ofdm() -> OfdmConfig:
    """128 subcarriers, 64 symbols, 120 kHz spacing, CP of a quarter symbol."""
    return OfdmConfig(128, 64, 120e3, 0.25)


def three_targets(num_elements: int = 16) -> Scene:
    """Well separated in every domain except two Dopplers half a cell apart."""
    return Scene(ArrayGeometry(num_elements), Carrier(28e9),
                 [Target(-20, 20, 8), Target(10, 80, 12), Target(45, 50, 20)])


def separated_targets(num_elements: int = 16) -> Scene:
    """Three targets at least two resolution cells apart in every domain."""
    return Scene(ArrayGeometry(num_elements), Carrier(28e9),
                 [Target(-20, 20, -15), Target(10, 80, 5), Target(45, 50, 25)])


def five_targets(num_elements: int = 16) -> Scene:
    """Three distinct angles and four distinct delays shared by five targets."""
    return Scene(ArrayGeometry(num_elements), Carrier(28e9),
                 [Target(-20, 20, 8), Target(10, 45, 14), Target(10, 80, 20),
                  Target(45, 60, 6), Target(45, 45, 12)])


def equal_angle_targets(num_elements: int = 16) -> Scene:
    """Three targets at 10 degrees separated only in delay and Doppler."""
    return Scene(ArrayGeometry(num_elements), Carrier(28e9),
                 [Target(10, 20, 8), Target(10, 50, 20), Target(10, 80, 12)])


def two_targets(separation: float, num_elements: int = 16) -> Scene:
    """Resolution probe: one target at broadside, one ``separation`` degrees off."""
    return Scene(ArrayGeometry(num_elements), Carrier(28e9),
                 [Target(0, 20, 8), Target(separation, 50, 20)])


def focusing_pair() -> Scene:
    """Two near-field targets for a 256-element half-wavelength array at 28 GHz."""
    return Scene(ArrayGeometry(256, 0.5, Reference.CENTER), Carrier(28e9),
                 [Target(10, 5), Target(20, 10)])


def spread_pair() -> Scene:
    """One target well inside and one near the edge of the radiating near field."""
    return Scene(ArrayGeometry(256, 0.5, Reference.CENTER), Carrier(28e9),
                 [Target(-20, 30), Target(40, 150)])


def fresnel_target() -> Scene:
    """Single target in the Fresnel region of a 65-element quarter-wavelength array."""
    return Scene(ArrayGeometry(65, 0.25, Reference.CENTER), Carrier(10e9), [Target(10.2, 5.64)])


def nearfield_ofdm() -> OfdmConfig:
    """Ten snapshots: 2 subcarriers by 5 symbols."""
    return OfdmConfig(2, 5, 120e3, 0.25)


SCENES = {
    "three-targets": three_targets,
    "separated": separated_targets,
    "five-targets": five_targets,
    "equal-angle": equal_angle_targets,
    "focusing-pair": focusing_pair,
    "spread-pair": spread_pair,
    "fresnel-target": fresnel_target,
}
