"""Array geometry, targets, steering vectors and unit conversions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


class DomainError(ValueError):
    """A parameter lies outside the region where the model is defined."""


class Reference(enum.Enum):
    FIRST = "first"
    CENTER = "center"


class SteeringKind(enum.Enum):
    FAR = "far"
    NEAR_EXACT = "near_exact"
    NEAR_FRESNEL = "near_fresnel"


@dataclass(frozen=True)
class Carrier:
    frequency: float = 28e9

    def __post_init__(self):
        if not self.frequency > 0:
            raise DomainError("carrier frequency must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array.

    ``spacing`` is the element spacing in wavelengths. ``reference`` picks the
    phase origin: the first element (offsets 0..M-1) or the array center
    (offsets -J..J for odd M). The two differ only by a global phase.
    """

    num_elements: int
    spacing: float = 0.5
    reference: Reference = Reference.FIRST

    def __post_init__(self):
        if self.num_elements < 2:
            raise DomainError("need at least two elements")
        if not self.spacing > 0:
            raise DomainError("element spacing must be positive")
        if isinstance(self.reference, str):
            object.__setattr__(self, "reference", Reference(self.reference))

    @property
    def offsets(self) -> np.ndarray:
        m = np.arange(self.num_elements, dtype=float)
        if self.reference is Reference.CENTER:
            return m - (self.num_elements - 1) / 2
        return m

    @property
    def half_length(self) -> int:
        """J = (M-1)/2, defined for odd M only."""
        if self.num_elements % 2 == 0:
            raise DomainError("symmetric near-field methods need an odd element count")
        return (self.num_elements - 1) // 2

    def aperture(self, carrier: Carrier) -> float:
        return (self.num_elements - 1) * self.spacing * carrier.wavelength

    def centered(self) -> "ArrayGeometry":
        return replace(self, reference=Reference.CENTER)

    def check_symmetric(self):
        """Require odd M and spacing <= a quarter wavelength."""
        self.half_length
        if self.spacing > 0.25 + 1e-12:
            raise DomainError("symmetric near-field methods need spacing <= 0.25 wavelength")


@dataclass(frozen=True)
class Target:
    angle: float
    range: float
    velocity: float = 0.0
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not -90.0 <= self.angle <= 90.0:
            raise DomainError(f"angle {self.angle} outside [-90, 90] degrees")
        if not self.range > 0:
            raise DomainError("range must be positive")


def _check_angle(angle):
    a = np.asarray(angle, dtype=float)
    if np.any(np.abs(a) > 90.0):
        raise DomainError("angle outside [-90, 90] degrees")
    return a


def steer_far(geom: ArrayGeometry, angle) -> np.ndarray:
    """Plane-wave response exp(-j 2 pi eps_m (d/lambda) sin(theta)).

    A scalar angle gives a length-M vector, an array of G angles an M x G matrix.
    """
    a = _check_angle(angle)
    phase = -2j * np.pi * geom.spacing * np.multiply.outer(geom.offsets, np.sin(np.deg2rad(a)))
    return np.exp(phase)


def steer_near_exact(geom: ArrayGeometry, carrier: Carrier, angle, rng) -> np.ndarray:
    """Spherical-wave response exp(j 2 pi (r_m - r) / lambda) with center reference.

    ``angle`` and ``rng`` broadcast against each other; the element index is
    the leading axis of the result.
    """
    if geom.reference is not Reference.CENTER:
        raise DomainError("near-field steering uses the center reference")
    a = _check_angle(angle)
    r = np.asarray(rng, dtype=float)
    lam = carrier.wavelength
    d = geom.spacing * lam
    eps = geom.offsets.reshape((-1,) + (1,) * np.broadcast(a, r).ndim)
    if np.any(r <= np.max(np.abs(geom.offsets)) * d):
        raise DomainError("range must exceed the array half-aperture")
    s = np.sin(np.deg2rad(a))
    # r_m - r computed without cancellation: (r_m^2 - r^2) / (r_m + r)
    num = eps * d * (eps * d - 2 * r * s)
    r_m = np.sqrt(r * r - 2 * eps * d * r * s + (eps * d) ** 2)
    return np.exp(2j * np.pi / lam * num / (r_m + r))


def fresnel_phases(geom: ArrayGeometry, carrier: Carrier, angle, rng):
    """(omega, psi) of the second-order expansion for a target at (angle, range)."""
    th = np.deg2rad(_check_angle(angle))
    lam = carrier.wavelength
    d = geom.spacing * lam
    omega = -2 * np.pi * d * np.sin(th) / lam
    psi = np.pi * d * d * np.cos(th) ** 2 / (lam * np.asarray(rng, dtype=float))
    return omega, psi


def fresnel_to_polar(geom: ArrayGeometry, carrier: Carrier, omega, psi):
    """Invert ``fresnel_phases``: returns (angle in degrees, range in meters)."""
    lam = carrier.wavelength
    d = geom.spacing * lam
    s = np.clip(-np.asarray(omega) * lam / (2 * np.pi * d), -1.0, 1.0)
    th = np.arcsin(s)
    with np.errstate(divide="ignore"):
        r = np.pi * d * d * np.cos(th) ** 2 / (lam * np.asarray(psi))
    return np.rad2deg(th), r


def steer_near_fresnel(geom: ArrayGeometry, omega, psi) -> np.ndarray:
    """Quadratic-phase response exp(j(omega eps + psi eps^2)) with center reference."""
    if geom.reference is not Reference.CENTER:
        raise DomainError("near-field steering uses the center reference")
    w, p = np.broadcast_arrays(np.asarray(omega, dtype=float), np.asarray(psi, dtype=float))
    eps = geom.offsets.reshape((-1,) + (1,) * w.ndim)
    return np.exp(1j * (w * eps + p * eps * eps))


def steering(kind: SteeringKind, geom: ArrayGeometry, carrier: Carrier, angle, rng=None):
    """Dispatch on the steering model; near-field kinds take (angle, range)."""
    kind = SteeringKind(kind)
    if kind is SteeringKind.FAR:
        return steer_far(geom, angle)
    if kind is SteeringKind.NEAR_EXACT:
        return steer_near_exact(geom, carrier, angle, rng)
    omega, psi = fresnel_phases(geom, carrier, angle, rng)
    return steer_near_fresnel(geom, omega, psi)


def rayleigh_distance(geom: ArrayGeometry, carrier: Carrier) -> float:
    return 2 * geom.aperture(carrier) ** 2 / carrier.wavelength


def is_near_field(geom: ArrayGeometry, carrier: Carrier, rng: float) -> bool:
    return rng < rayleigh_distance(geom, carrier)


def range_to_delay(rng):
    return 2 * np.asarray(rng, dtype=float) / SPEED_OF_LIGHT


def delay_to_range(tau):
    return np.asarray(tau, dtype=float) * SPEED_OF_LIGHT / 2


def velocity_to_doppler(v, carrier: Carrier):
    return 2 * np.asarray(v, dtype=float) / carrier.wavelength


def doppler_to_velocity(nu, carrier: Carrier):
    return np.asarray(nu, dtype=float) * carrier.wavelength / 2


def units(target: Target, carrier: Carrier, ofdm=None):
    """Two-way delay and Doppler of a target.

    With an OFDM configuration the unambiguous windows are enforced:
    tau < 1/df and |nu| < 1/(2 Ts).
    """
    tau = float(range_to_delay(target.range))
    nu = float(velocity_to_doppler(target.velocity, carrier))
    if ofdm is not None:
        if tau >= ofdm.max_delay:
            raise DomainError(f"delay {tau:.3e} s beyond unambiguous range {ofdm.max_delay:.3e} s")
        if abs(nu) >= ofdm.max_doppler:
            raise DomainError(f"Doppler {nu:.3e} Hz beyond unambiguous window {ofdm.max_doppler:.3e} Hz")
    return tau, nu


@dataclass(frozen=True)
class Scene:
    geometry: ArrayGeometry
    carrier: Carrier
    targets: tuple

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def angles(self) -> np.ndarray:
        return np.array([t.angle for t in self.targets])

    def ranges(self) -> np.ndarray:
        return np.array([t.range for t in self.targets])

    def delays(self) -> np.ndarray:
        return range_to_delay(self.ranges())

    def dopplers(self) -> np.ndarray:
        return velocity_to_doppler([t.velocity for t in self.targets], self.carrier)

    def gains(self) -> np.ndarray:
        return np.array([complex(t.gain) for t in self.targets])

    def truth(self) -> np.ndarray:
        """K x 3 array of (angle deg, delay s, Doppler Hz)."""
        return np.column_stack([self.angles(), self.delays(), self.dopplers()])
