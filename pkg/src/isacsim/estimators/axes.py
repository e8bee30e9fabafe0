"""Vandermonde manifolds shared by the angle, delay and Doppler estimators.

Every axis has steering a[i] = exp(j i phi(x)) for i = 0..L-1, with a linear
or sine phase map phi. Estimators work in phase space and map back through
the axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class AxisKind(enum.Enum):
    ANGLE = "angle"
    DELAY = "delay"
    DOPPLER = "doppler"


@dataclass(frozen=True)
class ManifoldAxis:
    """One estimation axis.

    ``unit`` is d/lambda for angle, the subcarrier spacing for delay and the
    total symbol time for Doppler.
    """

    kind: AxisKind
    length: int
    unit: float

    def phase(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is AxisKind.ANGLE:
            return -2 * np.pi * self.unit * np.sin(np.deg2rad(x))
        if self.kind is AxisKind.DELAY:
            return -2 * np.pi * self.unit * x
        return 2 * np.pi * self.unit * x

    def from_phase(self, phi):
        """Parameter whose phase is phi (mod 2 pi), wrapped into the domain."""
        phi = np.angle(np.exp(1j * np.asarray(phi, dtype=float)))
        if self.kind is AxisKind.ANGLE:
            s = np.clip(-phi / (2 * np.pi * self.unit), -1.0, 1.0)
            return np.rad2deg(np.arcsin(s))
        if self.kind is AxisKind.DELAY:
            return np.mod(-phi / (2 * np.pi), 1.0) / self.unit
        return phi / (2 * np.pi * self.unit)

    def steering(self, x) -> np.ndarray:
        """L x G steering matrix (or length-L vector for scalar x)."""
        return np.exp(1j * np.multiply.outer(np.arange(self.length), self.phase(x)))

    def with_length(self, length: int) -> "ManifoldAxis":
        return ManifoldAxis(self.kind, int(length), self.unit)

    @property
    def domain(self):
        if self.kind is AxisKind.ANGLE:
            return (-90.0, 90.0)
        if self.kind is AxisKind.DELAY:
            return (0.0, 1.0 / self.unit)
        half = 1.0 / (2 * self.unit)
        return (-half, half)

    @property
    def cell(self) -> float:
        """Rayleigh cell in parameter units (sine space for angle, near broadside)."""
        if self.kind is AxisKind.ANGLE:
            return float(np.rad2deg(np.arcsin(min(1.0, 1.0 / (self.length * self.unit)))))
        return 1.0 / (self.length * self.unit)

    def default_grid(self) -> np.ndarray:
        if self.kind is AxisKind.ANGLE:
            return np.linspace(-90.0, 90.0, 1801)
        lo, hi = self.domain
        n = 8 * self.length
        return lo + (hi - lo) * np.arange(n) / n

    # FFT bin bookkeeping: bin k of an n-point transform sits at phase
    # -2 pi k / n for the inverse-DFT axes and +2 pi k / n for Doppler.
    @property
    def inverse_transform(self) -> bool:
        return self.kind is not AxisKind.DOPPLER

    @property
    def centered(self) -> bool:
        return self.kind is not AxisKind.DELAY

    def bins(self, n_fft: int) -> np.ndarray:
        k = np.arange(n_fft)
        if self.centered:
            k = k - n_fft // 2
        return k

    def bin_params(self, n_fft: int):
        """(valid bin mask, parameter per valid bin) for an n_fft transform."""
        f = self.bins(n_fft) / n_fft
        if self.kind is AxisKind.ANGLE:
            s = f / self.unit
            ok = np.abs(s) <= 1.0
            return ok, np.rad2deg(np.arcsin(s[ok]))
        ok = np.ones(n_fft, dtype=bool)
        return ok, f / self.unit


def angle_axis(geom) -> ManifoldAxis:
    return ManifoldAxis(AxisKind.ANGLE, geom.num_elements, geom.spacing)


def delay_axis(ofdm, length=None) -> ManifoldAxis:
    return ManifoldAxis(AxisKind.DELAY, length or ofdm.num_subcarriers, ofdm.subcarrier_spacing)


def doppler_axis(ofdm, length=None) -> ManifoldAxis:
    return ManifoldAxis(AxisKind.DOPPLER, length or ofdm.num_symbols, ofdm.total_symbol_time)


def make_axis(kind, geom=None, ofdm=None) -> ManifoldAxis:
    kind = AxisKind(kind)
    if kind is AxisKind.ANGLE:
        return angle_axis(geom)
    if kind is AxisKind.DELAY:
        return delay_axis(ofdm)
    return doppler_axis(ofdm)
