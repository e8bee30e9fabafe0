"""OFDM numerology, symbol grids and post-FFT sensing tensor synthesis."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .scene import DomainError, Scene, SteeringKind, steering

TENSOR_MAGIC = b"ISACTNSR"


@dataclass(frozen=True)
class OfdmConfig:
    num_subcarriers: int = 128
    num_symbols: int = 64
    subcarrier_spacing: float = 120e3
    cp_ratio: float = 0.25

    def __post_init__(self):
        if self.num_subcarriers < 2 or self.num_symbols < 2:
            raise DomainError("need at least two subcarriers and two symbols")
        if not self.subcarrier_spacing > 0:
            raise DomainError("subcarrier spacing must be positive")
        if self.cp_ratio < 0:
            raise DomainError("cyclic prefix ratio must be non-negative")

    @property
    def symbol_time(self) -> float:
        """Useful symbol duration T = 1/df."""
        return 1.0 / self.subcarrier_spacing

    @property
    def cp_time(self) -> float:
        return self.cp_ratio * self.symbol_time

    @property
    def total_symbol_time(self) -> float:
        """Ts = T + Tcp."""
        return self.symbol_time + self.cp_time

    @property
    def bandwidth(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing

    @property
    def cpi(self) -> float:
        return self.num_symbols * self.total_symbol_time

    @property
    def delay_resolution(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def doppler_resolution(self) -> float:
        return 1.0 / self.cpi

    @property
    def max_delay(self) -> float:
        return 1.0 / self.subcarrier_spacing

    @property
    def max_doppler(self) -> float:
        return 1.0 / (2 * self.total_symbol_time)

    @property
    def ici_doppler_limit(self) -> float:
        return self.subcarrier_spacing / 10


def qpsk_symbols(num_subcarriers: int, num_symbols: int, rng) -> np.ndarray:
    """Unit-modulus QPSK grid of shape (N, P)."""
    rng = np.random.default_rng(rng)
    bits = rng.integers(0, 4, size=(num_subcarriers, num_symbols))
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))


class TensorKind(enum.IntEnum):
    WITH_SYMBOLS = 0
    STRIPPED = 1


@dataclass(frozen=True, eq=False)
class SensingTensor:
    """Post-FFT receive samples indexed (antenna, subcarrier, symbol)."""

    data: np.ndarray
    kind: TensorKind = TensorKind.WITH_SYMBOLS
    snr_db: float | None = None
    seed: int | None = None
    noise_var: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape


def trial_rng(seed: int, *counter: int) -> np.random.Generator:
    """Generator for one trial, derived from a master seed and a counter.

    Streams depend only on (seed, counter), so trials can run in any order
    or process and still see the same random numbers.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(c) for c in counter)))


def _check_targets(scene: Scene, ofdm: OfdmConfig):
    for k, (tau, nu) in enumerate(zip(scene.delays(), scene.dopplers())):
        if not 0 <= tau < ofdm.max_delay:
            raise DomainError(f"target {k}: delay {tau:.4e} s outside [0, 1/df)")
        if abs(nu) >= ofdm.ici_doppler_limit:
            raise DomainError(f"target {k}: Doppler {nu:.4e} Hz violates |nu| < df/10")


def noise_free_tensor(scene: Scene, ofdm: OfdmConfig, symbols=None, model=SteeringKind.FAR) -> np.ndarray:
    _check_targets(scene, ofdm)
    model = SteeringKind(model)
    geom = scene.geometry
    N, P = ofdm.num_subcarriers, ofdm.num_symbols
    if scene.num_targets == 0:
        y = np.zeros((geom.num_elements, N, P), dtype=complex)
    else:
        if model is SteeringKind.FAR:
            a = steering(model, geom, scene.carrier, scene.angles())
        else:
            a = steering(model, geom.centered(), scene.carrier, scene.angles(), scene.ranges())
        n = np.arange(N)[:, None]
        p = np.arange(P)[:, None]
        a_tau = np.exp(-2j * np.pi * ofdm.subcarrier_spacing * n * scene.delays())
        a_nu = np.exp(2j * np.pi * ofdm.total_symbol_time * p * scene.dopplers())
        y = np.einsum("mk,nk,pk->mnp", a * scene.gains(), a_tau, a_nu)
    if symbols is not None:
        y = y * np.asarray(symbols)[None, :, :]
    return y


def synthesize(scene: Scene, ofdm: OfdmConfig, symbols=None, model=SteeringKind.FAR,
               snr_db: float | None = None, seed=None) -> SensingTensor:
    """Sensing tensor of point targets plus optional calibrated noise.

    The noise variance is the mean noise-free sample power divided by the
    linear SNR, so ``snr_db`` is an element-wise SNR on the tensor.
    ``seed`` is an int or a Generator; it only drives the noise.
    """
    y = noise_free_tensor(scene, ofdm, symbols, model)
    var = 0.0
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        power = float(np.mean(np.abs(y) ** 2))
        var = power / 10 ** (snr_db / 10) if power > 0 else 10 ** (-snr_db / 10)
        z = rng.standard_normal(y.shape + (2,)).view(complex)[..., 0]
        y = y + np.sqrt(var / 2) * z
    s = seed if isinstance(seed, (int, np.integer)) else None
    return SensingTensor(y, TensorKind.WITH_SYMBOLS, snr_db, s, var)


def strip_symbols(tensor: SensingTensor, symbols) -> SensingTensor:
    """Divide out the known transmit symbols, subcarrier- and symbol-wise."""
    if tensor.kind is not TensorKind.WITH_SYMBOLS:
        raise ValueError("tensor is already symbol-stripped")
    b = np.asarray(symbols)
    if np.any(np.abs(b) < 1e-12):
        raise ZeroDivisionError("symbol magnitude below 1e-12")
    return replace(tensor, data=tensor.data / b[None, :, :], kind=TensorKind.STRIPPED)


def _stripped(tensor):
    if isinstance(tensor, SensingTensor):
        if tensor.kind is not TensorKind.STRIPPED:
            raise ValueError("delay and Doppler reshapes need a symbol-stripped tensor")
        return tensor.data
    return np.asarray(tensor)


def reshape_angle(tensor) -> np.ndarray:
    """M x NP matrix; column n + pN holds the array snapshot of (n, p)."""
    y = tensor.data if isinstance(tensor, SensingTensor) else np.asarray(tensor)
    M, N, P = y.shape
    return y.reshape(M, N * P, order="F")


def reshape_delay(tensor) -> np.ndarray:
    """N x MP matrix; column m + pM holds the subcarrier snapshot of (m, p)."""
    y = _stripped(tensor)
    M, N, P = y.shape
    return y.transpose(1, 0, 2).reshape(N, M * P, order="F")


def reshape_doppler(tensor) -> np.ndarray:
    """P x MN matrix; column m + nM holds the symbol snapshot of (m, n)."""
    y = _stripped(tensor)
    M, N, P = y.shape
    return y.transpose(2, 0, 1).reshape(P, M * N, order="F")


def save_tensor(tensor: SensingTensor, path):
    """Binary dump: magic, u32 M N P, u8 kind, then little-endian complex64 in C order."""
    M, N, P = tensor.shape
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<IIIB", M, N, P, int(tensor.kind)))
        f.write(np.ascontiguousarray(tensor.data, dtype="<c8").tobytes())


def load_tensor(path) -> SensingTensor:
    raw = Path(path).read_bytes()
    if raw[:8] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a sensing tensor file")
    M, N, P, kind = struct.unpack_from("<IIIB", raw, 8)
    data = np.frombuffer(raw, dtype="<c8", offset=21, count=M * N * P).reshape(M, N, P)
    return SensingTensor(data.astype(complex), TensorKind(kind))
