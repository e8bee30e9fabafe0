"""Joint delay-Doppler and angle-delay-Doppler estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .axes import ManifoldAxis, angle_axis, delay_axis, doppler_axis
from .oned import EstimationError
from .spectrum import PeakSetND, Spectrum2D, Spectrum3D, SpectrumND, find_peaks_nd

SUBSPACE_CAP = 4096


class SubspaceTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class SmoothingWindow:
    sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if any(s < 1 for s in self.sizes):
            raise ValueError("window sizes must be positive")

    @property
    def dimension(self) -> int:
        return int(np.prod(self.sizes))

    def snapshots(self, shape) -> int:
        return int(np.prod([n - s + 1 for n, s in zip(shape, self.sizes)]))

    def check(self, shape):
        if len(shape) != len(self.sizes):
            raise ValueError(f"window has {len(self.sizes)} axes, data has {len(shape)}")
        for n, s in zip(shape, self.sizes):
            if s > n:
                raise ValueError(f"window {self.sizes} exceeds data shape {tuple(shape)}")


def mssp(X, window, forward_backward: bool = False) -> np.ndarray:
    """Sliding-window snapshots of a matrix or tensor.

    Each sub-block is vectorized with its first index fastest, and the
    block offsets are enumerated the same way, so for an N x P matrix the
    block at (n, p) lands in column n + p (N - N_sub + 1).
    """
    X = np.asarray(X)
    window = window if isinstance(window, SmoothingWindow) else SmoothingWindow(window)
    window.check(X.shape)
    d = X.ndim
    v = sliding_window_view(X, window.sizes)
    v = v.transpose(tuple(range(d, 2 * d)) + tuple(range(d)))
    S = v.reshape(window.dimension, -1, order="F")
    if forward_backward:
        S = np.hstack([S, S[::-1].conj()])
    return S


def top_eigvecs(R, K: int):
    """K dominant eigenpairs, eigenvalues descending."""
    L = R.shape[0]
    if not 0 < K < L:
        raise ValueError(f"need 0 < K < {L}")
    w, V = scipy.linalg.eigh(R, subset_by_index=[L - K, L - 1])
    return w[::-1], V[:, ::-1]


class KroneckerNull:
    """Evaluates ||E_n^H a||^2 for separable steering a = a_last x ... x a_first.

    Only the K signal eigenvectors are stored: ||E_n^H a||^2 = ||a||^2 - ||E_s^H a||^2,
    and each E_s^H a is contracted one axis at a time.
    """

    def __init__(self, signal: np.ndarray, axes):
        self.axes = tuple(axes)
        self.shape = tuple(ax.length for ax in self.axes)
        if signal.shape[0] != int(np.prod(self.shape)):
            raise ValueError("signal basis length does not match the axes")
        K = signal.shape[1]
        self.tensor = signal.conj().T.reshape((K,) + self.shape[::-1]).transpose(
            (0,) + tuple(range(len(self.shape), 0, -1)))

    def denominator(self, grids) -> np.ndarray:
        T = self.tensor
        for ax, g in zip(self.axes, grids):
            A = ax.steering(np.asarray(g, dtype=float))
            # contract the leading data axis, append the grid axis at the end
            T = np.tensordot(T, A, axes=([1], [0]))
        proj = np.sum(np.abs(T) ** 2, axis=0)
        return np.maximum(np.prod(self.shape) - proj, 0.0)

    def power(self, grids) -> np.ndarray:
        return 1.0 / np.maximum(self.denominator(grids), 1e-300)


def _delay_grid(ofdm, step_fraction=8):
    n = step_fraction * ofdm.num_subcarriers
    return np.arange(n) / (n * ofdm.subcarrier_spacing)


def _doppler_grid(ofdm, step_fraction=8):
    n = step_fraction * ofdm.num_symbols
    return (np.arange(n) - n // 2) / (n * ofdm.total_symbol_time)


def periodogram2d(X, ofdm, n_fft_delay: int | None = None, n_fft_doppler: int | None = None) -> Spectrum2D:
    """Delay-Doppler periodogram of an N x P matrix (axes: delay, Doppler)."""
    X = np.asarray(X)
    N, P = X.shape
    nt = 8 * N if n_fft_delay is None else int(n_fft_delay)
    nv = 8 * P if n_fft_doppler is None else int(n_fft_doppler)
    if nt < N or nv < P:
        raise ValueError("FFT sizes must cover the data dimensions")
    F = nt * np.fft.ifft(X, nt, axis=0)
    F = np.fft.fft(F, nv, axis=1)
    power = np.fft.fftshift(np.abs(F) ** 2 / (N * P), axes=1)
    tau = np.arange(nt) / (nt * ofdm.subcarrier_spacing)
    nu = (np.arange(nv) - nv // 2) / (nv * ofdm.total_symbol_time)
    return Spectrum2D((tau, nu), power, ("delay", "doppler"), "periodogram2d", {"n_fft": (nt, nv)})


def direct_spectrum2d(X, ofdm, delays, dopplers) -> Spectrum2D:
    """Matched filter |a_tau^H X conj(a_nu)|^2 / (NP) on arbitrary grids."""
    X = np.asarray(X)
    N, P = X.shape
    At = delay_axis(ofdm, N).steering(delays)
    Av = doppler_axis(ofdm, P).steering(dopplers)
    power = np.abs(At.conj().T @ X @ Av.conj()) ** 2 / (N * P)
    return Spectrum2D((delays, dopplers), power, ("delay", "doppler"), "direct2d")


@dataclass(eq=False)
class SubspaceModel:
    """Dominant subspace of smoothed data plus the axes needed to scan it."""

    evaluator: KroneckerNull
    eigenvalues: np.ndarray
    rank_deficient: bool


def _subspace_model(S, K, axes):
    R = S @ S.conj().T / S.shape[1]
    w, V = top_eigvecs(R, K)
    deficient = bool(w[-1] <= 1e-9 * max(w[0], 1e-300))
    return SubspaceModel(KroneckerNull(V, axes), w, deficient)


def music2d(X, ofdm, K: int, window=None, delay_grid=None, doppler_grid=None,
            forward_backward: bool = False) -> Spectrum2D:
    """2D-MUSIC over (delay, Doppler) after sliding-window smoothing."""
    X = np.asarray(X)
    N, P = X.shape
    window = SmoothingWindow(window or (N // 2, P // 2))
    if window.dimension <= K:
        raise ValueError("smoothing window dimension must exceed K")
    if window.dimension > SUBSPACE_CAP:
        raise SubspaceTooLarge(f"subspace dimension {window.dimension} exceeds cap {SUBSPACE_CAP}")
    model = _subspace_model(mssp(X, window, forward_backward), K,
                            (delay_axis(ofdm, window.sizes[0]), doppler_axis(ofdm, window.sizes[1])))
    tg = _delay_grid(ofdm) if delay_grid is None else np.asarray(delay_grid, dtype=float)
    vg = _doppler_grid(ofdm) if doppler_grid is None else np.asarray(doppler_grid, dtype=float)
    power = model.evaluator.power((tg, vg))
    return Spectrum2D((tg, vg), power, ("delay", "doppler"), "music2d",
                      {"window": window.sizes, "rank_deficient": model.rank_deficient, "model": model})


def _angle_bins(geom, n):
    ax = angle_axis(geom)
    ok, grid = ax.bin_params(n)
    return ok, grid


def periodogram3d(tensor, geom, ofdm, n_fft=None) -> Spectrum3D:
    """Angle-delay-Doppler periodogram of a symbol-stripped tensor."""
    Y = tensor.data if hasattr(tensor, "data") else np.asarray(tensor)
    M, N, P = Y.shape
    na, nt, nv = (4 * M, 2 * N, 2 * P) if n_fft is None else tuple(int(n) for n in n_fft)
    if na < M or nt < N or nv < P:
        raise ValueError("FFT sizes must cover the data dimensions")
    F = na * np.fft.ifft(Y, na, axis=0)
    F = nt * np.fft.ifft(F, nt, axis=1)
    F = np.fft.fft(F, nv, axis=2)
    power = np.fft.fftshift(np.abs(F) ** 2, axes=(0, 2)) / (M * N * P)
    ok, ang = _angle_bins(geom, na)
    tau = np.arange(nt) / (nt * ofdm.subcarrier_spacing)
    nu = (np.arange(nv) - nv // 2) / (nv * ofdm.total_symbol_time)
    return Spectrum3D((ang, tau, nu), power[ok], ("angle", "delay", "doppler"), "periodogram3d",
                      {"n_fft": (na, nt, nv)})


def _coarse_grids(axes, oversample):
    grids = []
    for ax in axes:
        n = int(np.ceil(oversample * ax.length))
        if ax.kind.value == "angle":
            m = max(int(np.ceil(oversample * ax.length * ax.unit * 2)), 8)
            u = -1 + 2 * (np.arange(m) + 0.5) / m
            grids.append(np.rad2deg(np.arcsin(u)))
        else:
            lo, hi = ax.domain
            grids.append(lo + (hi - lo) * np.arange(n) / n)
    return grids


def refine_peaks(evaluator: KroneckerNull, grids, peaks: PeakSetND, points: int = 8) -> PeakSetND:
    """Re-locate each coarse peak on a local grid spanning +-1 coarse step per axis."""
    out, heights = [], []
    for idx in np.rint(peaks.indices).astype(int):
        local = []
        for g, i in zip(grids, idx):
            lo = g[max(i - 1, 0)]
            hi = g[min(i + 1, len(g) - 1)]
            local.append(np.linspace(lo, hi, 2 * points + 1))
        names = tuple(f"x{i}" for i in range(len(local)))
        fine = find_peaks_nd(SpectrumND(tuple(local), evaluator.power(local), names), 1)
        out.append(fine.points[0])
        heights.append(fine.powers[0])
    ndim = len(grids)
    return PeakSetND(np.array(out).reshape(-1, ndim), np.array(heights), peaks.indices, peaks.shortfall)


def music3d(tensor, geom, ofdm, K: int, window=None, grids=None, oversample: float = 4.0,
            cap: int = SUBSPACE_CAP, forward_backward: bool = False) -> Spectrum3D:
    """3D-MUSIC over (angle, delay, Doppler), scanned on a coarse grid.

    The default window is M/2 x N/4 x P/2, shrunk with ``auto_window`` when
    that exceeds ``cap``; an explicit window over the cap is refused.
    Use ``subspace_peaks`` for coarse-to-fine peak locations.
    """
    Y = tensor.data if hasattr(tensor, "data") else np.asarray(tensor)
    M, N, P = Y.shape
    if window is None:
        window = (max(M // 2, 1), max(N // 4, 1), max(P // 2, 1))
        if int(np.prod(window)) > cap:
            window = auto_window(Y.shape, cap // 2)
    window = SmoothingWindow(window)
    window.check(Y.shape)
    if window.dimension > cap:
        raise SubspaceTooLarge(f"subspace dimension {window.dimension} exceeds cap {cap}")
    if window.dimension <= K:
        raise ValueError("smoothing window dimension must exceed K")
    axes = (angle_axis(geom).with_length(window.sizes[0]), delay_axis(ofdm, window.sizes[1]),
            doppler_axis(ofdm, window.sizes[2]))
    model = _subspace_model(mssp(Y, window, forward_backward), K, axes)
    grids = _coarse_grids(axes, oversample) if grids is None else tuple(np.asarray(g, float) for g in grids)
    power = model.evaluator.power(grids)
    return Spectrum3D(tuple(grids), power, ("angle", "delay", "doppler"), "music3d",
                      {"window": window.sizes, "rank_deficient": model.rank_deficient, "model": model})


def subspace_peaks(spec, K: int, refine_points: int = 8, floor_db=None) -> PeakSetND:
    """Coarse peaks of a 2D/3D MUSIC spectrum refined on local fine grids."""
    coarse = find_peaks_nd(spec, K, floor_db=floor_db)
    if len(coarse) == 0:
        raise EstimationError("no peaks in spectrum")
    return refine_peaks(spec.meta["model"].evaluator, spec.grids, coarse, refine_points)


def periodogram_nd(D, axes, n_fft=None) -> SpectrumND:
    """Zero-padded FFT periodogram over any combination of axes.

    ``D`` has one dimension per axis, in the same order. Angle bins outside
    the visible region are dropped.
    """
    D = np.asarray(D)
    axes = tuple(axes)
    if D.ndim != len(axes):
        raise ValueError("one axis per data dimension")
    if n_fft is None:
        n_fft = tuple((4 if ax.kind.value == "angle" else 8) * n for ax, n in zip(axes, D.shape))
    F = D
    for i, (ax, n) in enumerate(zip(axes, n_fft)):
        if n < D.shape[i]:
            raise ValueError("FFT sizes must cover the data dimensions")
        F = n * np.fft.ifft(F, n, axis=i) if ax.inverse_transform else np.fft.fft(F, n, axis=i)
        if ax.centered:
            F = np.fft.fftshift(F, axes=i)
    power = np.abs(F) ** 2 / D.size
    masks, grids = zip(*(ax.with_length(L).bin_params(n) for ax, L, n in zip(axes, D.shape, n_fft)))
    power = power[np.ix_(*masks)]
    return SpectrumND(grids, power, tuple(ax.kind.value for ax in axes), "periodogram",
                      {"n_fft": tuple(n_fft)})


def auto_window(shape, limit: int = SUBSPACE_CAP // 2) -> tuple:
    """Half of each dimension, then the largest side halved until the product fits ``limit``."""
    w = [max(n // 2, 1) for n in shape]
    while int(np.prod(w)) > limit and max(w) > 1:
        i = int(np.argmax(w))
        w[i] = max(w[i] // 2, 1)
    return tuple(w)


def music_nd(D, axes, K: int, window=None, grids=None, oversample: float = 4.0, cap: int = SUBSPACE_CAP,
             forward_backward: bool = False) -> SpectrumND:
    """Smoothed MUSIC over any combination of axes (coarse grid; see ``subspace_peaks``)."""
    D = np.asarray(D)
    axes = tuple(axes)
    window = SmoothingWindow(window or auto_window(D.shape, cap // 2))
    window.check(D.shape)
    if window.dimension > cap:
        raise SubspaceTooLarge(f"subspace dimension {window.dimension} exceeds cap {cap}")
    if window.dimension <= K:
        raise ValueError("smoothing window dimension must exceed K")
    axes = tuple(ax.with_length(s) for ax, s in zip(axes, window.sizes))
    model = _subspace_model(mssp(D, window, forward_backward), K, axes)
    grids = _coarse_grids(axes, oversample) if grids is None else tuple(np.asarray(g, float) for g in grids)
    return SpectrumND(tuple(grids), model.evaluator.power(grids), tuple(ax.kind.value for ax in axes), "music",
                      {"window": window.sizes, "rank_deficient": model.rank_deficient, "model": model})
