"""One-dimensional estimators over a snapshot matrix (rows = manifold axis)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .axes import AxisKind, ManifoldAxis
from .spectrum import Spectrum1D, find_peaks


class EstimationError(RuntimeError):
    pass


def sample_covariance(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    return X @ X.conj().T / X.shape[1]


def eig_desc(R):
    """Hermitian EVD with eigenvalues sorted in descending order."""
    w, V = np.linalg.eigh(R)
    return w[::-1], V[:, ::-1]


@dataclass(eq=False)
class Subspaces:
    signal: np.ndarray
    noise: np.ndarray
    eigenvalues: np.ndarray
    rank_deficient: bool


def subspaces(R, K: int) -> Subspaces:
    M = R.shape[0]
    if not 0 <= K < M:
        raise ValueError(f"need 0 <= K < {M}, got {K}")
    w, V = eig_desc(R)
    deficient = bool(K > 0 and w[K - 1] <= 1e-9 * max(w[0], np.finfo(float).tiny))
    return Subspaces(V[:, :K], V[:, K:], w, deficient)


def estimate_num_sources(R, max_sources=None) -> int:
    """Largest ratio between consecutive eigenvalues (optional helper, never required)."""
    w, _ = eig_desc(R)
    w = np.maximum(w, np.finfo(float).tiny)
    n = len(w) - 1 if max_sources is None else min(max_sources, len(w) - 1)
    ratios = w[:n] / w[1:n + 1]
    return int(np.argmax(ratios)) + 1


def _cov(X, cov):
    return sample_covariance(X) if cov is None else np.asarray(cov)


def _rows(X, cov):
    return np.asarray(X if cov is None else cov).shape[0]


def default_nfft(axis: ManifoldAxis) -> int:
    return 1800 if axis.kind is AxisKind.ANGLE else 8 * axis.length


def _transform(V, axis: ManifoldAxis, n_fft: int):
    """Evaluate a(phi)^H v on the n_fft bins of the axis, column-wise."""
    if axis.inverse_transform:
        return n_fft * np.fft.ifft(V, n_fft, axis=0)
    return np.fft.fft(V, n_fft, axis=0)


def _bin_spectrum(values, axis, n_fft, algorithm, exclusion):
    if axis.centered:
        values = np.fft.fftshift(values)
    ok, grid = axis.bin_params(n_fft)
    return Spectrum1D(grid, values[ok], axis, algorithm, {"n_fft": n_fft, "exclusion": exclusion})


def periodogram(X, axis: ManifoldAxis, n_fft: int | None = None, cov=None) -> Spectrum1D:
    """Beamforming spectrum through a zero-padded DFT of every snapshot.

    With many more snapshots than rows the same quantity is formed as
    diag(W R W^H)/M from the sample covariance, which is exact and cheaper.
    """
    M = _rows(X, cov)
    n_fft = default_nfft(axis) if n_fft is None else int(n_fft)
    if n_fft < M:
        raise ValueError(f"n_fft={n_fft} smaller than the {M} rows")
    if cov is None:
        X = np.asarray(X)
        X = X[:, None] if X.ndim == 1 else X
        if X.shape[1] <= 4 * M:
            power = np.mean(np.abs(_transform(X, axis, n_fft)) ** 2, axis=1) / M
            return _bin_spectrum(power, axis, n_fft, "periodogram", 1.0)
        cov = sample_covariance(X)
    W = _transform(np.eye(M), axis, n_fft)
    power = np.einsum("km,km->k", W @ cov, W.conj()).real / M
    return _bin_spectrum(np.maximum(power, 0.0), axis, n_fft, "periodogram", 1.0)


def direct_spectrum(X, axis: ManifoldAxis, grid, cov=None) -> Spectrum1D:
    """Matched-filter spectrum |a^H X|^2 / M averaged over snapshots, on any grid."""
    grid = np.asarray(grid, dtype=float)
    M = _rows(X, cov)
    if grid.size == 0:
        return Spectrum1D(grid, np.zeros(0), axis, "direct", {"exclusion": 1.0})
    A = axis.with_length(M).steering(grid)
    if cov is None:
        X = np.asarray(X)
        X = X[:, None] if X.ndim == 1 else X
        power = np.mean(np.abs(A.conj().T @ X) ** 2, axis=1) / M
    else:
        power = np.einsum("mg,mg->g", A.conj(), cov @ A).real / M
    return Spectrum1D(grid, power, axis, "direct", {"exclusion": 1.0})


def _null_spectrum(En, axis, grid, algorithm, meta):
    A = axis.with_length(En.shape[0]).steering(grid)
    den = np.sum(np.abs(En.conj().T @ A) ** 2, axis=0)
    power = 1.0 / np.maximum(den, np.finfo(float).tiny)
    meta = dict(meta, exclusion=0.0)
    return Spectrum1D(grid, power, axis, algorithm, meta)


def music(X, axis: ManifoldAxis, K: int, grid=None, cov=None) -> Spectrum1D:
    R = _cov(X, cov)
    sub = subspaces(R, K)
    grid = axis.default_grid() if grid is None else np.asarray(grid, dtype=float)
    return _null_spectrum(sub.noise, axis, grid, "music", {"rank_deficient": sub.rank_deficient})


def fft_music(X, axis: ManifoldAxis, K: int, n_fft: int | None = None, cov=None) -> Spectrum1D:
    """MUSIC pseudo-spectrum with the null-space projection done by FFT."""
    R = _cov(X, cov)
    M = R.shape[0]
    n_fft = default_nfft(axis) if n_fft is None else int(n_fft)
    if n_fft < M:
        raise ValueError(f"n_fft={n_fft} smaller than the {M} rows")
    sub = subspaces(R, K)
    den = np.sum(np.abs(_transform(sub.noise, axis, n_fft)) ** 2, axis=1)
    power = 1.0 / np.maximum(den, np.finfo(float).tiny)
    spec = _bin_spectrum(power, axis, n_fft, "fft-music", 0.0)
    spec.meta["rank_deficient"] = sub.rank_deficient
    return spec


def root_music(X, axis: ManifoldAxis, K: int, cov=None, noise=None) -> np.ndarray:
    """Roots of a(z)^H En En^H a(z); the K inside the unit circle nearest to it."""
    if K == 0:
        return np.zeros(0)
    if noise is None:
        noise = subspaces(_cov(X, cov), K).noise
    C = noise @ noise.conj().T
    M = C.shape[0]
    # coefficient of z^l is the sum of the l-th diagonal of C
    coeffs = np.array([np.trace(C, offset=l) for l in range(M - 1, -M, -1)])
    roots = np.roots(coeffs)
    inside = roots[np.abs(roots) < 1.0]
    if len(inside) < K:
        raise EstimationError(f"only {len(inside)} roots inside the unit circle, need {K}")
    best = inside[np.argsort(1.0 - np.abs(inside), kind="stable")[:K]]
    return np.sort(axis.from_phase(np.angle(best)))


def _rotation_params(E, axis, K, variant):
    E1, E2 = E[:-1], E[1:]
    s = np.linalg.svd(E1, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-12 * s[0]:
        raise EstimationError("shifted signal subspace is rank deficient")
    if variant == "ls":
        psi = np.linalg.lstsq(E1, E2, rcond=None)[0]
    elif variant == "tls":
        C = np.hstack([E1, E2])
        _, V = eig_desc(C.conj().T @ C)
        V12, V22 = V[:K, K:], V[K:, K:]
        psi = -V12 @ np.linalg.inv(V22)
    else:
        raise ValueError(f"unknown ESPRIT variant {variant!r}")
    lam = np.linalg.eigvals(psi)
    return np.sort(axis.from_phase(np.angle(lam)))


def esprit(X, axis: ManifoldAxis, K: int, variant: str = "ls", cov=None) -> np.ndarray:
    """Rotational-invariance estimates from the signal subspace of two shifted subarrays."""
    R = _cov(X, cov)
    if not 1 <= K <= R.shape[0] - 1:
        raise ValueError("ESPRIT needs 1 <= K <= rows - 1")
    sub = subspaces(R, K)
    return _rotation_params(sub.signal, axis, K, variant.lower())


def _propagator(R, K):
    R1, R2 = R[:, :K], R[:, K:]
    G = R1.conj().T @ R1
    if np.linalg.cond(G) > 1e12:
        raise EstimationError("propagator system is ill-conditioned")
    return np.linalg.solve(G, R1.conj().T @ R2)


def pm_subspace(X, K: int, cov=None) -> np.ndarray:
    """Orthonormal noise basis from the propagator, without an eigendecomposition."""
    R = _cov(X, cov)
    M = R.shape[0]
    if not 1 <= K < M:
        raise ValueError(f"need 1 <= K < {M}")
    P = _propagator(R, K)
    Q = np.vstack([P, -np.eye(M - K)])
    return np.linalg.qr(Q)[0]


def pm_music(X, axis: ManifoldAxis, K: int, grid=None, cov=None) -> Spectrum1D:
    En = pm_subspace(X, K, cov)
    grid = axis.default_grid() if grid is None else np.asarray(grid, dtype=float)
    return _null_spectrum(En, axis, grid, "pm-music", {})


def pm_esprit(X, axis: ManifoldAxis, K: int, cov=None) -> np.ndarray:
    R = _cov(X, cov)
    P = _propagator(R, K)
    E = np.vstack([np.eye(K), P.conj().T])
    return _rotation_params(E, axis, K, "ls")


@dataclass(eq=False)
class OmpResult:
    params: np.ndarray
    gains: np.ndarray
    residual: float
    support: np.ndarray


def omp(X, axis: ManifoldAxis, K: int, grid=None) -> OmpResult:
    """Orthogonal matching pursuit over a steering dictionary.

    Atom correlations ||a_i^H R_k||^2 are evaluated through the projected
    covariance, which equals the residual Gram matrix exactly.
    """
    X = np.asarray(X)
    X = X[:, None] if X.ndim == 1 else X
    M, Q = X.shape
    grid = axis.default_grid() if grid is None else np.asarray(grid, dtype=float)
    if len(grid) < K:
        raise ValueError("dictionary smaller than K")
    A = axis.with_length(M).steering(grid)
    C = X @ X.conj().T
    support = []
    proj = np.zeros((M, M), dtype=complex)
    for _ in range(K):
        Pc = np.eye(M) - proj
        G = Pc @ C @ Pc
        score = np.einsum("mg,mg->g", A.conj(), G @ A).real
        i = int(np.argmax(score))
        if i in support:
            raise EstimationError("atom selected twice; dictionary is degenerate")
        support.append(i)
        As = A[:, support]
        proj = As @ np.linalg.pinv(As)
    As = A[:, support]
    S = np.linalg.lstsq(As, X, rcond=None)[0]
    resid = float(np.linalg.norm(X - As @ S))
    gains = np.sqrt(np.mean(np.abs(S) ** 2, axis=1))
    return OmpResult(grid[support], gains, resid, np.array(support))


SPECTRUM_ALGORITHMS = ("periodogram", "music", "fft-music", "pm-music")
ALGORITHMS = ("periodogram", "music", "fft-music", "root-music", "pm-music",
              "esprit-ls", "esprit-tls", "pm-esprit", "omp")


def spectrum_1d(X, axis, alg, K=None, grid=None, n_fft=None, cov=None) -> Spectrum1D:
    if alg == "periodogram":
        return periodogram(X, axis, n_fft, cov=cov)
    if alg == "music":
        return music(X, axis, K, grid, cov=cov)
    if alg == "fft-music":
        return fft_music(X, axis, K, n_fft, cov=cov)
    if alg == "pm-music":
        return pm_music(X, axis, K, grid, cov=cov)
    raise ValueError(f"{alg!r} does not produce a spectrum")


def estimate_1d(X, axis: ManifoldAxis, alg: str, K: int, grid=None, n_fft=None, cov=None,
                floor_db=None, exclusion=None, interpolate=True):
    """Run one named estimator and return (parameters, strengths).

    Strengths are peak heights for spectral methods and ones otherwise.
    """
    if alg in SPECTRUM_ALGORITHMS:
        spec = spectrum_1d(X, axis, alg, K, grid, n_fft, cov)
        pk = find_peaks(spec, K, exclusion=exclusion, interpolate=interpolate, floor_db=floor_db)
        return pk.params, pk.powers
    if alg == "root-music":
        x = root_music(X, axis, K, cov=cov)
    elif alg in ("esprit-ls", "esprit-tls"):
        x = esprit(X, axis, K, alg.split("-")[1], cov=cov)
    elif alg == "pm-esprit":
        x = pm_esprit(X, axis, K, cov=cov)
    elif alg == "omp":
        if X is None:
            raise ValueError("OMP needs the snapshot matrix")
        r = omp(X, axis, K, grid)
        return r.params, r.gains
    else:
        raise ValueError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")
    return x, np.ones(len(x))
