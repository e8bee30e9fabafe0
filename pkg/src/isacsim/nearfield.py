"""Joint angle-range estimation for targets in the radiating near field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimators.axes import angle_axis
from .estimators.oned import EstimationError, eig_desc, periodogram, sample_covariance
from .estimators.spectrum import Spectrum1D, Spectrum2D, find_peaks, find_peaks_nd
from .scene import (ArrayGeometry, Carrier, DomainError, Reference, fresnel_phases, fresnel_to_polar,
                    rayleigh_distance, steer_near_exact, steer_near_fresnel)

_CHUNK = 1 << 20  # steering entries generated per block


@dataclass(frozen=True)
class NearFieldGrid:
    angles: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        r = np.asarray(self.ranges, dtype=float)
        if np.any(np.diff(a) <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("grids must be strictly increasing")
        if r.size and r[0] <= 0:
            raise DomainError("ranges must be positive")
        object.__setattr__(self, "angles", a)
        object.__setattr__(self, "ranges", r)

    @classmethod
    def default(cls, geom: ArrayGeometry, carrier: Carrier, angle_step=0.1, num_ranges=60, linear=False):
        """Angles over [-90, 90]; ranges log-spaced (or linear) up to the Rayleigh distance.

        The lower range bound is the larger of one aperture and 1% of the
        Rayleigh distance.
        """
        ray = rayleigh_distance(geom, carrier)
        lo = max(geom.aperture(carrier), 0.01 * ray)
        n = int(round(180 / angle_step)) + 1
        ranges = np.linspace(lo, ray, num_ranges) if linear else np.geomspace(lo, ray, num_ranges)
        return cls(np.linspace(-90, 90, n), ranges)

    def validate(self, geom: ArrayGeometry, carrier: Carrier):
        ray = rayleigh_distance(geom, carrier)
        if self.ranges.size and self.ranges[-1] > ray * (1 + 1e-9):
            raise DomainError(f"range grid extends past the Rayleigh distance {ray:.3f} m")

    @property
    def shape(self):
        return (len(self.ranges), len(self.angles))


@dataclass(eq=False)
class CovarianceBundle:
    R: np.ndarray
    eigenvalues: np.ndarray
    signal: np.ndarray
    noise: np.ndarray

    @property
    def K(self):
        return self.signal.shape[1]


def covariance_bundle(X, K: int, cov=None) -> CovarianceBundle:
    R = sample_covariance(X) if cov is None else np.asarray(cov)
    M = R.shape[0]
    if not 0 < K < M:
        raise ValueError(f"need 0 < K < {M}")
    w, V = eig_desc(R)
    return CovarianceBundle(R, w, V[:, :K], V[:, K:])


def _centered(geom):
    return geom if geom.reference is Reference.CENTER else geom.centered()


def _scan(geom, carrier, angles, ranges, fn):
    """Apply fn(A) -> (G,) to exact steering blocks; returns (len(ranges), len(angles))."""
    geom = _centered(geom)
    angles = np.asarray(angles, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    out = np.empty((len(ranges), len(angles)))
    per = max(1, _CHUNK // max(geom.num_elements * len(angles), 1))
    for i in range(0, len(ranges), per):
        rr = ranges[i:i + per]
        A = steer_near_exact(geom, carrier, angles[None, :], rr[:, None])
        A = A.reshape(geom.num_elements, -1)
        out[i:i + per] = fn(A).reshape(len(rr), len(angles))
    return out


def _bf_fn(R):
    return lambda A: np.einsum("mg,mg->g", A.conj(), R @ A).real


def _music_fn(Es):
    M = Es.shape[0]
    return lambda A: 1.0 / np.maximum(M - np.sum(np.abs(Es.conj().T @ A) ** 2, axis=0), 1e-300)


def bf2d(R, geom, carrier, grid: NearFieldGrid) -> Spectrum2D:
    """Beam-focusing spectrum a^H R a over (range, angle)."""
    p = _scan(geom, carrier, grid.angles, grid.ranges, _bf_fn(np.asarray(R)))
    return Spectrum2D((grid.ranges, grid.angles), p, ("range", "angle"), "bf2d")


def music2d_nf(bundle: CovarianceBundle, geom, carrier, grid: NearFieldGrid) -> Spectrum2D:
    """2D-MUSIC pseudo-spectrum over (range, angle) with exact spherical steering."""
    p = _scan(geom, carrier, grid.angles, grid.ranges, _music_fn(bundle.signal))
    return Spectrum2D((grid.ranges, grid.angles), p, ("range", "angle"), "music2d")


def null_residual(bundle: CovarianceBundle, geom, carrier, angle, rng) -> float:
    """||E_n^H a|| / sqrt(M) for one exact steering vector."""
    a = steer_near_exact(_centered(geom), carrier, angle, rng)
    return float(np.linalg.norm(bundle.noise.conj().T @ a) / np.sqrt(len(a)))


def _local(grid, i, points):
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    return np.linspace(lo, hi, 2 * points + 1)


@dataclass(eq=False)
class NearFieldEstimate:
    angles: np.ndarray
    ranges: np.ndarray
    algorithm: str
    flags: dict = field(default_factory=dict)
    evaluations: int = 0

    def __len__(self):
        return len(self.angles)

    def as_array(self):
        return np.column_stack([self.angles, self.ranges])


def _peaks_2d(geom, carrier, fn, grid, K, refine_points=10):
    """Top-K local maxima of fn over the grid, each refined on a local grid."""
    p = _scan(geom, carrier, grid.angles, grid.ranges, fn)
    spec = Spectrum2D((grid.ranges, grid.angles), p, ("range", "angle"))
    coarse = find_peaks_nd(spec, K, interpolate=False)
    evals = p.size
    rs, ts = [], []
    for ir, ia in np.rint(coarse.indices).astype(int):
        lr = _local(grid.ranges, ir, refine_points)
        la = _local(grid.angles, ia, refine_points)
        q = _scan(geom, carrier, la, lr, fn)
        evals += q.size
        fine = find_peaks_nd(Spectrum2D((lr, la), q, ("range", "angle")), 1)
        rs.append(fine.points[0, 0])
        ts.append(fine.points[0, 1])
    return np.array(ts), np.array(rs), evals, spec


def bf2d_estimate(bundle, geom, carrier, K, grid: NearFieldGrid) -> NearFieldEstimate:
    t, r, n, _ = _peaks_2d(geom, carrier, _bf_fn(bundle.R), grid, K)
    return NearFieldEstimate(t, r, "bf2d", evaluations=n)


def music2d_estimate(bundle, geom, carrier, K, grid: NearFieldGrid) -> NearFieldEstimate:
    t, r, n, _ = _peaks_2d(geom, carrier, _music_fn(bundle.signal), grid, K)
    return NearFieldEstimate(t, r, "music2d", evaluations=n)


def range_search(bundle, geom, carrier, angle, ranges, refine_points=20) -> float:
    """Range maximizing the exact 2D-MUSIC spectrum at a fixed angle."""
    fn = _music_fn(bundle.signal)
    ranges = np.asarray(ranges, dtype=float)
    p = _scan(geom, carrier, [angle], ranges, fn)[:, 0]
    i = int(np.argmax(p))
    lr = _local(ranges, i, refine_points)
    q = _scan(geom, carrier, [angle], lr, fn)[:, 0]
    pk = find_peaks(Spectrum1D(lr, q), 1)
    return float(pk.params[0])


def _scan_1d(fn, grid, K, refine_points=10):
    """K peaks of a 1D criterion on an angle grid, each refined locally."""
    grid = np.asarray(grid, dtype=float)
    v = fn(grid)
    pk = find_peaks(Spectrum1D(grid, v), K, interpolate=False)
    out = []
    for i in np.rint(pk.indices).astype(int):
        lg = _local(grid, i, refine_points)
        fine = find_peaks(Spectrum1D(lg, fn(lg)), 1)
        out.append(fine.params[0])
    return np.array(out), pk.shortfall


# --- second-order statistics (SoC) -------------------------------------------------

def soc_sequences(X, geom: ArrayGeometry):
    """Symmetric-element correlation sequences (r1 over 0..J, r2 over 0..J-1)."""
    J = geom.half_length
    X = np.asarray(X)
    Q = X.shape[1]
    m = np.arange(J + 1)
    r1 = np.einsum("mq,mq->m", X[J - m], X[J + m].conj()) / Q
    m2 = np.arange(J)
    r2 = np.einsum("mq,mq->m", X[J + m2 + 1], X[J + m2].conj()) / Q
    return r1, r2


def _hankel_rows(seq, L):
    n = len(seq) - L + 1
    return np.stack([seq[i:i + L] for i in range(n)], axis=1)


def _vandermonde_music(seq, K, scale, grid, L=None):
    """Frequencies of seq[m] = sum_k c_k exp(j scale x_k m) by MUSIC on its Hankel matrix.

    ``grid`` holds candidate x values; returns the K best, refined.
    """
    L = L or (len(seq) + 1) // 2
    H = _hankel_rows(seq, L)
    w, V = eig_desc(H @ H.conj().T)
    Es = V[:, :K]

    def fn(x):
        A = np.exp(1j * scale * np.outer(np.arange(L), x))
        return 1.0 / np.maximum(L - np.sum(np.abs(Es.conj().T @ A) ** 2, axis=0), 1e-300)

    return _scan_1d(fn, grid, K)[0]


def _fresnel_power(R, geom, omega, psi):
    a = steer_near_fresnel(_centered(geom), omega, psi)
    return float(np.real(a.conj() @ R @ a))


def soc_estimate(X, geom: ArrayGeometry, carrier: Carrier, K: int, cov=None) -> NearFieldEstimate:
    """Decoupled estimation: omega from r1, psi from r2, then pairing."""
    geom = _centered(geom)
    geom.check_symmetric()
    J = geom.half_length
    if not 1 <= K <= J:
        raise ValueError("SoC needs 1 <= K <= J")
    r1, r2 = soc_sequences(X, geom)
    omega_grid = np.linspace(-np.pi / 2, np.pi / 2, 3601)[1:-1]
    omegas = _vandermonde_music(r1, K, -2.0, omega_grid)
    psi_max = np.pi / (2 * J)
    psis = _vandermonde_music(r2, K, 2.0, np.linspace(-psi_max, psi_max, 2001))
    R = sample_covariance(X) if cov is None else cov
    flags = {}
    if len(omegas) < K or len(psis) < K:
        # unresolved sequence: reuse the detected values so every target still gets a pair
        flags["shortfall"] = True
        omegas = np.resize(omegas, K)
        psis = np.resize(psis, K)
    if K == 1:
        w, p = omegas, psis
    else:
        power = np.array([[_fresnel_power(R, geom, o, s) for s in psis] for o in omegas])
        rows, cols = linear_sum_assignment(-power)
        w, p = omegas[rows], psis[cols]
        db = 10 * np.log10(np.maximum(power, 1e-300))
        for i in range(K):
            srt = np.sort(db[i])[::-1]
            if srt[0] - srt[1] < 1.0:
                flags["pairing_ambiguous"] = True
    theta, rng = fresnel_to_polar(geom, carrier, w, np.where(p > 0, p, np.nan))
    rng = np.where(np.isfinite(rng), rng, np.inf)
    return NearFieldEstimate(theta, rng, "soc", flags)


# --- reduced-dimension / reduced-rank --------------------------------------------

def gamma_matrix(omega: float, geom: ArrayGeometry) -> np.ndarray:
    """(2J+1) x (J+1) matrix with a(omega, psi) = Gamma(omega) xi(psi)."""
    J = geom.half_length
    eps = np.arange(-J, J + 1)
    G = np.zeros((2 * J + 1, J + 1), dtype=complex)
    G[np.arange(2 * J + 1), J - np.abs(eps)] = np.exp(1j * eps * omega)
    return G


def xi_vector(psi: float, J: int) -> np.ndarray:
    """[e^{j J^2 psi}, ..., e^{j psi}, 1]."""
    return np.exp(1j * psi * (J - np.arange(J + 1)) ** 2)


def rdrr_decompose(omega: float, bundle: CovarianceBundle, geom: ArrayGeometry) -> np.ndarray:
    """Q(omega) = Gamma^H En En^H Gamma."""
    G = gamma_matrix(omega, _centered(geom))
    T = bundle.noise.conj().T @ G
    return T.conj().T @ T


def _q_batch(omegas, Es, J):
    """Q(omega) for many omegas via I - Es Es^H, shape (G, J+1, J+1)."""
    eps = np.arange(-J, J + 1)
    cols = J - np.abs(eps)
    ph = np.exp(1j * np.outer(omegas, eps))                        # G x M
    Z = ph[:, :, None] * Es.conj()[None, :, :]                     # G x M x K
    S = np.zeros((2 * J + 1, J + 1))
    S[np.arange(2 * J + 1), cols] = 1.0
    Gm = np.einsum("gmk,mc->gkc", Z, S)                            # Es^H Gamma
    base = np.diag(S.sum(axis=0)).astype(complex)
    return base[None] - np.einsum("gkc,gkd->gcd", Gm.conj(), Gm)


def _omega_of(geom, theta):
    return -2 * np.pi * geom.spacing * np.sin(np.deg2rad(theta))


def _angle_grid(grid):
    return np.linspace(-90, 90, 1801)[1:-1] if grid is None else np.asarray(grid, dtype=float)


def _batched(fn, x, block=2048):
    return np.concatenate([fn(x[i:i + block]) for i in range(0, len(x), block)]) if len(x) else np.zeros(0)


def rr_spectrum(bundle, geom, theta):
    """-log|det Q(omega(theta))|; peaks where Q loses rank."""
    geom = _centered(geom)
    J = geom.half_length
    return _batched(lambda t: -np.linalg.slogdet(_q_batch(_omega_of(geom, t), bundle.signal, J))[1],
                    np.asarray(theta, dtype=float))


def rr_estimate(bundle, geom, carrier, K, angle_grid=None, range_grid=None) -> NearFieldEstimate:
    geom = _centered(geom)
    geom.check_symmetric()
    if not 1 <= K <= geom.half_length:
        raise ValueError("need 1 <= K <= J")
    ranges = NearFieldGrid.default(geom, carrier).ranges if range_grid is None else range_grid
    theta, short = _scan_1d(lambda t: rr_spectrum(bundle, geom, t), _angle_grid(angle_grid), K)
    rng = np.array([range_search(bundle, geom, carrier, t, ranges) for t in theta])
    return NearFieldEstimate(theta, rng, "rr", {"shortfall": short} if short else {})


def _rd_vectors(bundle, geom, theta):
    J = geom.half_length
    Q = _q_batch(_omega_of(geom, np.atleast_1d(theta)), bundle.signal, J)
    tr = np.real(np.trace(Q, axis1=1, axis2=2)) / (J + 1)
    Q = Q + (1e-12 * tr)[:, None, None] * np.eye(J + 1)
    e = np.zeros((len(tr), J + 1, 1), dtype=complex)
    e[:, J, 0] = 1.0
    return np.linalg.solve(Q, e)[:, :, 0]


def rd_spectrum(bundle, geom, theta):
    """e1^H Q^{-1} e1 with e1 the last unit vector."""
    geom = _centered(geom)
    J = geom.half_length
    return _batched(lambda t: np.real(_rd_vectors(bundle, geom, t)[:, J]), np.asarray(theta, dtype=float))


def psi_from_phase(g: np.ndarray, J: int, weights=None):
    """LS fit of unwrapped phase g (entries ordered J^2 ... 0) to c + psi*(J-c)^2.

    Returns (psi, unwrap_jump) where unwrap_jump reports that a step above pi
    had to be unwrapped.
    """
    if J < 2:
        raise ValueError("phase fit needs J >= 2")
    raw = np.asarray(g, dtype=float)
    jump = bool(np.any(np.abs(np.diff(raw)) > np.pi))
    u = np.unwrap(raw)
    s = (J - np.arange(J + 1)) ** 2.0
    Pm = np.column_stack([np.ones(J + 1), s])
    w = np.ones(J + 1) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(Pm * sw[:, None], u * sw, rcond=None)[0]
    return float(coef[1]), jump


def _psi_grid_search(bundle, geom, omega, psis):
    J = geom.half_length
    Q = _q_batch(np.array([omega]), bundle.signal, J)[0]
    X = np.exp(1j * np.outer((J - np.arange(J + 1)) ** 2, psis))
    cost = np.real(np.einsum("cg,cd,dg->g", X.conj(), Q, X))
    return float(psis[np.argmin(cost)])


def rd_estimate(bundle, geom, carrier, K, angle_grid=None) -> NearFieldEstimate:
    geom = _centered(geom)
    geom.check_symmetric()
    J = geom.half_length
    if not 1 <= K <= J:
        raise ValueError("need 1 <= K <= J")
    theta, short = _scan_1d(lambda t: rd_spectrum(bundle, geom, t), _angle_grid(angle_grid), K)
    flags = {"shortfall": True} if short else {}
    omega = _omega_of(geom, theta)
    psis = []
    for k, t in enumerate(theta):
        v = _rd_vectors(bundle, geom, t)[0]
        psi, jump = psi_from_phase(np.angle(v / v[J]), J)
        if jump or psi <= 0:
            flags.setdefault("psi_grid_fallback", []).append(k)
            lam = carrier.wavelength
            d = geom.spacing * lam
            ray = rayleigh_distance(geom, carrier)
            lo_r = max(geom.aperture(carrier), 0.01 * ray)
            top = np.pi * d * d / (lam * lo_r)
            psi = _psi_grid_search(bundle, geom, omega[k], np.linspace(top / 4000, top, 4000))
        psis.append(psi)
    th, rng = fresnel_to_polar(geom, carrier, omega, np.array(psis))
    return NearFieldEstimate(th, rng, "rd", flags)


# --- FFT-enhanced cluster search -------------------------------------------------

def _runs(mask):
    """(start, stop) index pairs of the True runs in a boolean vector."""
    d = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1))


def noise_floor(bundle: CovarianceBundle) -> float:
    """Noise power per element: mean of the M-K smallest eigenvalues."""
    return float(np.mean(bundle.eigenvalues[bundle.K:]))


def fft_enhanced(bundle, geom, carrier, K, grid: NearFieldGrid | None = None, S=None,
                 angle_threshold=0.1, dip_db=3.0, presence_db=3.0, floor=None) -> NearFieldEstimate:
    """2D-MUSIC restricted to angle-range clusters.

    Angle clusters are runs of the S-point beam spectrum above
    ``angle_threshold`` times its peak; a cluster is kept only if its peak
    clears the beamformed noise floor (M times ``floor``, by default the
    mean noise eigenvalue) by ``presence_db``. For each cluster, the beam
    focused at either edge angle is scanned over range: at the true range
    the target's energy stays at its own angle, so the edge power dips.
    Ranges where either edge scan falls ``dip_db`` under its median form
    the range cluster.
    """
    geom = _centered(geom)
    M = geom.num_elements
    grid = NearFieldGrid.default(geom, carrier) if grid is None else grid
    S = 4 * M if S is None else int(S)
    if S < M:
        raise ValueError("S must be at least the number of elements")
    beam = periodogram(None, angle_axis(geom), S, cov=bundle.R)
    # periodogram normalizes a^H R a by M
    p = beam.power * M
    floor = noise_floor(bundle) if floor is None else float(floor)
    gate = M * floor * 10 ** (presence_db / 10)
    evals = 0
    bf = _bf_fn(bundle.R)
    boxes = []
    for i, j in _runs(p >= angle_threshold * p.max()):
        if p[i:j + 1].max() < gate:
            continue
        lo = beam.grid[max(i - 1, 0)]
        hi = beam.grid[min(j + 1, len(p) - 1)]
        scans = _scan(geom, carrier, [lo, hi], grid.ranges, bf)      # (n_r, 2)
        evals += scans.size
        sel = np.any(scans < np.median(scans, axis=0) * 10 ** (-dip_db / 10), axis=1)
        for a, b in _runs(sel):
            boxes.append((lo, hi, grid.ranges[max(a - 1, 0)], grid.ranges[min(b + 1, len(sel) - 1)]))
    fn = _music_fn(bundle.signal)
    cands = []
    for lo, hi, r_lo, r_hi in boxes:
        ang = grid.angles[(grid.angles >= lo) & (grid.angles <= hi)]
        rgrid = grid.ranges[(grid.ranges >= r_lo) & (grid.ranges <= r_hi)]
        if len(ang) == 0 or len(rgrid) == 0:
            continue
        t, r, n, _ = _peaks_2d(geom, carrier, fn, NearFieldGrid(ang, rgrid), K)
        evals += n
        for tk, rk in zip(t, r):
            cands.append((fn(steer_near_exact(geom, carrier, tk, rk)[:, None])[0], tk, rk))
    if not cands:
        raise EstimationError("no angle-range clusters found", beam)
    cands.sort(key=lambda c: -c[0])
    chosen = []
    for c in cands:
        if not any(abs(c[1] - d[1]) < 1e-9 and abs(c[2] - d[2]) < 1e-9 for d in chosen):
            chosen.append(c)
        if len(chosen) == K:
            break
    return NearFieldEstimate(np.array([c[1] for c in chosen]), np.array([c[2] for c in chosen]),
                             "fft-enhanced", {"clusters": len(boxes)}, evals)


# --- symmetry-based ---------------------------------------------------------------

def antidiagonal(R) -> np.ndarray:
    """R[i, M-1-i]: for a symmetric array this depends on angle only."""
    R = np.asarray(R)
    M = R.shape[0]
    return R[np.arange(M), M - 1 - np.arange(M)]


def modified_music(X, geom, carrier, K, L=None, angle_grid=None, range_grid=None, cov=None) -> NearFieldEstimate:
    geom = _centered(geom)
    geom.check_symmetric()
    J = geom.half_length
    L = J if L is None else int(L)
    if not K < L <= J:
        raise ValueError("modified MUSIC needs K < L <= J")
    R = sample_covariance(X) if cov is None else np.asarray(cov)
    y = antidiagonal(R)
    n = len(y) + 1 - L
    Y = np.stack([y[l:l + n] for l in range(L)], axis=1)
    w, V = eig_desc(Y @ Y.conj().T / L)
    Es = V[:, :K]
    idx = np.arange(n)

    def fn(t):
        A = np.exp(2j * np.outer(idx, _omega_of(geom, t)))
        return 1.0 / np.maximum(n - np.sum(np.abs(Es.conj().T @ A) ** 2, axis=0), 1e-300)

    theta, short = _scan_1d(fn, _angle_grid(angle_grid), K)
    bundle = covariance_bundle(None, K, cov=R)
    ranges = NearFieldGrid.default(geom, carrier).ranges if range_grid is None else range_grid
    rng = np.array([range_search(bundle, geom, carrier, t, ranges) for t in theta])
    return NearFieldEstimate(theta, rng, "mod-music", {"shortfall": short} if short else {})


def selection_matrix(J, K, kind="select"):
    """Semi-unitary J x K combiner; "select" gives [I_K; 0]."""
    if not isinstance(kind, str):
        W = np.asarray(kind, dtype=complex)
        if W.shape != (J, K) or not np.allclose(W.conj().T @ W, np.eye(K), atol=1e-10):
            raise ValueError(f"W must be a semi-unitary {J} x {K} matrix")
        return W
    if kind == "select":
        return np.vstack([np.eye(K), np.zeros((J - K, K))])
    raise ValueError(f"unknown selection {kind!r}")


def gen_esprit_spectrum(bundle, geom, theta, W=None):
    """Rank-deficiency spectrum of F(theta) = Es_plus - D(theta) Es_minus.

    Row i pairs element +(i+1) with its mirror -(i+1), whose ratio rotates
    by exp(2j (i+1) omega). With a semi-unitary W (or ``"select"`` for
    [I_K; 0], the K least-rotating pairs) the value is -log|det(W^H F)|.
    By default all J pairs enter through -log det(F^H F) / 2, which keeps
    the long baselines without their angle aliases.
    """
    geom = _centered(geom)
    J = geom.half_length
    Es = bundle.signal
    K = Es.shape[1]
    Es_minus = Es[:J][::-1]
    Es_plus = Es[J + 1:]
    Wm = None if W is None else selection_matrix(J, K, W)
    exps = 2 * (np.arange(J) + 1)

    def fn(t):
        D = np.exp(1j * np.outer(_omega_of(geom, t), exps))           # G x J
        F = Es_plus[None] - D[:, :, None] * Es_minus[None]            # G x J x K
        if Wm is None:
            # singular values of F directly; the Gram matrix would square the conditioning
            return -np.sum(np.log(np.maximum(np.linalg.svd(F, compute_uv=False), 1e-300)), axis=1)
        return -np.linalg.slogdet(np.einsum("jk,gjl->gkl", Wm.conj(), F))[1]

    return _batched(fn, np.asarray(theta, dtype=float))


def generalized_esprit(bundle, geom, carrier, K, angle_grid=None, range_grid=None, W=None) -> NearFieldEstimate:
    geom = _centered(geom)
    geom.check_symmetric()
    if not 1 <= K <= geom.half_length:
        raise ValueError("need 1 <= K <= J")
    theta, short = _scan_1d(lambda t: gen_esprit_spectrum(bundle, geom, t, W), _angle_grid(angle_grid), K)
    ranges = NearFieldGrid.default(geom, carrier).ranges if range_grid is None else range_grid
    rng = np.array([range_search(bundle, geom, carrier, t, ranges) for t in theta])
    return NearFieldEstimate(theta, rng, "gen-esprit", {"shortfall": short} if short else {})


# --- far-field processing of near-field data ------------------------------------

@dataclass(eq=False)
class MismatchReport:
    spectrum: Spectrum1D
    maxima: np.ndarray      # significant local maxima near each target
    spread_db: np.ndarray   # coherent-gain loss of the best far-field beam


def count_maxima(spec: Spectrum1D, center, half_width=5.0, rel_db=-3.0) -> int:
    """Local maxima within +-half_width of center whose power is within rel_db of the window peak."""
    sel = np.flatnonzero(np.abs(spec.grid - center) <= half_width)
    if len(sel) < 3:
        return 0
    p = spec.power[sel]
    inner = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])) + 1
    return int(np.sum(p[inner] >= p.max() * 10 ** (rel_db / 10)))


def farfield_mismatch(R, geom, carrier, targets, powers=None, n_fft=None, half_width=5.0,
                      rel_db=-3.0) -> MismatchReport:
    """Far-field periodogram of (near-field) data and its per-target spread."""
    M = geom.num_elements
    spec = periodogram(None, angle_axis(geom), n_fft or 16 * M, cov=R)
    powers = np.ones(len(targets)) if powers is None else np.asarray(powers)
    counts, spread = [], []
    for t, pw in zip(targets, powers):
        counts.append(count_maxima(spec, t.angle, half_width, rel_db))
        sel = np.abs(spec.grid - t.angle) <= half_width
        spread.append(10 * np.log10(M * pw / spec.power[sel].max()))
    return MismatchReport(spec, np.array(counts), np.array(spread))


def spatial_snapshots(geom, carrier, targets, num_snapshots, snr_db=None, seed=None) -> np.ndarray:
    """M x Q snapshots from exact spherical steering with independent QPSK per target.

    The noise variance follows the tensor convention: mean clean power over
    the linear SNR.
    """
    rng = np.random.default_rng(seed)
    geom = _centered(geom)
    A = np.column_stack([steer_near_exact(geom, carrier, t.angle, t.range) * t.gain for t in targets])
    S = np.exp(1j * np.pi / 4 * (2 * rng.integers(0, 4, (len(targets), num_snapshots)) + 1))
    X = A @ S
    if snr_db is not None:
        var = float(np.mean(np.abs(X) ** 2)) / 10 ** (snr_db / 10)
        X = X + np.sqrt(var / 2) * rng.standard_normal(X.shape + (2,)).view(complex)[..., 0]
    return X


def farfield_mismatch_demo(geom, carrier, targets, num_snapshots=512, snr_db=None, seed=0,
                           **kw) -> MismatchReport:
    """Synthesize exact spherical-wave data for the targets and process it as far-field."""
    X = spatial_snapshots(geom, carrier, targets, num_snapshots, snr_db, seed)
    return farfield_mismatch(sample_covariance(X), geom, carrier, targets,
                             np.abs([t.gain for t in targets]) ** 2, **kw)


NEARFIELD_ALGORITHMS = ("bf2d", "music2d", "soc", "rd", "rr", "fft-enhanced", "mod-music", "gen-esprit")


def estimate_nearfield(alg, X, geom, carrier, K, grid: NearFieldGrid | None = None, cov=None,
                       **kw) -> NearFieldEstimate:
    geom = _centered(geom)
    grid = NearFieldGrid.default(geom, carrier) if grid is None else grid
    R = sample_covariance(X) if cov is None else np.asarray(cov)
    bundle = covariance_bundle(None, K, cov=R)
    if alg == "bf2d":
        return bf2d_estimate(bundle, geom, carrier, K, grid)
    if alg == "music2d":
        return music2d_estimate(bundle, geom, carrier, K, grid)
    if alg == "soc":
        if X is None:
            raise ValueError("SoC needs the snapshot matrix")
        return soc_estimate(X, geom, carrier, K, cov=R)
    if alg == "rd":
        return rd_estimate(bundle, geom, carrier, K, kw.get("angle_grid"))
    if alg == "rr":
        return rr_estimate(bundle, geom, carrier, K, kw.get("angle_grid"), grid.ranges)
    if alg == "fft-enhanced":
        return fft_enhanced(bundle, geom, carrier, K, grid, **kw)
    if alg == "mod-music":
        return modified_music(None, geom, carrier, K, kw.get("L"), kw.get("angle_grid"), grid.ranges, cov=R)
    if alg == "gen-esprit":
        return generalized_esprit(bundle, geom, carrier, K, kw.get("angle_grid"), grid.ranges)
    raise ValueError(f"unknown near-field algorithm {alg!r}; choose from {', '.join(NEARFIELD_ALGORITHMS)}")
