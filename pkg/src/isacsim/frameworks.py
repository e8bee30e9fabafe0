"""End-to-end pipelines that turn a stripped tensor into (angle, delay, Doppler) triples.

Four pipelines are offered: independent per-axis estimation followed by
grouping, sequential estimation with beamforming between stages, a 1D
first stage followed by a joint 2D stage, and a joint 3D search.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimators.axes import AxisKind, ManifoldAxis, angle_axis, delay_axis, doppler_axis
from .estimators.joint import music_nd, periodogram_nd, subspace_peaks
from .estimators.oned import EstimationError, eig_desc, estimate_1d, sample_covariance
from .estimators.spectrum import find_peaks_nd
from .ofdm import SensingTensor, TensorKind

AXES = ("angle", "delay", "doppler")


class Framework(enum.Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"
    JOINT2D = "joint2d"
    JOINT3D = "joint3d"


class Grouping(enum.Enum):
    CORRELATION = "correlation"
    POWER = "power"


class Beamformer(enum.Enum):
    MRC = "mrc"
    ZF = "zf"
    MMSE = "mmse"


@dataclass
class FrameworkConfig:
    """Pipeline settings.

    ``algorithms`` maps an axis name to a 1D algorithm; ``joint`` is
    "periodogram" or "music" for the 2D/3D stages. ``floor_db`` is the
    detection floor for spectral peaks relative to the strongest one, and
    ``branch_counts`` optionally fixes the number of targets behind each
    first-stage estimate.
    """

    framework: Framework = Framework.PARALLEL
    algorithms: dict = field(default_factory=lambda: {a: "periodogram" for a in AXES})
    grouping: Grouping = Grouping.POWER
    beamformer: Beamformer = Beamformer.ZF
    order: tuple = AXES
    joint: str = "periodogram"
    floor_db: float = -10.0
    branch_counts: tuple | None = None
    n_fft: dict = field(default_factory=dict)

    def __post_init__(self):
        self.framework = Framework(self.framework)
        self.grouping = Grouping(self.grouping)
        self.beamformer = Beamformer(self.beamformer)
        self.order = tuple(self.order)
        if sorted(self.order) != sorted(AXES):
            raise ValueError(f"stage order must be a permutation of {AXES}")
        self.algorithms = {**{a: "periodogram" for a in AXES}, **self.algorithms}
        if self.joint not in ("periodogram", "music"):
            raise ValueError("joint stage must be 'periodogram' or 'music'")


@dataclass(eq=False)
class EstimateSet:
    """Estimated triples, one row per target, sorted by score."""

    theta: np.ndarray
    tau: np.ndarray
    doppler: np.ndarray
    score: np.ndarray
    framework: str
    provenance: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta, self.tau, self.doppler, self.score = (
            np.asarray(v, dtype=float).reshape(-1) for v in (self.theta, self.tau, self.doppler, self.score))
        order = np.argsort(-self.score, kind="stable")
        self.theta, self.tau, self.doppler, self.score = (
            v[order] for v in (self.theta, self.tau, self.doppler, self.score))
        if self.provenance:
            self.provenance = [self.provenance[i] for i in order]

    def __len__(self):
        return len(self.theta)

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.theta, self.tau, self.doppler])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["target_idx", "theta_deg", "tau_s", "doppler_hz", "score", "framework"])
            for i, row in enumerate(zip(self.theta, self.tau, self.doppler, self.score)):
                w.writerow([i] + [repr(float(x)) for x in row] + [self.framework])

    @classmethod
    def from_csv(cls, path) -> "EstimateSet":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        col = lambda k: [float(r[k]) for r in rows]
        fw = rows[0]["framework"] if rows else ""
        return cls(col("theta_deg"), col("tau_s"), col("doppler_hz"), col("score"), fw)


def _axes(geom, ofdm):
    return {"angle": angle_axis(geom), "delay": delay_axis(ofdm), "doppler": doppler_axis(ofdm)}


def _data(tensor):
    if isinstance(tensor, SensingTensor):
        if tensor.kind is not TensorKind.STRIPPED:
            raise ValueError("frameworks need a symbol-stripped tensor")
        return tensor.data
    return np.asarray(tensor)


# --- beamforming ----------------------------------------------------------------

def beamform_vector(kind, steering, index: int, ratios=None) -> np.ndarray:
    """Unit-norm combiner for column ``index`` of an L x K steering matrix.

    ZF projects onto the complement of the other columns; MMSE uses
    C = sum_{k != index} ratio_k a_k a_k^H + I with ratio_k = |alpha_k|^2 / sigma^2.
    """
    kind = Beamformer(kind)
    A = np.asarray(steering)
    if A.ndim == 1:
        A = A[:, None]
    a = A[:, index]
    others = np.delete(A, index, axis=1)
    if kind is Beamformer.MRC or others.shape[1] == 0:
        r = a
    elif kind is Beamformer.ZF:
        if others.shape[1] >= A.shape[0]:
            raise ValueError("ZF needs fewer interferers than elements")
        G = others.conj().T @ others
        if np.linalg.cond(G) > 1e10:
            raise np.linalg.LinAlgError("ZF beamformer is singular: coincident steering vectors")
        r = a - others @ np.linalg.solve(G, others.conj().T @ a)
        if np.linalg.norm(r) < 1e-9 * np.linalg.norm(a):
            raise np.linalg.LinAlgError("ZF beamformer is singular: steering vector inside interferer span")
    else:
        if ratios is None:
            raise ValueError("MMSE needs per-column power-to-noise ratios")
        w = np.delete(np.asarray(ratios, dtype=float), index)
        C = (others * w) @ others.conj().T + np.eye(A.shape[0])
        r = np.linalg.solve(C, a)
    return r / np.linalg.norm(r)


def power_ratios(X, steering) -> np.ndarray:
    """|alpha_k|^2 / sigma^2 per steering column, from beamformed powers.

    The noise power is the mean of the trailing eigenvalues of the sample
    covariance (all but as many as there are columns).
    """
    A = np.asarray(steering)
    L, K = A.shape
    R = sample_covariance(X)
    w = eig_desc(R)[0]
    sigma2 = float(np.mean(w[K:])) if K < L else float(np.min(w))
    sigma2 = max(sigma2, 1e-12 * max(float(w[0]), 1e-300))
    p = np.real(np.einsum("lk,lm,mk->k", A.conj(), R, A)) / L ** 2
    return np.maximum(p - sigma2 / L, 0.0) / sigma2


def _combiners(kind, axis: ManifoldAxis, params, X=None) -> np.ndarray:
    """L x K matrix of combiners, one column per estimated parameter."""
    A = axis.steering(np.asarray(params, dtype=float))
    ratios = power_ratios(X, A) if Beamformer(kind) is Beamformer.MMSE else None
    return np.column_stack([beamform_vector(kind, A, i, ratios) for i in range(A.shape[1])])


# --- per-axis estimation ----------------------------------------------------------

def _flatten(D, i):
    return np.moveaxis(D, i, 0).reshape(D.shape[i], -1)


def _estimate_axis(X, axis, alg, K, cfg: FrameworkConfig):
    """1D estimates on an L x Q snapshot matrix, detection floor applied to spectral methods."""
    X = np.asarray(X)
    K = max(1, min(K, X.shape[0] - 1))
    params, strength = estimate_1d(X, axis, alg, K, n_fft=cfg.n_fft.get(axis.kind.value),
                                   floor_db=cfg.floor_db if alg == "periodogram" else None)
    if len(params) == 0:
        raise EstimationError(f"no {axis.kind.value} estimates")
    return np.asarray(params, dtype=float), np.asarray(strength, dtype=float)


def triple_power(D, axes3, theta, tau, nu) -> float:
    """|a_tau^H (a_R^H Y) conj(a_nu)|^2 / (M N P)."""
    a = axes3["angle"].steering(theta)
    b = axes3["delay"].steering(tau)
    c = axes3["doppler"].steering(nu)
    return float(abs(np.einsum("m,n,p,mnp->", a.conj(), b.conj(), c.conj(), D)) ** 2 / D.size)


def triple_correlation(D, axes3, theta, tau, nu) -> float:
    """|mean(conj(Y_hat) * Y)| for the unit-gain reconstruction of one triple."""
    a = axes3["angle"].steering(theta)
    b = axes3["delay"].steering(tau)
    c = axes3["doppler"].steering(nu)
    return float(abs(np.einsum("m,n,p,mnp->", a.conj(), b.conj(), c.conj(), D)) / D.size)


def group_triples(D, axes3, estimates: dict, K: int, method=Grouping.POWER):
    """Score every candidate triple and keep the top K under a reuse cap.

    Each 1D estimate may appear in at most ceil(K / K_axis) triples.
    Returns (triples, scores, all_scores) where all_scores is a dict keyed
    by index triples.
    """
    method = Grouping(method)
    score_fn = triple_power if method is Grouping.POWER else triple_correlation
    sets = [np.asarray(estimates[a]) for a in AXES]
    caps = [math.ceil(K / len(s)) for s in sets]
    scores = {}
    for idx in np.ndindex(*(len(s) for s in sets)):
        scores[idx] = score_fn(D, axes3, *(s[i] for s, i in zip(sets, idx)))
    used = [np.zeros(len(s), dtype=int) for s in sets]
    chosen = []
    for idx, sc in sorted(scores.items(), key=lambda kv: -kv[1]):
        if len(chosen) == K:
            break
        if any(u[i] >= c for u, i, c in zip(used, idx, caps)):
            continue
        for u, i in zip(used, idx):
            u[i] += 1
        chosen.append((idx, sc))
    triples = np.array([[s[i] for s, i in zip(sets, idx)] for idx, _ in chosen]).reshape(-1, 3)
    return triples, np.array([sc for _, sc in chosen]), scores


def run_parallel(tensor, geom, ofdm, K: int, cfg: FrameworkConfig | None = None) -> EstimateSet:
    cfg = cfg or FrameworkConfig(Framework.PARALLEL)
    D = _data(tensor)
    axes3 = _axes(geom, ofdm)
    est = {}
    for i, name in enumerate(AXES):
        est[name], _ = _estimate_axis(_flatten(D, i), axes3[name], cfg.algorithms[name], K, cfg)
    triples, scores, _ = group_triples(D, axes3, est, K, cfg.grouping)
    prov = [{a: cfg.algorithms[a] for a in AXES} for _ in range(len(triples))]
    return EstimateSet(triples[:, 0], triples[:, 1], triples[:, 2], scores, "parallel", prov,
                       {"counts": {a: len(est[a]) for a in AXES}})


# --- sequential -------------------------------------------------------------------

def _branch_budget(K, n_branches, cfg, b):
    if cfg.branch_counts is not None:
        return int(cfg.branch_counts[b])
    return max(1, K - n_branches + 1)


def _stage(D, axis, alg, budget, cfg):
    """Estimates on the leading dimension of D (L x ...)."""
    X = D.reshape(D.shape[0], -1)
    return _estimate_axis(X, axis, alg, budget, cfg)[0]


def run_sequential(tensor, geom, ofdm, K: int, cfg: FrameworkConfig | None = None) -> EstimateSet:
    """Estimate the first axis, beamform per estimate, repeat on the next axis.

    Without configured branch counts each branch may return up to
    K - (branches - 1) detections above the floor; the leaves are then
    ranked by triple power and the best K kept.
    """
    cfg = cfg or FrameworkConfig(Framework.SEQUENTIAL)
    D = _data(tensor)
    axes3 = _axes(geom, ofdm)
    order = cfg.order
    D = np.transpose(D, [AXES.index(a) for a in order])
    ax = [axes3[a] for a in order]
    leaves, dropped = [], []
    p1 = _stage(D, ax[0], cfg.algorithms[order[0]], K, cfg)
    W1 = _combiners(cfg.beamformer, ax[0], p1, _flatten(D, 0))
    for b, x1 in enumerate(p1):
        D2 = np.tensordot(W1[:, b].conj(), D, axes=(0, 0))             # L2 x L3
        try:
            p2 = _stage(D2, ax[1], cfg.algorithms[order[1]], _branch_budget(K, len(p1), cfg, b), cfg)
        except EstimationError:
            dropped.append(float(x1))
            continue
        W2 = _combiners(cfg.beamformer, ax[1], p2, D2)
        for c, x2 in enumerate(p2):
            d3 = W2[:, c].conj() @ D2                                   # L3
            p3 = _stage(d3[:, None], ax[2], cfg.algorithms[order[2]], max(1, K - len(p1) - len(p2) + 2), cfg)
            for x3 in p3:
                leaves.append(dict(zip(order, (x1, x2, x3))))
    rows = np.array([[lf[a] for a in AXES] for lf in leaves]).reshape(-1, 3)
    scores = np.array([triple_power(_data(tensor), axes3, *r) for r in rows])
    keep = np.argsort(-scores, kind="stable")[:K]
    rows, scores = rows[keep], scores[keep]
    prov = [{a: cfg.algorithms[a] for a in AXES} for _ in range(len(rows))]
    flags = {"dropped_branches": dropped} if dropped else {}
    return EstimateSet(rows[:, 0], rows[:, 1], rows[:, 2], scores, "sequential", prov, flags)


# --- joint ------------------------------------------------------------------------

def _joint_peaks(D, axes, K, cfg):
    if cfg.joint == "music":
        spec = music_nd(D, axes, K)
        pk = subspace_peaks(spec, K)
    else:
        spec = periodogram_nd(D, axes)
        pk = find_peaks_nd(spec, K, floor_db=cfg.floor_db)
    return pk.points, pk.powers


def run_joint2d(tensor, geom, ofdm, K: int, cfg: FrameworkConfig | None = None) -> EstimateSet:
    """First-axis 1D estimation and beamforming, then a joint 2D search per branch.

    A branch whose strongest 2D peak falls below the detection floor
    relative to the best branch is reported as empty and dropped.
    """
    cfg = cfg or FrameworkConfig(Framework.JOINT2D)
    D0 = _data(tensor)
    axes3 = _axes(geom, ofdm)
    order = cfg.order
    D = np.transpose(D0, [AXES.index(a) for a in order])
    ax = [axes3[a] for a in order]
    p1 = _stage(D, ax[0], cfg.algorithms[order[0]], K, cfg)
    W1 = _combiners(cfg.beamformer, ax[0], p1, _flatten(D, 0))
    branches = []
    for b, x1 in enumerate(p1):
        D2 = np.tensordot(W1[:, b].conj(), D, axes=(0, 0))
        pts, _ = _joint_peaks(D2, ax[1:], _branch_budget(K, len(p1), cfg, b), cfg)
        rows = [dict(zip(order, (x1, *pt))) for pt in pts]
        rows = np.array([[r[a] for a in AXES] for r in rows]).reshape(-1, 3)
        branches.append((float(x1), rows, np.array([triple_power(D0, axes3, *r) for r in rows])))
    best = max((s.max() for _, _, s in branches if len(s)), default=0.0)
    floor = best * 10 ** (cfg.floor_db / 10)
    empty = [x1 for x1, _, s in branches if not len(s) or s.max() < floor]
    rows = np.vstack([r for x1, r, s in branches if x1 not in empty] or [np.zeros((0, 3))])
    scores = np.concatenate([s for x1, _, s in branches if x1 not in empty] or [np.zeros(0)])
    keep = np.argsort(-scores, kind="stable")[:K]
    flags = {"empty_branches": empty} if empty else {}
    prov = [{order[0]: cfg.algorithms[order[0]], "joint": cfg.joint} for _ in keep]
    return EstimateSet(rows[keep, 0], rows[keep, 1], rows[keep, 2], scores[keep], "joint2d", prov, flags)


def run_joint3d(tensor, geom, ofdm, K: int, cfg: FrameworkConfig | None = None) -> EstimateSet:
    cfg = cfg or FrameworkConfig(Framework.JOINT3D)
    D = _data(tensor)
    axes3 = _axes(geom, ofdm)
    pts, powers = _joint_peaks(D, [axes3[a] for a in AXES], K, cfg)
    prov = [{"joint": cfg.joint} for _ in range(len(pts))]
    return EstimateSet(pts[:, 0], pts[:, 1], pts[:, 2], powers, "joint3d", prov)


RUNNERS = {
    Framework.PARALLEL: run_parallel,
    Framework.SEQUENTIAL: run_sequential,
    Framework.JOINT2D: run_joint2d,
    Framework.JOINT3D: run_joint3d,
}


def run_framework(tensor, geom, ofdm, K: int, cfg: FrameworkConfig) -> EstimateSet:
    return RUNNERS[cfg.framework](tensor, geom, ofdm, K, cfg)


# --- evaluation -------------------------------------------------------------------

@dataclass(eq=False)
class MatchResult:
    pairs: np.ndarray           # (n_matched, 2): estimate index, truth index
    errors: np.ndarray          # (n_matched, n_axes) signed estimate - truth
    unmatched_estimates: np.ndarray
    unmatched_truths: np.ndarray
    cost: float

    @property
    def match_rate(self) -> float:
        n = len(self.pairs) + len(self.unmatched_truths)
        return len(self.pairs) / n if n else 1.0

    def rmse(self) -> np.ndarray:
        if len(self.errors) == 0:
            return np.full(self.errors.shape[1], np.nan)
        return np.sqrt(np.mean(self.errors ** 2, axis=0))


def match_to_truth(estimates, truth, weights=None, gate=np.inf) -> MatchResult:
    """Minimum-cost assignment of estimates to true targets.

    Rows are parameter vectors; ``weights`` scale each axis (one
    resolution cell per axis makes the distance unitless). Pairs farther
    apart than ``gate`` in weighted Euclidean distance are left unmatched.
    """
    E = np.atleast_2d(np.asarray(estimates.as_array() if hasattr(estimates, "as_array") else estimates,
                                 dtype=float))
    T = np.atleast_2d(np.asarray(truth, dtype=float))
    if E.size == 0:
        E = np.zeros((0, T.shape[1]))
    w = np.ones(T.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    if len(E) == 0 or len(T) == 0:
        return MatchResult(np.zeros((0, 2), int), np.zeros((0, T.shape[1])), np.arange(len(E)),
                           np.arange(len(T)), 0.0)
    C = np.linalg.norm((E[:, None, :] - T[None, :, :]) / w, axis=2)
    ri, ci = linear_sum_assignment(C)
    ok = C[ri, ci] <= gate
    ri, ci = ri[ok], ci[ok]
    return MatchResult(np.column_stack([ri, ci]), E[ri] - T[ci],
                       np.setdiff1d(np.arange(len(E)), ri), np.setdiff1d(np.arange(len(T)), ci),
                       float(C[ri, ci].sum()))


def resolution_cells(geom, ofdm) -> np.ndarray:
    """One resolution cell per axis: angle (deg, near broadside), delay (s), Doppler (Hz)."""
    return np.array([angle_axis(geom).cell, ofdm.delay_resolution, ofdm.doppler_resolution])
