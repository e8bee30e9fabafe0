"""Closed-form complex-multiplication counts for the estimators.

Counts follow the usual conventions: an (M x Q)(Q x N) product costs QMN,
an M x M eigendecomposition M^3 and an n-point FFT n log2 n.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np


def _lg(n):
    return math.log2(n)


# 1D angle estimation: M antennas, Q snapshots, K targets, Ns search points, Nf FFT points
ONE_D = {
    "periodogram": lambda M, Q, K, Ns, Nf: Q * Nf * _lg(Nf),
    "music": lambda M, Q, K, Ns, Nf: Q * M**2 + M**3 + (2 * M * (M - K) + M) * Ns,
    "pm-music": lambda M, Q, K, Ns, Nf: Q * M**2 + M * K * (M - K) + (2 * M * (M - K) + M) * Ns,
    "fft-music": lambda M, Q, K, Ns, Nf: Q * M**2 + M**3 + (M - K) * Nf * _lg(Nf),
    "esprit-ls": lambda M, Q, K, Ns, Nf: Q * M**2 + M**3 + K**2 * (M - 1) + K**3,
    "esprit-tls": lambda M, Q, K, Ns, Nf: Q * M**2 + M**3 + (2 * K) ** 2 * (M - 1) + 10 * K**3,
    "pm-esprit": lambda M, Q, K, Ns, Nf: Q * M**2 + M * K * (M - K) + K**2 * (M - 1) + K**3,
    "omp": lambda M, Q, K, Ns, Nf: K * M * Ns * Q + M * K**3 + M * K**2 * Q,
}

# joint delay-Doppler (2D) and angle-delay-Doppler (3D)
JOINT = {
    "periodogram2d": lambda M, N, P, K, Nt, Nv, Na: M * (N * Nv * _lg(Nv) + Nv * Nt * _lg(Nt)),
    "music2d": lambda M, N, P, K, Nt, Nv, Na: M * N**2 * P**2 + (N * P) ** 3
    + (2 * N * P * (N * P - K) + N * P) * Nt * Nv,
    "esprit2d": lambda M, N, P, K, Nt, Nv, Na: 2 * M * N**2 * P**2 + 2 * (N * P) ** 3
    + K**2 * N * (P - 1) + K**2 * P * (N - 1) + 2 * K**3,
    "periodogram3d": lambda M, N, P, K, Nt, Nv, Na: N * P * Na * _lg(Na) + N * Na * Nv * _lg(Nv)
    + Na * Nv * Nt * _lg(Nt),
    "music3d": lambda M, N, P, K, Nt, Nv, Na: (M * N * P) ** 2 + (M * N * P) ** 3
    + (2 * M * N * P * (M * N * P - K) + M * N * P) * Na * Nt * Nv,
}


def _nf(M, N, P, K, ng, nl, S, L, ng2, nl2):
    J = (M - 1) // 2
    base = M**3 + M**2 * N * P
    return {
        "bf2d": M**2 * N * P + ng * nl * M**2,
        "music2d": base + ng * nl * (M - K) * (M + 1),
        "soc": J**2 * N * P + S * _lg(S) + K * nl * M**2,
        "rr": base + (M - K) * (ng * (J + 1) * (M + J + 1) + nl * K * (M + 1)),
        "rd": base + ng * ((M - K) * (J + 1) * (M + J + 1) + (J + 1) ** 3),
        "fft-enhanced": base + 2 * M * S * _lg(S) + 2 * L * nl * M**2 + L * ng2 * nl2 * (M - K) * (M + 1),
        "mod-music": base + (J + 1) ** 3 + ng * (J + 1) ** 2 + nl * M**2 * K,
        "gen-esprit": base + ng * K**4 * (K * J + J**2) + nl * M**2 * K,
    }


def one_d(alg: str, M: int, Q: int = 8192, K: int = 3, Ns: int = 1801, Nf: int | None = None) -> float:
    if alg not in ONE_D:
        raise KeyError(f"no closed form for {alg!r}")
    return float(ONE_D[alg](M, Q, K, Ns, Ns if Nf is None else Nf))


def joint(alg: str, M: int = 16, N: int = 128, P: int = 64, K: int = 3, Nt: int = 1024, Nv: int = 512,
          Na: int = 1801) -> float:
    if alg not in JOINT:
        raise KeyError(f"no closed form for {alg!r}")
    return float(JOINT[alg](M, N, P, K, Nt, Nv, Na))


def near_field(alg: str, M: int = 64, K: int = 4, N: int = 256, P: int = 10, ng: int = 3600, nl: int = 900,
               S: int | None = None, L: int = 2, ng_cluster: int | None = None,
               nl_cluster: int | None = None) -> float:
    """Near-field counts; M is the array size (J = (M-1)//2).

    ``L`` is the number of FFT-enhanced clusters and ``ng_cluster`` /
    ``nl_cluster`` their grid sizes (default a tenth of the full grids).
    """
    S = 4 * M if S is None else S
    ng2 = ng // 10 if ng_cluster is None else ng_cluster
    nl2 = nl // 10 if nl_cluster is None else nl_cluster
    table = _nf(M, N, P, K, ng, nl, S, L, ng2, nl2)
    if alg not in table:
        raise KeyError(f"no closed form for {alg!r}")
    return float(table[alg])


NEAR_FIELD = tuple(_nf(65, 1, 1, 1, 1, 1, 4, 1, 1, 1))

# Reference table: N=128, P=64, Q=8192, K=3, 1801 search/FFT points
TABLE_ANTENNAS = (16, 64, 256, 512, 1024)
TABLE_ALGORITHMS = ("periodogram", "music", "pm-music", "root-music", "fft-music", "esprit-ls", "esprit-tls",
                    "pm-esprit", "omp")


def sci(x: float) -> str:
    """Three-digit scientific notation without a padded exponent (1.596e8)."""
    m, e = f"{x:.3e}".split("e")
    return f"{m}e{int(e)}"


@dataclass
class ComplexityTable:
    antennas: tuple
    rows: dict = field(default_factory=dict)     # algorithm -> list of counts (nan where no closed form)
    times: dict = field(default_factory=dict)    # algorithm -> list of seconds (optional)

    def cell(self, alg, M) -> str:
        v = self.rows[alg][self.antennas.index(M)]
        return "/" if np.isnan(v) else sci(v)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            head = ["algorithm"]
            for M in self.antennas:
                head += [f"theoretical_M{M}"] + ([f"time_s_M{M}"] if self.times else [])
            w.writerow(head)
            for alg in self.rows:
                row = [alg]
                for i, M in enumerate(self.antennas):
                    row.append(self.cell(alg, M))
                    if self.times:
                        t = self.times.get(alg, [float("nan")] * len(self.antennas))[i]
                        row.append(f"{t:.4g}")
                w.writerow(row)


def table_1d(antennas=TABLE_ANTENNAS, Q=8192, K=3, Ns=1801) -> ComplexityTable:
    rows = {}
    for alg in TABLE_ALGORITHMS:
        rows[alg] = [one_d(alg, M, Q, K, Ns) if alg in ONE_D else float("nan") for M in antennas]
    return ComplexityTable(tuple(antennas), rows)


def time_1d(table: ComplexityTable, N=128, P=64, K=3, repeats=3, seed=0) -> ComplexityTable:
    """Attach measured wall times (informational) for each cell's estimator."""
    from .estimators.axes import ManifoldAxis, AxisKind
    from .estimators.oned import estimate_1d

    rng = np.random.default_rng(seed)
    Q = N * P
    for alg in table.rows:
        table.times[alg] = []
        for M in table.antennas:
            axis = ManifoldAxis(AxisKind.ANGLE, M, 0.5)
            X = axis.steering(np.array([-20.0, 10.0, 45.0][:K])) @ np.exp(2j * np.pi * rng.random((K, Q)))
            X = X + 0.1 * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                estimate_1d(X, axis, alg, K)
                best = min(best, time.perf_counter() - t0)
            table.times[alg].append(best)
    return table


def complexity_report(alg: str, family: str | None = None, **config) -> float:
    """Operation count for ``alg``; ``family`` picks "1d", "joint" or "near-field".

    Without ``family`` the name decides: joint names end in 2d/3d and
    near-field names come from the near-field table (``music2d`` is the
    near-field one unless ``family="joint"``).
    """
    if family is None:
        family = "1d" if alg in ONE_D else "near-field" if alg in NEAR_FIELD else "joint"
    if family == "1d":
        return one_d(alg, **config)
    if family == "joint":
        return joint(alg, **config)
    if family == "near-field":
        return near_field(alg, **config)
    raise ValueError(f"unknown complexity family {family!r}")
