"""Gridded spectra, peak extraction and their file formats."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .axes import ManifoldAxis

SPECTRUM_MAGIC = b"ISACSPEC"


@dataclass(eq=False)
class Spectrum1D:
    grid: np.ndarray
    power: np.ndarray
    axis: ManifoldAxis | None = None
    algorithm: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if self.grid.shape != self.power.shape or self.grid.ndim != 1:
            raise ValueError("grid and power must be 1-D arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    def __len__(self):
        return len(self.grid)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["param", "power"])
            for x, p in zip(self.grid, self.power):
                w.writerow([repr(float(x)), repr(float(p))])

    def peaks(self, K, **kw) -> "PeakSet":
        return find_peaks(self, K, **kw)


@dataclass(eq=False)
class PeakSet:
    params: np.ndarray
    powers: np.ndarray
    indices: np.ndarray
    shortfall: bool = False

    def __len__(self):
        return len(self.params)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rank", "param", "power"])
            for i, (x, p) in enumerate(zip(self.params, self.powers)):
                w.writerow([i, repr(float(x)), repr(float(p))])


def _local_maxima_1d(p):
    n = len(p)
    if n == 0:
        return np.zeros(0, dtype=int)
    if n == 1:
        return np.zeros(1, dtype=int)
    left = np.concatenate([[-np.inf], p[:-1]])
    right = np.concatenate([p[1:], [-np.inf]])
    # strict on the left so a plateau yields one maximum
    return np.flatnonzero((p > left) & (p >= right))


def _parabolic(p, i):
    """Vertex offset and height of the parabola through p[i-1], p[i], p[i+1]."""
    if i <= 0 or i >= len(p) - 1:
        return 0.0, p[i]
    a, b, c = p[i - 1], p[i], p[i + 1]
    den = a - 2 * b + c
    if den >= 0:
        return 0.0, b
    delta = 0.5 * (a - c) / den
    delta = float(np.clip(delta, -0.5, 0.5))
    return delta, b - 0.25 * (a - c) * delta


def _separation_cells(spec: Spectrum1D, x, y):
    """Distance between two parameters in Rayleigh cells (phase space) or grid steps."""
    ax = spec.axis
    if ax is None:
        step = np.median(np.diff(spec.grid)) if len(spec.grid) > 1 else 1.0
        return abs(x - y) / step
    d = np.angle(np.exp(1j * (ax.phase(x) - ax.phase(y))))
    return abs(d) * ax.length / (2 * np.pi)


def find_peaks(spec: Spectrum1D, K: int, exclusion: float | None = None, interpolate: bool = True,
               floor_db: float | None = None) -> PeakSet:
    """Greedy pick of the K strongest local maxima.

    ``exclusion`` is the minimum pairwise separation in resolution cells of
    the spectrum's axis; by default the producer's choice stored in
    ``spec.meta['exclusion']`` (one cell for beamforming spectra, none for
    subspace spectra). ``floor_db`` drops peaks that far below the strongest.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if exclusion is None:
        exclusion = spec.meta.get("exclusion", 0.0)
    p = spec.power
    cand = _local_maxima_1d(p)
    cand = cand[np.argsort(-p[cand], kind="stable")]
    if floor_db is not None and len(cand):
        cand = cand[p[cand] >= p[cand[0]] * 10 ** (floor_db / 10)]
    chosen_idx, chosen_x, chosen_p = [], [], []
    n = len(p)
    for i in cand:
        if len(chosen_idx) == K:
            break
        delta, height = _parabolic(p, i) if interpolate else (0.0, p[i])
        fi = i + delta
        x = float(np.interp(fi, np.arange(n), spec.grid))
        if exclusion > 0 and any(_separation_cells(spec, x, y) < exclusion for y in chosen_x):
            continue
        chosen_idx.append(fi)
        chosen_x.append(x)
        chosen_p.append(height)
    return PeakSet(np.array(chosen_x), np.array(chosen_p), np.array(chosen_idx), len(chosen_x) < K)


@dataclass(eq=False)
class SpectrumND:
    """Power on a rectilinear grid; ``power.shape`` equals the grid lengths."""

    grids: tuple
    power: np.ndarray
    names: tuple
    algorithm: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grids = tuple(np.asarray(g, dtype=float) for g in self.grids)
        self.power = np.asarray(self.power, dtype=float)
        self.names = tuple(self.names)
        if self.power.shape != tuple(len(g) for g in self.grids):
            raise ValueError("power shape must equal grid lengths")
        if len(self.names) != len(self.grids):
            raise ValueError("one name per axis")

    @property
    def ndim(self):
        return len(self.grids)

    def peaks(self, K, **kw):
        return find_peaks_nd(self, K, **kw)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(list(self.names) + ["power"])
            for idx in np.ndindex(self.power.shape):
                w.writerow([repr(float(g[i])) for g, i in zip(self.grids, idx)] + [repr(float(self.power[idx]))])

    def save(self, path):
        """Binary dump: header with axis names and grids, then float32 power in C order."""
        with open(path, "wb") as f:
            f.write(SPECTRUM_MAGIC)
            f.write(struct.pack("<B", self.ndim))
            for name, g in zip(self.names, self.grids):
                b = name.encode()
                f.write(struct.pack("<H", len(b)) + b)
                f.write(struct.pack("<I", len(g)))
                f.write(g.astype("<f8").tobytes())
            f.write(np.ascontiguousarray(self.power, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:8] != SPECTRUM_MAGIC:
            raise ValueError(f"{path}: not a spectrum file")
        off = 8
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        names, grids = [], []
        for _ in range(ndim):
            (ln,) = struct.unpack_from("<H", raw, off)
            off += 2
            names.append(raw[off:off + ln].decode())
            off += ln
            (n,) = struct.unpack_from("<I", raw, off)
            off += 4
            grids.append(np.frombuffer(raw, "<f8", n, off).copy())
            off += 8 * n
        shape = tuple(len(g) for g in grids)
        power = np.frombuffer(raw, "<f4", int(np.prod(shape)), off).reshape(shape).astype(float)
        return cls(tuple(grids), power, tuple(names))


class Spectrum2D(SpectrumND):
    pass


class Spectrum3D(SpectrumND):
    pass


@dataclass(eq=False)
class PeakSetND:
    points: np.ndarray   # K x ndim parameters
    powers: np.ndarray
    indices: np.ndarray  # K x ndim fractional grid indices
    shortfall: bool = False

    def __len__(self):
        return len(self.points)


def find_peaks_nd(spec: SpectrumND, K: int, exclusion: int = 1, interpolate: bool = True,
                  floor_db: float | None = None) -> PeakSetND:
    """K strongest local maxima on the grid with per-axis parabolic refinement.

    ``exclusion`` is a Chebyshev radius in grid cells used both for the
    local-maximum test and for the pairwise separation of picked peaks.
    """
    p = spec.power
    size = 2 * max(int(exclusion), 1) + 1
    mx = ndimage.maximum_filter(p, size=size, mode="nearest")
    cand = np.argwhere((p == mx) & (p > 0))
    order = np.argsort(-p[tuple(cand.T)], kind="stable")
    cand = cand[order]
    if floor_db is not None and len(cand):
        top = p[tuple(cand[0])]
        cand = cand[p[tuple(cand.T)] >= top * 10 ** (floor_db / 10)]
    picked, pts, pw, fidx = [], [], [], []
    for c in cand:
        if len(picked) == K:
            break
        if any(np.max(np.abs(c - q)) <= exclusion for q in picked):
            continue
        picked.append(c)
        f = c.astype(float)
        height = p[tuple(c)]
        if interpolate:
            for ax in range(p.ndim):
                sl = list(c)
                sl[ax] = slice(None)
                line = p[tuple(sl)]
                delta, h = _parabolic(line, c[ax])
                f[ax] += delta
                height = max(height, h)
        fidx.append(f)
        pts.append([np.interp(f[a], np.arange(len(g)), g) for a, g in enumerate(spec.grids)])
        pw.append(height)
    ndim = p.ndim
    return PeakSetND(np.array(pts).reshape(-1, ndim), np.array(pw), np.array(fidx).reshape(-1, ndim),
                     len(picked) < K)
