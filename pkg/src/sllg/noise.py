"""Brownian paths, the antisymmetric rough driver built from them, and the
Stratonovich-to-Ito drift correction.

The first iterated integral over [s,t] is the antisymmetric matrix
F(dw) with F(xi) v = v x xi; the second iterated integral is assembled from
the level-2 integrals of the piecewise-linear interpolation of the path, so
Chen's relation holds exactly across concatenation and the lift is geometric
(Sym(WW) = W W / 2) to machine precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_HEADER = struct.Struct("<iqdQ")  # dimension, n_steps, dt, seed


@dataclass(frozen=True)
class BrownianPath:
    """Increments of a Brownian motion on a uniform time grid.

    ``increments`` has shape (n_steps, dimension); entry k is w((k+1)dt) - w(k dt).
    """

    dt: float
    increments: np.ndarray
    seed: int = 0

    @property
    def dimension(self) -> int:
        return self.increments.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def positions(self) -> np.ndarray:
        """Path values at the grid times, starting from the origin."""
        pos = np.zeros((self.n_steps + 1, self.dimension))
        np.cumsum(self.increments, axis=0, out=pos[1:])
        return pos


def path_rng(seed: int, trajectory: int = 0) -> np.random.Generator:
    """Independent stream per (seed, trajectory); counter-based sub-seeding."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trajectory,)))


def sample_brownian(
    seed: int, dt: float, n_steps: int, dimension: int = 3, trajectory: int = 0
) -> BrownianPath:
    """Sample a Brownian path; deterministic for fixed (seed, trajectory)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if dimension not in (1, 3):
        raise ValueError(f"dimension must be 1 or 3, got {dimension}")
    rng = path_rng(seed, trajectory)
    incs = rng.standard_normal((n_steps, dimension)) * np.sqrt(dt)
    return BrownianPath(dt=dt, increments=incs, seed=seed)


def write_increments(path: BrownianPath, fname) -> None:
    """Binary dump (little-endian float64) for replay across runs."""
    with open(fname, "wb") as fh:
        fh.write(_HEADER.pack(path.dimension, path.n_steps, path.dt, path.seed))
        fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def read_increments(fname) -> BrownianPath:
    with open(fname, "rb") as fh:
        dim, n_steps, dt, seed = _HEADER.unpack(fh.read(_HEADER.size))
        incs = np.frombuffer(fh.read(), dtype="<f8").reshape(n_steps, dim).copy()
    return BrownianPath(dt=dt, increments=incs, seed=seed)


# -- rough driver ------------------------------------------------------------

def first_level(dw: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix of the increment: first_level(dw) @ v == v x dw."""
    d1, d2, d3 = dw
    return np.array([[0.0, d3, -d2], [-d3, 0.0, d1], [d2, -d1, 0.0]])


def _level2_matrix(w2: np.ndarray) -> np.ndarray:
    """Map the raw level-2 tensor w2[i,j] = int dw^i dw^j to the driver matrix."""
    out = w2.copy()
    tr = np.trace(w2)
    for i in range(3):
        out[i, i] = w2[i, i] - tr
    return out


@dataclass(frozen=True)
class RoughDriverSample:
    """First/second iterated integrals of a 3D path over a coarse partition.

    ``W[k]``, ``WW[k]`` are the integrals over [times[k], times[k+1]].
    """

    times: np.ndarray
    W: np.ndarray   # (m, 3, 3), antisymmetric
    WW: np.ndarray  # (m, 3, 3)

    @property
    def n_intervals(self) -> int:
        return self.W.shape[0]

    @property
    def levy_area(self) -> np.ndarray:
        """Antisymmetric part of the second level."""
        return 0.5 * (self.WW - np.transpose(self.WW, (0, 2, 1)))

    def combined(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(W, WW) over [times[i], times[j]] via Chen concatenation."""
        if not 0 <= i < j <= self.n_intervals:
            raise IndexError(f"invalid interval pair ({i}, {j})")
        W = self.W[i].copy()
        WW = self.WW[i].copy()
        for k in range(i + 1, j):
            WW = WW + self.WW[k] + self.W[k] @ W
            W = W + self.W[k]
        return W, WW


def second_level(path: BrownianPath, coarse_times: np.ndarray) -> RoughDriverSample:
    """Lift a 3D path to a rough driver sample over the given coarse partition.

    Level 2 uses the midpoint (Stratonovich) rule on the piecewise-linear
    interpolation of the fine path; coarse partition points must lie on the
    fine step grid.
    """
    if path.dimension != 3:
        raise ValueError("rough driver construction needs a 3D path")
    coarse_times = np.asarray(coarse_times, dtype=float)
    idx = np.rint(coarse_times / path.dt).astype(int)
    if np.max(np.abs(idx * path.dt - coarse_times)) > 1e-9 * max(path.dt, 1.0):
        raise ValueError("coarse partition points must lie on the fine step grid")
    if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] > path.n_steps:
        raise ValueError("coarse partition must be increasing and within the path")

    m = len(idx) - 1
    W = np.empty((m, 3, 3))
    WW = np.empty((m, 3, 3))
    incs = path.increments
    for k in range(m):
        seg = incs[idx[k]: idx[k + 1]]
        dw = seg.sum(axis=0)
        # level-2 of the piecewise-linear path: cross terms by Chen, 1/2 d x d per step
        prefix = np.cumsum(seg, axis=0) - seg
        w2 = prefix.T @ seg + 0.5 * (seg.T @ seg)
        W[k] = first_level(dw)
        WW[k] = _level2_matrix(w2)
    times = idx * path.dt
    return RoughDriverSample(times=times, W=W, WW=WW)


def chen_residual(sample: RoughDriverSample) -> float:
    """Max deviation of delta WW_{s,u,t} - W_{u,t} W_{s,u} over adjacent triples."""
    worst = 0.0
    for k in range(sample.n_intervals - 1):
        _, WW_st = sample.combined(k, k + 2)
        delta = WW_st - sample.WW[k] - sample.WW[k + 1]
        worst = max(worst, float(np.max(np.abs(delta - sample.W[k + 1] @ sample.W[k]))))
    return worst


def geometricity_residual(sample: RoughDriverSample) -> float:
    """Max deviation of Sym(WW) - W W / 2 over the intervals."""
    sym = 0.5 * (sample.WW + np.transpose(sample.WW, (0, 2, 1)))
    prod = 0.5 * np.einsum("kij,kjl->kil", sample.W, sample.W)
    return float(np.max(np.abs(sym - prod)))


def antisymmetry_residual(sample: RoughDriverSample) -> float:
    return float(np.max(np.abs(sample.W + np.transpose(sample.W, (0, 2, 1)))))


# -- p-variation -------------------------------------------------------------

def p_variation(positions: np.ndarray, p: float, max_depth: int = 10) -> float:
    """Dyadic lower bound for the p-variation of a discretely sampled path.

    Takes the max over dyadic partitions of depth 0..max_depth of
    (sum |delta h|^p)^(1/p); monotone nondecreasing in ``max_depth``.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    n = positions.shape[0] - 1
    best = 0.0
    for depth in range(max_depth + 1):
        k = min(2 ** depth, n)
        idx = np.unique(np.rint(np.linspace(0, n, k + 1)).astype(int))
        deltas = np.linalg.norm(np.diff(positions[idx], axis=0), axis=1)
        best = max(best, float(np.sum(deltas ** p) ** (1.0 / p)))
        if 2 ** depth >= n:
            break
    return best


# -- Ito-Stratonovich conversion ---------------------------------------------

def ito_correction(x: np.ndarray, intensity_sq: float) -> np.ndarray:
    """Ito drift supplement for du = intensity * u x (Strat dW), 3D W.

    The Stratonovich-to-Ito conversion of v -> v x . yields c(v) = -2 v; half
    of it scaled by the squared intensity gives -intensity^2 * v.
    """
    return -intensity_sq * np.asarray(x, dtype=float)


# -- noise shapes ------------------------------------------------------------

@dataclass(frozen=True)
class NoiseShape:
    """Spatial profile of the noise.

    Shape "A": W_t(x) = h1(x) B_t with h1 a Vec3 profile and B scalar.
    Shape "B": W_t(x) = h2(x) Bbar_t with h2 scalar and Bbar 3D.
    """

    tag: str  # "A" or "B"
    profile: np.ndarray  # (n, 3) for shape A, (n,) for shape B

    def __post_init__(self):
        prof = np.asarray(self.profile, dtype=float)
        if self.tag == "A":
            if prof.ndim != 2 or prof.shape[1] != 3:
                raise ValueError("shape A profile must be (n, 3)")
        elif self.tag == "B":
            if prof.ndim != 1:
                raise ValueError("shape B profile must be (n,)")
        else:
            raise ValueError(f"unknown noise shape tag {self.tag!r}")
        if not np.all(np.isfinite(prof)):
            raise ValueError("noise profile must be finite")
        object.__setattr__(self, "profile", prof)

    @property
    def dimension(self) -> int:
        """Dimension of the driving Brownian motion."""
        return 1 if self.tag == "A" else 3

    @property
    def spatially_constant(self) -> bool:
        prof = self.profile
        return bool(np.all(prof == prof[0]))

    def rotation_increments(self, dW: np.ndarray) -> np.ndarray:
        """Per-node rotation vector k(x) such that the noise substep is the
        exact flow of v' = v x k."""
        if self.tag == "A":
            return self.profile * float(dW[0])
        return self.profile[:, None] * np.asarray(dW, dtype=float)
