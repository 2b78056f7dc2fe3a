"""Time-averaged empirical measures on the sphere.

Binning is equal-area by construction: uniform in z = cos(theta) and in
longitude, so every bin has surface area 4 pi / (n_z_bands * n_phi). Counts
are integers and accumulators merge by componentwise addition, which makes
parallel reduction exact and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyMeasureError(ValueError):
    """Distance requested from a measure with no samples."""


@dataclass
class EmpiricalSphereMeasure:
    n_z_bands: int
    n_phi: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.n_z_bands < 1 or self.n_phi < 1:
            raise ValueError("bin counts must be positive")
        if self.counts is None:
            self.counts = np.zeros((self.n_z_bands, self.n_phi), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.n_z_bands, self.n_phi):
                raise ValueError("counts shape does not match the bin layout")
            if np.any(self.counts < 0):
                raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bin_area(self) -> float:
        return 4.0 * np.pi / (self.n_z_bands * self.n_phi)

    @property
    def empirical_mass(self) -> np.ndarray:
        total = self.total
        if total == 0:
            raise EmptyMeasureError("no samples accumulated")
        return self.counts / total

    def band_edges_z(self) -> np.ndarray:
        """Band boundaries in z, from -1 to 1."""
        return np.linspace(-1.0, 1.0, self.n_z_bands + 1)

    def copy(self) -> "EmpiricalSphereMeasure":
        return EmpiricalSphereMeasure(self.n_z_bands, self.n_phi, self.counts.copy())


def bin_of(v: np.ndarray, measure: EmpiricalSphereMeasure):
    """(band, sector) indices of unit vectors; vectorized over leading axes."""
    v = np.asarray(v, dtype=float)
    band = np.floor((v[..., 2] + 1.0) / 2.0 * measure.n_z_bands).astype(np.int64)
    band = np.clip(band, 0, measure.n_z_bands - 1)
    phi = np.arctan2(v[..., 1], v[..., 0])
    sector = np.floor((phi + np.pi) / (2.0 * np.pi) * measure.n_phi).astype(np.int64)
    sector = np.clip(sector, 0, measure.n_phi - 1)
    return band, sector


def accumulate(measure: EmpiricalSphereMeasure, v: np.ndarray, weight: int = 1) -> None:
    """Add ``weight`` to the bin of each state in ``v`` (batched)."""
    weight = int(weight)
    if weight < 0:
        raise ValueError("weights must be nonnegative")
    band, sector = bin_of(v, measure)
    np.add.at(measure.counts, (band, sector), weight)


def merge(a: EmpiricalSphereMeasure, b: EmpiricalSphereMeasure) -> EmpiricalSphereMeasure:
    if (a.n_z_bands, a.n_phi) != (b.n_z_bands, b.n_phi):
        raise ValueError("cannot merge measures with different bin layouts")
    return EmpiricalSphereMeasure(a.n_z_bands, a.n_phi, a.counts + b.counts)


# -- reference masses and distances -------------------------------------------

def reference_mass(
    measure: EmpiricalSphereMeasure, density, subdiv: int = 8
) -> np.ndarray:
    """Per-bin mass of a density on the sphere by midpoint quadrature on a
    ``subdiv`` x ``subdiv`` refinement of every bin."""
    nz, nphi = measure.n_z_bands, measure.n_phi
    z = (np.arange(nz * subdiv) + 0.5) / (nz * subdiv) * 2.0 - 1.0
    phi = (np.arange(nphi * subdiv) + 0.5) / (nphi * subdiv) * 2.0 * np.pi - np.pi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(np.maximum(0.0, 1.0 - zz ** 2))
    pts = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1)
    vals = np.asarray(density(pts), dtype=float)
    cell_area = 4.0 * np.pi / (nz * subdiv * nphi * subdiv)
    fine = vals * cell_area
    return fine.reshape(nz, subdiv, nphi, subdiv).sum(axis=(1, 3))


@dataclass(frozen=True)
class MeasureDistanceReport:
    tv: float
    ks_z: float
    sample_count: int


def tv_distance(measure: EmpiricalSphereMeasure, density, subdiv: int = 8) -> float:
    """Total variation over the bins between the empirical measure and the
    binned reference density."""
    emp = measure.empirical_mass
    ref = reference_mass(measure, density, subdiv)
    return 0.5 * float(np.sum(np.abs(emp - ref)))


def ks_z_marginal(measure: EmpiricalSphereMeasure, z_density, n_quad: int = 4096) -> float:
    """Kolmogorov-Smirnov statistic on the z-marginal, evaluated at the band
    edges against the quadrature CDF of ``z_density``."""
    if measure.total == 0:
        raise EmptyMeasureError("no samples accumulated")
    emp_cdf = np.cumsum(measure.counts.sum(axis=1)) / measure.total
    zq = (np.arange(n_quad) + 0.5) / n_quad * 2.0 - 1.0
    dens = np.asarray(z_density(zq), dtype=float)
    mass = dens * (2.0 / n_quad)
    mass = mass / mass.sum()
    ref_cdf = np.cumsum(mass.reshape(measure.n_z_bands, -1).sum(axis=1))
    return float(np.max(np.abs(emp_cdf - ref_cdf)))


def distance_report(
    measure: EmpiricalSphereMeasure, density, z_density, subdiv: int = 8
) -> MeasureDistanceReport:
    return MeasureDistanceReport(
        tv=tv_distance(measure, density, subdiv),
        ks_z=ks_z_marginal(measure, z_density),
        sample_count=measure.total,
    )


def ks_critical_value(n_eff: float, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value sqrt(-ln(alpha/2)/2) / sqrt(n)."""
    return float(np.sqrt(-0.5 * np.log(alpha / 2.0)) / np.sqrt(n_eff))


def effective_sample_size(series: np.ndarray) -> float:
    """ESS of a correlated scalar chain via the initial-positive-sequence
    estimate of the integrated autocorrelation time."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return float(n)
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    tau = 1.0
    for lag in range(1, n):
        rho = float(np.dot(x[:-lag], x[lag:])) / (n * var)
        if rho <= 0.0:
            break
        tau += 2.0 * rho
    return n / tau


# -- CSV output ---------------------------------------------------------------

def write_measure_csv(measure: EmpiricalSphereMeasure, density, fh, subdiv: int = 8) -> None:
    """Dump bins: band, sector, count, area, empirical_mass, reference_mass."""
    emp = measure.empirical_mass
    ref = reference_mass(measure, density, subdiv)
    area = measure.bin_area
    fh.write("band,sector,count,area,empirical_mass,reference_mass\n")
    for i in range(measure.n_z_bands):
        for j in range(measure.n_phi):
            fh.write(
                f"{i},{j},{measure.counts[i, j]},{area:.17g},"
                f"{emp[i, j]:.17g},{ref[i, j]:.17g}\n"
            )
