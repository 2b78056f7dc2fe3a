"""Diffusions on the unit sphere: the constant-field limit dynamics of the
field equation, spherical Brownian motion, and the Gibbs equilibrium density.

States are (..., 3) arrays of unit vectors; all steppers are vectorized over
leading axes so ensembles of chains advance in lockstep. Each chain owns an
independent RNG stream keyed by (seed, chain index), so ensemble results do
not depend on how chains are partitioned across workers.

Sign convention: the default drift is the one the field equation induces on
spatially constant states, lam1 v x g'(v) - lam2 v x (v x g'(v)). The
equilibrium analysis (generator and Gibbs density) is consistent with the
opposite overall sign, which makes the damping term a gradient descent of the
anisotropic energy on the sphere; ``drift_sign=-1`` selects it, and the
Gibbs-sampling experiments use it so that ``gibbs_density`` is their
stationary law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import cross, normalize_rows
from .noise import path_rng, sample_brownian
from .params import AnisotropyParams
from .spde import rotate

UNIT_TOL = 1e-12


def assert_unit(v: np.ndarray) -> None:
    dev = np.max(np.abs(np.linalg.norm(v, axis=-1) - 1.0))
    if dev > UNIT_TOL:
        raise ValueError(f"state is not on the unit sphere: | |v|-1 | = {dev:.3e}")


def anisotropic_drift(
    v: np.ndarray, p: AnisotropyParams, drift_sign: float = 1.0
) -> np.ndarray:
    """Tangent drift lam1 v x g'(v) - lam2 v x (v x g'(v)), times drift_sign."""
    g = p.gprime(v)
    c1 = cross(v, g)
    return drift_sign * (p.lam1 * c1 - p.lam2 * cross(v, c1))


def sde_step_B(
    v: np.ndarray,
    p: AnisotropyParams,
    h2: float,
    dBbar: np.ndarray,
    dt: float,
    drift_sign: float = 1.0,
) -> np.ndarray:
    """One step of the sphere SDE driven by a 3D Brownian increment.

    Drift Euler with renormalization, then the exact rotation flow of
    v' = v x (h2 dBbar); the result is unit to machine precision.
    """
    if not p.is_zero():
        v = normalize_rows(v + dt * anisotropic_drift(v, p, drift_sign))
    if h2 != 0.0:
        v = rotate(v, h2 * np.asarray(dBbar, dtype=float))
    return v


def sde_step_A(
    v: np.ndarray,
    h1: np.ndarray,
    dB: float,
    p: AnisotropyParams,
    dt: float,
    drift_sign: float = 1.0,
) -> np.ndarray:
    """One step of the sphere SDE driven by a scalar increment along a fixed
    axis h1; states parallel to +-h1 are exact fixed points of the rotation."""
    if not p.is_zero():
        v = normalize_rows(v + dt * anisotropic_drift(v, p, drift_sign))
    return rotate(v, np.asarray(h1, dtype=float) * float(dB))


def spherical_brownian(
    v0: np.ndarray, dt: float, n_steps: int, seed: int, trajectory: int = 0
) -> np.ndarray:
    """Sample path of Brownian motion on the sphere started at ``v0``.

    Returns an (n_steps + 1, 3) array; driven by the rotation-increment
    construction, which is the zero-drift case of ``sde_step_B``.
    """
    v0 = np.asarray(v0, dtype=float)
    assert_unit(v0)
    path = sample_brownian(seed, dt, n_steps, dimension=3, trajectory=trajectory)
    out = np.empty((n_steps + 1, 3))
    out[0] = v0
    none = AnisotropyParams()
    for k in range(n_steps):
        out[k + 1] = sde_step_B(out[k], none, 1.0, path.increments[k], dt)
    return out


def run_chains(
    v0: np.ndarray,
    p: AnisotropyParams,
    h2: float,
    dt: float,
    n_steps: int,
    seed: int,
    chain_indices,
    *,
    drift_sign: float = 1.0,
    burn_in_steps: int = 0,
    observe_stride: int = 1,
    observer=None,
    chunk: int = 20000,
) -> np.ndarray:
    """Advance a batch of chains of the 3D-noise sphere SDE in lockstep.

    ``v0`` is (m, 3); chain i uses the RNG stream (seed, chain_indices[i]),
    so results are independent of how the batch is split across calls.
    ``observer(step, states)`` fires after every ``observe_stride``-th step
    once ``burn_in_steps`` steps have elapsed. Returns the final states.
    """
    v = np.array(v0, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    chain_indices = list(chain_indices)
    if len(chain_indices) != v.shape[0]:
        raise ValueError("one chain index per initial state is required")
    rngs = [path_rng(seed, c) for c in chain_indices]
    sqrt_dt = np.sqrt(dt)
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        incs = np.stack([rng.standard_normal((m, 3)) for rng in rngs], axis=0) * sqrt_dt
        for s in range(m):
            v = sde_step_B(v, p, h2, incs[:, s, :], dt, drift_sign)
            step = done + s + 1
            if observer is not None and step > burn_in_steps:
                if (step - burn_in_steps) % observe_stride == 0:
                    observer(step, v)
        done += m
    return v


# -- Gibbs equilibrium --------------------------------------------------------

@dataclass(frozen=True)
class GibbsSpec:
    """Parameters of the equilibrium density exp(-(lam2/h2) Ebar(v)) / Z on
    the sphere, with Ebar(v) = |D| g'(v).v."""

    lam2: float
    h2: float
    aniso: AnisotropyParams
    domain_length: float

    def __post_init__(self):
        if self.h2 == 0:
            raise ValueError("h2 must be nonzero")
        if not self.lam2 > 0:
            raise ValueError(f"lam2 must be positive, got {self.lam2}")

    def ebar(self, v: np.ndarray) -> np.ndarray:
        """Anisotropic energy of the constant field with value v."""
        v = np.asarray(v, dtype=float)
        return self.domain_length * np.sum(self.aniso.gprime(v) * v, axis=-1)

    def log_unnormalized(self, v: np.ndarray) -> np.ndarray:
        return -(self.lam2 / self.h2) * self.ebar(v)


_NORM_CACHE: dict = {}
_QUAD_NZ = 400
_QUAD_NPHI = 400  # 160000 equal-area cells


def _quadrature_points(n_z: int, n_phi: int):
    z = (np.arange(n_z) + 0.5) / n_z * 2.0 - 1.0
    phi = (np.arange(n_phi) + 0.5) / n_phi * 2.0 * np.pi - np.pi
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(np.maximum(0.0, 1.0 - zz ** 2))
    pts = np.stack([s * np.cos(pp), s * np.sin(pp), zz], axis=-1)
    area = 4.0 * np.pi / (n_z * n_phi)
    return pts, area


def _spec_key(spec: GibbsSpec):
    return (
        spec.lam2,
        spec.h2,
        spec.domain_length,
        spec.aniso.A.tobytes(),
        spec.aniso.b.tobytes(),
    )


def _normalization(spec: GibbsSpec):
    """Cached (Z, max unnormalized density) by deterministic equal-area
    quadrature on the sphere."""
    key = _spec_key(spec)
    if key not in _NORM_CACHE:
        pts, area = _quadrature_points(_QUAD_NZ, _QUAD_NPHI)
        f = np.exp(spec.log_unnormalized(pts))
        _NORM_CACHE[key] = (float(np.sum(f) * area), float(np.max(f)))
    return _NORM_CACHE[key]


def gibbs_density(v: np.ndarray, spec: GibbsSpec):
    """Equilibrium density at v with respect to the surface measure."""
    logf = spec.log_unnormalized(v)
    if not np.all(np.isfinite(logf)):
        raise ValueError("non-finite exponent in the equilibrium density")
    z, _ = _normalization(spec)
    out = np.exp(logf) / z
    return float(out) if np.ndim(out) == 0 else out


def gibbs_z_marginal(z: np.ndarray, spec: GibbsSpec, n_phi: int = 512) -> np.ndarray:
    """Marginal density of v3 on [-1, 1], by averaging over the longitude."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    phi = (np.arange(n_phi) + 0.5) / n_phi * 2.0 * np.pi
    s = np.sqrt(np.maximum(0.0, 1.0 - z ** 2))
    pts = np.stack(
        [
            s[:, None] * np.cos(phi)[None, :],
            s[:, None] * np.sin(phi)[None, :],
            np.broadcast_to(z[:, None], (z.size, n_phi)),
        ],
        axis=-1,
    )
    dens = gibbs_density(pts, spec)
    return 2.0 * np.pi * np.mean(dens, axis=-1)


def rejection_sample(spec: GibbsSpec, n: int, seed: int, trajectory: int = 0) -> np.ndarray:
    """Exact samples from the equilibrium density via uniform proposals.

    The envelope constant is the quadrature maximum of the unnormalized
    density with a 5% safety inflation.
    """
    rng = path_rng(seed, trajectory)
    _, fmax = _normalization(spec)
    envelope = 1.05 * fmax
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 64)
        z = rng.uniform(-1.0, 1.0, m)
        phi = rng.uniform(-np.pi, np.pi, m)
        s = np.sqrt(1.0 - z ** 2)
        pts = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
        accept = rng.uniform(0.0, envelope, m) < np.exp(spec.log_unnormalized(pts))
        pts = pts[accept]
        take = min(len(pts), n - filled)
        out[filled: filled + take] = pts[:take]
        filled += take
    return out


def uniform_spec(domain_length: float = 1.0) -> GibbsSpec:
    """Equilibrium spec with no anisotropy: the uniform law on the sphere."""
    return GibbsSpec(lam2=1.0, h2=1.0, aniso=AnisotropyParams(), domain_length=domain_length)


# -- CSV output ---------------------------------------------------------------

def write_states_csv(times, states, chain_ids, fh) -> None:
    """Stream sampled states: time, v1, v2, v3, trajectory_id.

    ``states`` is (n_samples, m, 3) matching ``times`` (n_samples,) and
    ``chain_ids`` (m,).
    """
    fh.write("time,v1,v2,v3,trajectory_id\n")
    for t, batch in zip(times, states):
        for cid, v in zip(chain_ids, batch):
            fh.write(f"{t:.17g},{v[0]:.17g},{v[1]:.17g},{v[2]:.17g},{cid}\n")
