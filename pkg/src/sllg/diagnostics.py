"""Executable checks of the quantitative estimates: energy inequalities,
the Poincare cross bound, H^2 half-norm growth, Lipschitz-in-initial-data
probes, stationary flatness, and the long-time synchronization experiment.

Ensemble quantities are Monte Carlo means over independent trajectories; each
report records the constants it used so reruns are comparable. Parallel
ensembles reduce per-trajectory results in trajectory order, so outputs do
not depend on the worker count.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .fields import (
    Grid1D,
    SphereField,
    cross,
    dirichlet_energy,
    first_derivative_values,
    l2_norm_sq,
    normalize_rows,
    poincare_constant,
    second_derivative_values,
    spatial_average,
)
from .noise import NoiseShape, sample_brownian
from .params import AnisotropyParams
from .sde import GibbsSpec, rejection_sample, sde_step_B
from .spde import (
    GateError,
    SolverConfig,
    TrajectoryRecord,
    drift_values,
    simulate,
    smallness_check,
)


# -- reports ------------------------------------------------------------------

@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    mc_stderr: float
    passed: bool
    k: float = 3.0
    constants: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _scheme_allowance(records: list[TrajectoryRecord]) -> float:
    """Mean accumulated Euler-truncation bound over the ensemble.

    Each trajectory carries the running sum of dt^2 * ||drift_x||^2, which
    bounds how much the dissipation quadrature can exceed the realized
    decrement of the discrete gradient energy; it vanishes linearly in dt.
    """
    vals = [
        float(r.dissipation_defect[-1])
        for r in records
        if len(r.dissipation_defect) > 0
    ]
    return float(np.mean(vals)) if vals else 0.0


def _decide(name, lhs, rhs, mc_stderr, k=3.0, allowance=0.0, constants=None) -> InequalityReport:
    constants = dict(constants or {})
    constants["allowance"] = allowance
    return InequalityReport(
        name=name,
        lhs=float(lhs),
        rhs=float(rhs),
        mc_stderr=float(mc_stderr),
        passed=bool(lhs <= rhs + k * mc_stderr + allowance),
        k=k,
        constants=constants,
    )


def report_to_dict(report) -> dict:
    def convert(x):
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        if isinstance(x, dict):
            return {k: convert(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [convert(v) for v in x]
        return x

    return convert(dataclasses.asdict(report))


def write_report_json(report, fh) -> None:
    json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
    fh.write("\n")


# -- parallel ensemble driver -------------------------------------------------

def _ensemble_worker(args):
    (u0_values, n_points, length, p, shape, cfg, horizon, seed, traj,
     sample_stride, snapshot_stride) = args
    grid = Grid1D(n_points=n_points, length=length)
    u0 = SphereField(grid, u0_values, check=False)
    return simulate(
        u0, p, shape, cfg, horizon,
        seed=seed, trajectory=traj,
        sample_stride=sample_stride, snapshot_stride=snapshot_stride,
    )


def run_ensemble(
    u0: SphereField,
    p: AnisotropyParams,
    shape: NoiseShape | None,
    cfg: SolverConfig,
    horizon: float,
    n_traj: int,
    seed: int,
    *,
    sample_stride: int = 1,
    snapshot_stride: int = 0,
    n_workers: int = 1,
) -> list[TrajectoryRecord]:
    """Simulate ``n_traj`` independent trajectories; results are returned in
    trajectory order regardless of the worker count."""
    grid = u0.grid
    jobs = [
        (u0.values, grid.n_points, grid.length, p, shape, cfg, horizon, seed, j,
         sample_stride, snapshot_stride)
        for j in range(n_traj)
    ]
    if n_workers <= 1:
        return [_ensemble_worker(job) for job in jobs]
    with get_context("fork").Pool(n_workers) as pool:
        return pool.map(_ensemble_worker, jobs)


def _profile_grad_norm_sq(profile: np.ndarray, grid: Grid1D) -> float:
    """Discrete squared L2 norm of the derivative of a noise profile."""
    prof = np.asarray(profile, dtype=float)
    if prof.ndim == 1:
        prof = prof[:, None]
    return dirichlet_energy(prof, grid.dx)


# -- energy inequalities ------------------------------------------------------

def energy_inequality(
    records: list[TrajectoryRecord],
    p: AnisotropyParams,
    shape: NoiseShape,
    *,
    k: float = 3.0,
    allowance: float = 0.0,
) -> InequalityReport:
    """Dissipation bound for the anisotropy-free dynamics with 3D noise:

        sup_r { E||u_x(r)||^2 + 2 lam2 int_0^r E||u x u_xx||^2 }
            <= E||u_x(0)||^2 + T ||h_x||^2.

    The sup applies to the combined running quantity: the underlying balance
    is E||u_x(r)||^2 + 2 lam2 int_0^r ... <= E||u_x(0)||^2 + r ||h_x||^2 for
    every r, with equality when h is spatially constant.
    """
    if not records:
        raise ValueError("empty ensemble")
    if not p.is_zero():
        raise ValueError("this bound requires zero anisotropy")
    grid = records[0].grid
    grads = np.stack([r.grad_norm_sq for r in records])  # (M, n_samples)
    cum = np.stack([r.cross_lap_int for r in records])  # running integrals
    horizon = float(records[0].times[-1])

    mean_grad = grads.mean(axis=0)
    running = grads + 2.0 * p.lam2 * cum
    lhs_terms = running.max(axis=1)  # per-path sup of the combined quantity
    lhs = float(np.max(running.mean(axis=0)))
    stderr = float(lhs_terms.std(ddof=1) / np.sqrt(len(records))) if len(records) > 1 else 0.0

    grad_h_sq = _profile_grad_norm_sq(shape.profile, grid)
    rhs = float(mean_grad[0] + horizon * grad_h_sq)
    allowance = allowance + _scheme_allowance(records)
    constants = {
        "grad_h_norm_sq": grad_h_sq,
        "horizon": horizon,
        "n_trajectories": len(records),
        "max_pathwise_increase": pathwise_monotonicity_excess(records),
    }
    return _decide("energy_inequality", lhs, rhs, stderr, k, allowance, constants)


def pathwise_monotonicity_excess(records: list[TrajectoryRecord]) -> float:
    """Largest increase of ||u_x||^2 between consecutive samples over all
    paths; exact dissipativity would make this <= 0."""
    worst = -np.inf
    for r in records:
        if len(r.grad_norm_sq) > 1:
            worst = max(worst, float(np.max(np.diff(r.grad_norm_sq))))
    return worst


def anisotropic_energy_inequality(
    records: list[TrajectoryRecord],
    p: AnisotropyParams,
    shape: NoiseShape,
    *,
    k: float = 3.0,
    allowance: float = 0.0,
) -> InequalityReport:
    """Dissipation bound with anisotropy:

        sup_r { E||u_x||^2 + (3 lam2 / 2) int_0^r E||u x u_xx||^2 }
            <= E||u_x(0)||^2 + T [ ||h_x||^2 + (sup|A_ij|^2 + |b|^2) C ],

    with C = (8/3)(lam1^2/lam2 + lam2) from the weighted-Young choices
    eps = lam2/lam1^2 and eps = 1/lam2 in the absorption step. As in
    ``energy_inequality`` the sup applies to the combined running quantity.
    """
    if not records:
        raise ValueError("empty ensemble")
    grid = records[0].grid
    grads = np.stack([r.grad_norm_sq for r in records])
    cum = np.stack([r.cross_lap_int for r in records])
    horizon = float(records[0].times[-1])

    c_const = (8.0 / 3.0) * (p.lam1 ** 2 / p.lam2 + p.lam2)
    aniso_term = (float(np.max(np.abs(p.A)) ** 2) + float(np.dot(p.b, p.b))) * c_const
    grad_h_sq = _profile_grad_norm_sq(shape.profile, grid)

    mean_grad = grads.mean(axis=0)
    running = grads + 1.5 * p.lam2 * cum
    lhs = float(np.max(running.mean(axis=0)))
    per_path = running.max(axis=1)
    stderr = float(per_path.std(ddof=1) / np.sqrt(len(records))) if len(records) > 1 else 0.0
    rhs = float(mean_grad[0] + horizon * (grad_h_sq + aniso_term))
    allowance = allowance + _scheme_allowance(records)
    constants = {
        "C_lam1_lam2": c_const,
        "grad_h_norm_sq": grad_h_sq,
        "anisotropy_term": aniso_term,
        "horizon": horizon,
        "n_trajectories": len(records),
    }
    return _decide("anisotropic_energy_inequality", lhs, rhs, stderr, k, allowance, constants)


def improved_anisotropic_inequality(
    records: list[TrajectoryRecord],
    p: AnisotropyParams,
    shape: NoiseShape,
    *,
    k: float = 3.0,
    allowance: float = 0.0,
) -> InequalityReport:
    """Sharpened bound under the smallness gate (scalar-noise setting):

        sup_r { E||u_x||^2 + C int_0^r E||u x u_x||^2 + lam2 int_0^r E||u x u_xx||^2 }
            <= E||u_x(0)||^2 + T ||h_x||^2,

    with C = lam2/C_p - (4 lam2 Gbar + 2 |lam1| sup|A_ij|^2) from the
    Poincare absorption step. Requires snapshots on every sample to build
    the ||u x u_x||^2 running time integral; as in ``energy_inequality``
    the sup applies to the combined running quantity.
    """
    if not records:
        raise ValueError("empty ensemble")
    grid = records[0].grid
    gate = smallness_check(p, grid.length)
    if not gate.passed:
        raise GateError(
            f"smallness gate failed: Gbar={gate.gbar:g} >= threshold {gate.threshold:g}"
        )
    cp = poincare_constant(grid.length)
    c_const = p.lam2 / cp - (4.0 * p.lam2 * p.gbar + 2.0 * abs(p.lam1) * float(np.max(np.abs(p.A)) ** 2))

    grads = np.stack([r.grad_norm_sq for r in records])
    cum = np.stack([r.cross_lap_int for r in records])
    horizon = float(records[0].times[-1])

    cross_grad_cum = np.empty_like(grads)
    for i, r in enumerate(records):
        if len(r.snapshots) != len(r.times):
            raise ValueError("improved bound needs snapshots at every sample")
        vals = np.array([
            l2_norm_sq(cross(s, first_derivative_values(s, grid.dx)), grid.dx)
            for s in r.snapshots
        ])
        cross_grad_cum[i] = np.concatenate([
            [0.0],
            np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(r.snapshot_times)),
        ])

    mean_grad = grads.mean(axis=0)
    running = grads + c_const * cross_grad_cum + p.lam2 * cum
    lhs = float(np.max(running.mean(axis=0)))
    per_path = running.max(axis=1)
    stderr = float(per_path.std(ddof=1) / np.sqrt(len(records))) if len(records) > 1 else 0.0
    grad_h_sq = _profile_grad_norm_sq(shape.profile, grid)
    rhs = float(mean_grad[0] + horizon * grad_h_sq)
    allowance = allowance + _scheme_allowance(records)
    constants = {
        "C_lam1_lam2": c_const,
        "poincare_constant": cp,
        "gbar": p.gbar,
        "smallness_ratio": gate.ratio,
        "grad_h_norm_sq": grad_h_sq,
        "horizon": horizon,
        "n_trajectories": len(records),
    }
    return _decide("improved_anisotropic_inequality", lhs, rhs, stderr, k, allowance, constants)


def h2_halfnorm_growth(records: list[TrajectoryRecord]) -> InequalityReport:
    """Affine envelope for int_0^t E[ ||u_xx||_{L2}^{1/2} ] dr.

    Reports the minimal C with the integral <= C E||u_x(0)||^2 + C t over the
    sampled horizon; passes iff that C is finite.
    """
    if not records:
        raise ValueError("empty ensemble")
    grid = records[0].grid
    times = records[0].times
    vals = np.zeros((len(records), len(times)))
    for i, r in enumerate(records):
        if len(r.snapshots) != len(r.times):
            raise ValueError("growth fit needs snapshots at every sample")
        vals[i] = [
            l2_norm_sq(second_derivative_values(s, grid.dx), grid.dx) ** 0.25
            for s in r.snapshots
        ]
    mean_vals = vals.mean(axis=0)
    cum = np.concatenate([
        [0.0],
        np.cumsum(0.5 * (mean_vals[1:] + mean_vals[:-1]) * np.diff(times)),
    ])
    grad0 = float(np.mean([r.grad_norm_sq[0] for r in records]))
    denom = grad0 + times[1:]
    minimal_c = float(np.max(cum[1:] / denom)) if len(times) > 1 else 0.0
    lhs = float(cum[-1])
    rhs = float(minimal_c * (grad0 + times[-1]))
    return _decide(
        "h2_halfnorm_growth", lhs, rhs, 0.0,
        constants={"minimal_C": minimal_c, "initial_grad_norm_sq": grad0,
                   "horizon": float(times[-1]), "n_trajectories": len(records)},
    )


# -- pointwise checks ---------------------------------------------------------

def poincare_cross_check(u: SphereField) -> float:
    """Margin of ||u x u_xx|| >= (1/C_p) ||u x u_x||; nonnegative passes."""
    dx = u.grid.dx
    v = u.values
    cp = poincare_constant(u.grid.length)
    lhs = np.sqrt(l2_norm_sq(cross(v, second_derivative_values(v, dx)), dx))
    rhs = np.sqrt(l2_norm_sq(cross(v, first_derivative_values(v, dx)), dx)) / cp
    return float(lhs - rhs)


# -- Lipschitz-in-initial-data probe ------------------------------------------

def _h1_norm(values: np.ndarray, dx: float) -> float:
    return float(np.sqrt(
        l2_norm_sq(values, dx) + l2_norm_sq(first_derivative_values(values, dx), dx)
    ))


@dataclass
class FellerReport:
    times: np.ndarray
    log_ratio: np.ndarray  # (n_paths, n_samples)
    intercept: float
    slope: float
    margin: float
    fraction_bounded: float
    passed: bool


def _feller_worker(args):
    (u0_values, v0_values, n_points, length, p, shape, cfg, horizon, seed, traj,
     sample_stride) = args
    grid = Grid1D(n_points=n_points, length=length)
    path = sample_brownian(seed, cfg.dt, int(round(horizon / cfg.dt)),
                           shape.dimension, traj)
    rec_u = simulate(SphereField(grid, u0_values, check=False), p, shape, cfg,
                     horizon, path=path, sample_stride=sample_stride, snapshot_stride=1)
    rec_v = simulate(SphereField(grid, v0_values, check=False), p, shape, cfg,
                     horizon, path=path, sample_stride=sample_stride, snapshot_stride=1)
    gaps = np.array([
        _h1_norm(a - b, grid.dx) for a, b in zip(rec_u.snapshots, rec_v.snapshots)
    ])
    return rec_u.snapshot_times, gaps


def feller_probe(
    u0: SphereField,
    v0: SphereField,
    p: AnisotropyParams,
    shape: NoiseShape,
    cfg: SolverConfig,
    horizon: float,
    n_paths: int,
    seed: int,
    *,
    sample_stride: int = 1,
    n_workers: int = 1,
    required_fraction: float = 0.95,
) -> FellerReport:
    """Shared-noise two-trajectory probe of continuity in the initial data.

    Records r(t) = ||u_t - v_t||_{H1} / ||u_0 - v_0||_{H1} per path. The
    exponential envelope a + c t + margin is fitted by least squares on the
    even-indexed half of the ensemble; the margin is the largest fit-half
    residual plus one residual standard deviation, so the fit half is
    dominated by construction and the held-out half probes whether the
    envelope generalizes. Scored on every path.
    """
    grid = u0.grid
    gap0 = _h1_norm(u0.values - v0.values, grid.dx)
    if gap0 == 0.0:
        raise ValueError("initial fields coincide; the ratio is undefined")
    jobs = [
        (u0.values, v0.values, grid.n_points, grid.length, p, shape, cfg, horizon,
         seed, j, sample_stride)
        for j in range(n_paths)
    ]
    if n_workers <= 1:
        results = [_feller_worker(job) for job in jobs]
    else:
        with get_context("fork").Pool(n_workers) as pool:
            results = pool.map(_feller_worker, jobs)
    times = results[0][0]
    log_ratio = np.log(np.stack([gaps for _, gaps in results]) / gap0)

    fit_rows = log_ratio[::2]
    tt = np.tile(times, fit_rows.shape[0])
    yy = fit_rows.ravel()
    slope, intercept = np.polyfit(tt, yy, 1)
    resid = yy - (intercept + slope * tt)
    margin = float(np.max(resid)) + float(np.std(resid))
    envelope = intercept + slope * times + margin
    bounded = np.all(log_ratio <= envelope[None, :], axis=1)
    fraction = float(np.mean(bounded))
    return FellerReport(
        times=times,
        log_ratio=log_ratio,
        intercept=float(intercept),
        slope=float(slope),
        margin=margin,
        fraction_bounded=fraction,
        passed=fraction >= required_fraction,
    )


# -- stationary flatness ------------------------------------------------------

@dataclass
class FlatnessReport:
    max_grad_norm: float
    max_drift_from_start: float
    initial_value: np.ndarray
    passed: bool
    tolerance: float = 1e-10


def stationary_flatness(
    shape: NoiseShape,
    p: AnisotropyParams,
    grid: Grid1D,
    cfg: SolverConfig,
    horizon: float,
    seed: int,
    *,
    gibbs: GibbsSpec | None = None,
    antipodal: bool = False,
    sample_stride: int = 100,
) -> FlatnessReport:
    """Evolve a constant initial field drawn from the reference stationary law
    and report how far it moves off the constant subspace.

    Scalar-profile noise with zero anisotropy freezes the fields +-h/|h|;
    3D noise requires a ``gibbs`` spec to draw the initial direction.
    """
    if not shape.spatially_constant:
        raise ValueError("flatness requires a spatially constant noise profile")
    if shape.tag == "A":
        if not p.is_zero():
            raise ValueError("the frozen fixed points require zero anisotropy")
        v = shape.profile[0]
        v = v / np.linalg.norm(v)
        if antipodal:
            v = -v
    else:
        if gibbs is None:
            raise ValueError("3D-noise flatness needs the equilibrium spec")
        gate = smallness_check(p, grid.length)
        if not gate.passed:
            raise GateError(
                f"smallness gate failed: Gbar={gate.gbar:g} >= {gate.threshold:g}"
            )
        v = rejection_sample(gibbs, 1, seed, trajectory=1_000_003)[0]
    u0 = SphereField.constant(grid, v)
    rec = simulate(u0, p, shape, cfg, horizon, seed=seed, sample_stride=sample_stride)
    max_grad = float(np.sqrt(np.max(rec.grad_norm_sq)))
    drift_from_start = float(np.max(np.abs(rec.final_values - u0.values)))
    frozen_expected = shape.tag == "A"
    passed = max_grad <= 1e-10 and (not frozen_expected or drift_from_start <= 1e-12)
    return FlatnessReport(
        max_grad_norm=max_grad,
        max_drift_from_start=drift_from_start,
        initial_value=np.asarray(v),
        passed=passed,
    )


# -- synchronization ----------------------------------------------------------

@dataclass
class SyncReport:
    horizons: np.ndarray
    sup_deviation: np.ndarray  # L1-over-paths deviation statistic per horizon
    alpha_estimates: np.ndarray
    alpha_bound: float
    alpha_bound_ok: bool
    tail_bounds: np.ndarray  # per-path energy-scale bound on the truncated tail
    decay_ratio: float
    passed: bool


def _sync_worker(args):
    (u0_values, n_points, length, p, h2, cfg, horizon, seed, traj, sample_stride) = args
    grid = Grid1D(n_points=n_points, length=length)
    n_steps = int(round(horizon / cfg.dt))
    path = sample_brownian(seed, cfg.dt, n_steps, 3, traj)
    shape = NoiseShape("B", np.full(grid.n_points, h2))
    u0 = SphereField(grid, u0_values, check=False)
    rec = simulate(u0, p, shape, cfg, horizon, path=path,
                   sample_stride=sample_stride, snapshot_stride=1)

    # coupled sphere Brownian motion: same increments, started at the mean
    b = normalize_rows(spatial_average(u0)[None, :])[0]
    zero = AnisotropyParams()
    b_samples = [b.copy()]
    done = 0
    for target in np.rint(rec.snapshot_times[1:] / cfg.dt).astype(int):
        while done < target:
            b = sde_step_B(b, zero, h2, path.increments[done], cfg.dt)
            done += 1
        b_samples.append(b.copy())
    b_samples = np.stack(b_samples)

    dx = grid.dx
    psi = np.array([
        l2_norm_sq(s - bb[None, :], dx) / length
        for s, bb in zip(rec.snapshots, b_samples)
    ])
    integrand = np.array([
        (1.0 / length) * l2_norm_sq_weighted(drift_values(s, dx, p), s - bb[None, :], dx)
        for s, bb in zip(rec.snapshots, b_samples)
    ])
    # chain rule: d|u-B|^2 = 2 (du - dB).(u-B), and the rotational noise
    # cancels in the inner product, so psi' = (2/|D|) int b(u).(u-B) dx
    alpha = psi[0] + 2.0 * np.trapezoid(integrand, rec.snapshot_times)
    tail = (poincare_constant(length) / length) * float(rec.grad_norm_sq[-1])
    return rec.snapshot_times, psi, float(alpha), tail, float(rec.grad_norm_sq[0])


def l2_norm_sq_weighted(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    """Trapezoid integral of the pointwise inner product a . b."""
    prod = np.sum(a * b, axis=-1)
    return float(dx * (np.sum(prod) - 0.5 * (prod[0] + prod[-1])))


def sync_experiment(
    u0: SphereField,
    p: AnisotropyParams,
    h2: float,
    cfg: SolverConfig,
    horizons,
    n_paths: int,
    seed: int,
    *,
    sample_stride: int = 50,
    n_workers: int = 1,
) -> SyncReport:
    """Couple the field dynamics with a sphere Brownian motion driven by the
    same increments and track psi(t) = (1/|D|) int |u_t - B_t|^2 dx.

    The per-path constant alpha is psi(0) plus the time integral of
    (1/|D|) int b(u_r).(u_r - B_r) dx truncated at the largest horizon; the
    reported tail bound is the energy scale (C_p/|D |) ||u_x(T)||^2 of the
    discarded remainder. The deviation statistic at horizon T is the sup over
    sampled t >= T of the L1-over-paths distance |psi(t) - alpha|.
    """
    if not p.is_zero():
        raise ValueError("the synchronization statement requires zero anisotropy")
    horizons = np.asarray(sorted(horizons), dtype=float)
    t_max = float(horizons[-1])
    grid = u0.grid
    jobs = [
        (u0.values, grid.n_points, grid.length, p, h2, cfg, t_max, seed, j, sample_stride)
        for j in range(n_paths)
    ]
    if n_workers <= 1:
        results = [_sync_worker(job) for job in jobs]
    else:
        with get_context("fork").Pool(n_workers) as pool:
            results = pool.map(_sync_worker, jobs)

    times = results[0][0]
    psi = np.stack([r[1] for r in results])
    alphas = np.array([r[2] for r in results])
    tails = np.array([r[3] for r in results])
    grad0 = results[0][4]

    deviation_t = np.mean(np.abs(psi - alphas[:, None]), axis=0)
    sup_dev = np.array([
        float(np.max(deviation_t[times >= t - 1e-12])) for t in horizons
    ])
    cp = poincare_constant(grid.length)
    alpha_bound = 4.0 + (cp / grid.length) * grad0
    alpha_ok = bool(np.all(np.abs(alphas) <= alpha_bound))
    ratio = float(sup_dev[-1] / sup_dev[0]) if sup_dev[0] > 0 else 0.0
    return SyncReport(
        horizons=horizons,
        sup_deviation=sup_dev,
        alpha_estimates=alphas,
        alpha_bound=float(alpha_bound),
        alpha_bound_ok=alpha_ok,
        tail_bounds=tails,
        decay_ratio=ratio,
        passed=alpha_ok and ratio <= 0.2,
    )
