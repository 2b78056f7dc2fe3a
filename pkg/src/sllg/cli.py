"""Configuration-driven experiment runner.

Exit codes: 0 success, 2 invalid configuration, 3 safety gate failed
(CFL/smallness), 4 numerical blow-up, 5 acceptance check failed.
The worker count comes from the SLLG_WORKERS environment variable
(default 1); all parallel reductions are merge-based and order-independent,
so outputs are byte-identical across worker counts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, diagnostics, measures, noise, sde, spde
from .config import ConfigError
from .fields import (
    Grid1D,
    SphereField,
    cross,
    laplacian_identity_residual,
    normalize_rows,
)
from .measures import EmpiricalSphereMeasure
from .params import AnisotropyParams
from .sde import GibbsSpec, gibbs_density, gibbs_z_marginal
from .spde import BlowUpError, GateError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3
EXIT_BLOWUP = 4
EXIT_CHECK = 5


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SLLG_WORKERS", "1")))
    except ValueError:
        return 1


def _write_manifest(outdir: Path, command: str, cfg: dict, seed: int) -> None:
    manifest = {
        "command": command,
        "config_hash": cfgmod.config_hash(cfg),
        "seed": seed,
        "workers": _workers(),
        "versions": {"sllg": __version__, "numpy": np.__version__},
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _gibbs_spec(cfg: dict, grid: Grid1D, p: AnisotropyParams) -> GibbsSpec:
    return GibbsSpec(
        lam2=p.lam2,
        h2=float(cfgmod.get(cfg, "noise.amplitude", 1.0)),
        aniso=p,
        domain_length=grid.length,
    )


# -- subcommands --------------------------------------------------------------

def cmd_simulate_spde(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    shape = cfgmod.build_noise(cfg, grid)
    solver = cfgmod.build_solver(cfg)
    u0 = cfgmod.build_initial(cfg, grid)
    report = spde.cfl_check(p, grid, solver.dt, solver.cfl_safety)
    if not report.passed:
        print(
            f"gate failed: dt={report.dt:g} above CFL bound; "
            f"maximal admissible dt is {report.dt_max:g}",
            file=sys.stderr,
        )
        return EXIT_GATE
    n_traj = int(cfgmod.get(cfg, "run.n_trajectories", 1))
    records = diagnostics.run_ensemble(
        u0, p, shape, solver,
        float(cfgmod.get(cfg, "run.horizon", required=True)),
        n_traj, seed,
        sample_stride=int(cfgmod.get(cfg, "run.sample_stride", 1)),
        snapshot_stride=int(cfgmod.get(cfg, "run.snapshot_stride", 0)),
        n_workers=_workers(),
    )
    for j, rec in enumerate(records):
        with open(outdir / f"trajectory_{j}_summary.csv", "w") as fh:
            spde.write_summary_csv(rec, fh)
        if rec.snapshots:
            with open(outdir / f"trajectory_{j}_fields.csv", "w") as fh:
                spde.write_fields_csv(rec, fh)
    return EXIT_OK


def cmd_simulate_sde(cfg: dict, outdir: Path, seed: int) -> int:
    p = cfgmod.build_params(cfg)
    h2 = float(cfgmod.get(cfg, "noise.amplitude", 1.0))
    dt = float(cfgmod.get(cfg, "solver.dt", required=True))
    horizon = float(cfgmod.get(cfg, "run.horizon", required=True))
    n_chains = int(cfgmod.get(cfg, "run.n_trajectories", 1))
    stride = int(cfgmod.get(cfg, "run.sample_stride", 1))
    sign = float(cfgmod.get(cfg, "run.drift_sign", 1.0))
    direction = np.asarray(
        cfgmod.get(cfg, "run.initial_direction", [0.0, 0.0, 1.0]), dtype=float
    )
    v0 = np.tile(direction / np.linalg.norm(direction), (n_chains, 1))
    n_steps = int(round(horizon / dt))

    sampled_times = []
    sampled_states = []

    def observer(step, states):
        sampled_times.append(step * dt)
        sampled_states.append(states.copy())

    sde.run_chains(
        v0, p, h2, dt, n_steps, seed, range(n_chains),
        drift_sign=sign, observe_stride=stride, observer=observer,
    )
    with open(outdir / "sde_states.csv", "w") as fh:
        sde.write_states_csv(sampled_times, sampled_states, range(n_chains), fh)
    return EXIT_OK


def _kb_worker(args):
    (chain_ids, p, h2, dt, n_steps, seed, sign, burn_steps, stride, nz, nphi) = args
    direction = np.array([0.0, 0.0, 1.0])
    v0 = np.tile(direction, (len(chain_ids), 1))
    local = EmpiricalSphereMeasure(nz, nphi)
    z_series = [[] for _ in chain_ids]

    def observer(step, states):
        measures.accumulate(local, states)
        for i in range(len(chain_ids)):
            z_series[i].append(states[i, 2])

    sde.run_chains(
        v0, p, h2, dt, n_steps, seed, chain_ids,
        drift_sign=sign, burn_in_steps=burn_steps,
        observe_stride=stride, observer=observer,
    )
    return local, [np.asarray(z) for z in z_series]


def cmd_kb_measure(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    h2 = float(cfgmod.get(cfg, "noise.amplitude", 1.0))
    dt = float(cfgmod.get(cfg, "solver.dt", required=True))
    horizon = float(cfgmod.get(cfg, "run.horizon", required=True))
    burn_in = float(cfgmod.get(cfg, "run.burn_in", 0.0))
    n_chains = int(cfgmod.get(cfg, "run.n_trajectories", 1))
    stride = int(cfgmod.get(cfg, "run.sample_stride", 100))
    sign = float(cfgmod.get(cfg, "run.drift_sign", -1.0))
    nz = int(cfgmod.get(cfg, "measure.n_z_bands", 16))
    nphi = int(cfgmod.get(cfg, "measure.n_phi", 16))

    n_steps = int(round((horizon + burn_in) / dt))
    burn_steps = int(round(burn_in / dt))
    workers = _workers()
    groups = [list(range(n_chains))[w::workers] for w in range(workers)]
    groups = [g for g in groups if g]
    jobs = [
        (g, p, h2, dt, n_steps, seed, sign, burn_steps, stride, nz, nphi)
        for g in groups
    ]
    if len(jobs) <= 1:
        results = [_kb_worker(job) for job in jobs]
    else:
        with get_context("fork").Pool(len(jobs)) as pool:
            results = pool.map(_kb_worker, jobs)

    total = EmpiricalSphereMeasure(nz, nphi)
    z_by_chain: dict[int, np.ndarray] = {}
    for (g, *_), (local, z_series) in zip(jobs, results):
        total = measures.merge(total, local)
        for cid, z in zip(g, z_series):
            z_by_chain[cid] = z

    spec = _gibbs_spec(cfg, grid, p)
    density = lambda v: gibbs_density(v, spec)  # noqa: E731
    z_density = lambda z: gibbs_z_marginal(z, spec)  # noqa: E731
    dist = measures.distance_report(total, density, z_density)
    ess = float(sum(measures.effective_sample_size(z_by_chain[c]) for c in sorted(z_by_chain)))
    ks_crit = measures.ks_critical_value(ess)

    with open(outdir / "measure.csv", "w") as fh:
        measures.write_measure_csv(total, density, fh)
    payload = {
        "tv": dist.tv,
        "ks_z": dist.ks_z,
        "sample_count": dist.sample_count,
        "effective_sample_size": ess,
        "ks_critical_1pct": ks_crit,
    }
    with open(outdir / "distance.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    tv_max = cfgmod.get(cfg, "measure.tv_max")
    ks_factor = cfgmod.get(cfg, "measure.ks_max_factor")
    if tv_max is not None and dist.tv > float(tv_max):
        print(f"check failed: tv={dist.tv:g} > {float(tv_max):g}", file=sys.stderr)
        return EXIT_CHECK
    if ks_factor is not None and dist.ks_z > float(ks_factor) * ks_crit:
        print(
            f"check failed: ks_z={dist.ks_z:g} > {float(ks_factor):g} x {ks_crit:g}",
            file=sys.stderr,
        )
        return EXIT_CHECK
    return EXIT_OK


def cmd_check_invariants(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    x = grid.x
    u = SphereField(grid, np.stack([np.cos(x), np.sin(x), np.zeros_like(x)], axis=-1))
    rng = np.random.default_rng(seed)
    checks = {}

    a, b = rng.standard_normal(3), rng.standard_normal(3)
    checks["cross_antisymmetry"] = float(np.max(np.abs(cross(a, b) + cross(b, a))))
    checks["laplacian_identity_residual"] = laplacian_identity_residual(u)
    d = spde.drift(u, p)
    checks["drift_tangency"] = float(np.max(np.abs(np.sum(d * u.values, axis=1))))
    checks["drift_equivalent_residual"] = spde.drift_equivalent_residual(u)
    checks["poincare_margin"] = diagnostics.poincare_cross_check(u)

    path = noise.sample_brownian(seed, 1e-3, 256, 3)
    sample = noise.second_level(path, path.times[::16])
    checks["chen_residual"] = noise.chen_residual(sample)
    checks["geometricity_residual"] = noise.geometricity_residual(sample)
    checks["antisymmetry_residual"] = noise.antisymmetry_residual(sample)

    tolerances = {
        "cross_antisymmetry": 1e-12,
        "laplacian_identity_residual": 10.0 * grid.dx ** 2,
        "drift_tangency": 1e-12,
        "drift_equivalent_residual": 10.0 * grid.dx ** 2,
        "poincare_margin": -1e-9,
        "chen_residual": 1e-12,
        "geometricity_residual": 1e-12,
        "antisymmetry_residual": 1e-12,
    }
    results = {
        name: {
            "value": checks[name],
            "tolerance": tolerances[name],
            "passed": checks[name] >= tolerances[name]
            if name == "poincare_margin"
            else checks[name] <= tolerances[name],
        }
        for name in checks
    }
    with open(outdir / "invariants.json", "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK if all(r["passed"] for r in results.values()) else EXIT_CHECK


def cmd_inequality(cfg: dict, outdir: Path, seed: int, name: str) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    shape = cfgmod.build_noise(cfg, grid)
    solver = cfgmod.build_solver(cfg)
    u0 = cfgmod.build_initial(cfg, grid)
    if shape is None:
        raise ConfigError("inequality runs need a noise shape")
    needs_snapshots = name in ("improved", "h2-growth")
    if name == "improved":
        gate = spde.smallness_check(p, grid.length)
        if not gate.passed:
            print(
                f"gate failed: anisotropy size {gate.gbar:g} is not below the "
                f"threshold {gate.threshold:g}",
                file=sys.stderr,
            )
            return EXIT_GATE
    records = diagnostics.run_ensemble(
        u0, p, shape, solver,
        float(cfgmod.get(cfg, "run.horizon", required=True)),
        int(cfgmod.get(cfg, "run.n_trajectories", 1)), seed,
        sample_stride=int(cfgmod.get(cfg, "run.sample_stride", 1)),
        snapshot_stride=1 if needs_snapshots else 0,
        n_workers=_workers(),
    )
    allowance = float(cfgmod.get(cfg, "run.allowance", 0.0))
    if name == "energy":
        report = diagnostics.energy_inequality(records, p, shape, allowance=allowance)
    elif name == "anisotropic":
        report = diagnostics.anisotropic_energy_inequality(
            records, p, shape, allowance=allowance
        )
    elif name == "improved":
        report = diagnostics.improved_anisotropic_inequality(
            records, p, shape, allowance=allowance
        )
    elif name == "h2-growth":
        report = diagnostics.h2_halfnorm_growth(records)
    else:
        raise ConfigError(f"unknown inequality {name!r}")
    with open(outdir / f"inequality_{name}.json", "w") as fh:
        diagnostics.write_report_json(report, fh)
    with open(outdir / f"inequality_{name}_series.csv", "w") as fh:
        fh.write("time,mean_grad_norm_sq,mean_cross_lap_int,mean_energy\n")
        times = records[0].times
        g = np.mean([r.grad_norm_sq for r in records], axis=0)
        c = np.mean([r.cross_lap_int for r in records], axis=0)
        e = np.mean([r.energy for r in records], axis=0)
        for row in zip(times, g, c, e):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_sync(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    solver = cfgmod.build_solver(cfg)
    u0 = cfgmod.build_initial(cfg, grid)
    h2 = float(cfgmod.get(cfg, "noise.amplitude", 1.0))
    horizons = cfgmod.get(cfg, "sync.horizons", [0.0, 1.0, 2.0, 4.0, 8.0])
    report = diagnostics.sync_experiment(
        u0, p, h2, solver,
        [float(t) for t in np.atleast_1d(horizons)],
        int(cfgmod.get(cfg, "run.n_trajectories", 8)), seed,
        sample_stride=int(cfgmod.get(cfg, "run.sample_stride", 50)),
        n_workers=_workers(),
    )
    with open(outdir / "sync.json", "w") as fh:
        diagnostics.write_report_json(report, fh)
    with open(outdir / "sync_decay.csv", "w") as fh:
        fh.write("horizon,sup_deviation\n")
        for t, d in zip(report.horizons, report.sup_deviation):
            fh.write(f"{t:.17g},{d:.17g}\n")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_feller_probe(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    shape = cfgmod.build_noise(cfg, grid)
    solver = cfgmod.build_solver(cfg)
    u0 = cfgmod.build_initial(cfg, grid)
    if shape is None:
        raise ConfigError("the probe needs a noise shape")
    eps = float(cfgmod.get(cfg, "run.perturbation", 1e-3))
    v0 = perturbed_field(u0, eps)
    report = diagnostics.feller_probe(
        u0, v0, p, shape, solver,
        float(cfgmod.get(cfg, "run.horizon", 1.0)),
        int(cfgmod.get(cfg, "run.n_trajectories", 16)), seed,
        sample_stride=int(cfgmod.get(cfg, "run.sample_stride", 50)),
        n_workers=_workers(),
    )
    payload = {
        "intercept": report.intercept,
        "slope": report.slope,
        "margin": report.margin,
        "fraction_bounded": report.fraction_bounded,
        "passed": report.passed,
    }
    with open(outdir / "feller.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(outdir / "feller_ratio.csv", "w") as fh:
        fh.write("time,mean_log_ratio,max_log_ratio\n")
        mean_lr = report.log_ratio.mean(axis=0)
        max_lr = report.log_ratio.max(axis=0)
        for row in zip(report.times, mean_lr, max_lr):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return EXIT_OK if report.passed else EXIT_CHECK


def perturbed_field(u0: SphereField, eps: float) -> SphereField:
    """Deterministic smooth perturbation of size about eps in H^1."""
    grid = u0.grid
    x = grid.x / grid.length
    bump = np.stack([
        np.sin(np.pi * x), np.cos(np.pi * x), np.sin(2.0 * np.pi * x)
    ], axis=-1)
    return SphereField(grid, normalize_rows(u0.values + eps * bump))


def cmd_flatness(cfg: dict, outdir: Path, seed: int) -> int:
    grid = cfgmod.build_grid(cfg)
    p = cfgmod.build_params(cfg)
    shape = cfgmod.build_noise(cfg, grid)
    solver = cfgmod.build_solver(cfg)
    if shape is None:
        raise ConfigError("flatness needs a noise shape")
    gibbs = _gibbs_spec(cfg, grid, p) if shape.tag == "B" else None
    report = diagnostics.stationary_flatness(
        shape, p, grid, solver,
        float(cfgmod.get(cfg, "run.horizon", 1.0)), seed,
        gibbs=gibbs,
        antipodal=bool(cfgmod.get(cfg, "run.antipodal", False)),
        sample_stride=int(cfgmod.get(cfg, "run.sample_stride", 100)),
    )
    with open(outdir / "flatness.json", "w") as fh:
        diagnostics.write_report_json(report, fh)
    return EXIT_OK if report.passed else EXIT_CHECK


# -- entry point --------------------------------------------------------------

COMMANDS = {
    "simulate-spde": cmd_simulate_spde,
    "simulate-sde": cmd_simulate_sde,
    "kb-measure": cmd_kb_measure,
    "check-invariants": cmd_check_invariants,
    "sync": cmd_sync,
    "feller-probe": cmd_feller_probe,
    "flatness": cmd_flatness,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sllg",
        description="Structure-preserving simulator and diagnostics for the "
        "stochastic Landau-Lifschitz-Gilbert equation in one dimension.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["inequality"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out")
        if name == "inequality":
            sp.add_argument(
                "--name",
                required=True,
                choices=["energy", "anisotropic", "improved", "h2-growth"],
            )
    args = parser.parse_args(argv)

    try:
        cfg = cfgmod.load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seed = args.seed if args.seed is not None else int(cfgmod.get(cfg, "noise.seed", 0))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "inequality":
            status = cmd_inequality(cfg, outdir, seed, args.name)
        else:
            status = COMMANDS[args.command](cfg, outdir, seed)
        _write_manifest(outdir, args.command, cfg, seed)
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GateError as exc:
        print(f"gate failed: {exc}", file=sys.stderr)
        return EXIT_GATE
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    raise SystemExit(main())
