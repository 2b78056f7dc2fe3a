import json
import os

import pytest

from sllg.cli import main

BASE = """
grid.n_points = 32
grid.length = 1.0
params.lam2 = 1.0
noise.shape = B
noise.profile = constant
noise.amplitude = 1.0
solver.dt = 2e-4
run.initial = tilted-wave
run.horizon = 0.02
run.n_trajectories = 2
run.sample_stride = 20
"""


def run_cli(tmp_path, command, cfg_text, extra=(), name="run"):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(cfg_text)
    out = tmp_path / f"{name}_out"
    argv = [command, "--config", str(cfg), "--out", str(out), *extra]
    return main(argv), out


def test_simulate_spde_artifacts(tmp_path):
    status, out = run_cli(tmp_path, "simulate-spde", BASE)
    assert status == 0
    assert (out / "trajectory_0_summary.csv").exists()
    assert (out / "trajectory_1_summary.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate-spde"
    assert "config_hash" in manifest
    header = (out / "trajectory_0_summary.csv").read_text().splitlines()[0]
    assert header == "time,grad_norm_sq,cross_lap_int,energy"


def test_simulate_spde_fields_csv_when_snapshots_requested(tmp_path):
    status, out = run_cli(
        tmp_path, "simulate-spde", BASE + "run.snapshot_stride = 1\n"
    )
    assert status == 0
    header = (out / "trajectory_0_fields.csv").read_text().splitlines()[0]
    assert header == "time,node_index,u1,u2,u3"


def test_missing_config_file(tmp_path):
    assert main(["simulate-spde", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_malformed_config(tmp_path):
    status, _ = run_cli(tmp_path, "simulate-spde", "this is not a config")
    assert status == 2


def test_missing_required_key(tmp_path):
    status, _ = run_cli(
        tmp_path, "simulate-spde", BASE.replace("run.horizon = 0.02", "")
    )
    assert status == 2


def test_cfl_gate_exit_code(tmp_path):
    status, _ = run_cli(
        tmp_path, "simulate-spde", BASE.replace("solver.dt = 2e-4", "solver.dt = 0.1")
    )
    assert status == 3


def test_simulate_sde(tmp_path):
    cfg = """
grid.n_points = 8
grid.length = 1.0
params.lam2 = 1.0
params.A = 0 0 0 0 0 0 0 0 2
solver.dt = 1e-3
run.horizon = 0.1
run.n_trajectories = 3
run.sample_stride = 10
run.drift_sign = -1.0
"""
    status, out = run_cli(tmp_path, "simulate-sde", cfg)
    assert status == 0
    lines = (out / "sde_states.csv").read_text().splitlines()
    assert lines[0] == "time,v1,v2,v3,trajectory_id"
    assert len(lines) == 1 + 10 * 3  # 10 samples x 3 chains


KB = """
grid.n_points = 8
grid.length = 1.0
params.lam2 = 1.0
params.A = 0 0 0 0 0 0 0 0 2
noise.amplitude = 1.0
solver.dt = 1e-3
run.horizon = 4.0
run.burn_in = 0.5
run.n_trajectories = 8
run.sample_stride = 10
measure.n_z_bands = 8
measure.n_phi = 8
"""


def test_kb_measure_artifacts(tmp_path):
    status, out = run_cli(tmp_path, "kb-measure", KB)
    assert status == 0
    dist = json.loads((out / "distance.json").read_text())
    for key in ("tv", "ks_z", "sample_count", "effective_sample_size", "ks_critical_1pct"):
        assert key in dist
    header = (out / "measure.csv").read_text().splitlines()[0]
    assert header == "band,sector,count,area,empirical_mass,reference_mass"


def test_kb_measure_check_failure_exit_code(tmp_path):
    # an absurdly tight TV threshold on a tiny run must trip the check
    status, _ = run_cli(tmp_path, "kb-measure", KB + "measure.tv_max = 1e-6\n")
    assert status == 5


def test_kb_measure_worker_count_invariant(tmp_path):
    old = os.environ.get("SLLG_WORKERS")
    try:
        os.environ["SLLG_WORKERS"] = "1"
        _, out1 = run_cli(tmp_path, "kb-measure", KB, name="w1")
        os.environ["SLLG_WORKERS"] = "4"
        _, out4 = run_cli(tmp_path, "kb-measure", KB, name="w4")
    finally:
        if old is None:
            os.environ.pop("SLLG_WORKERS", None)
        else:
            os.environ["SLLG_WORKERS"] = old
    assert (out1 / "measure.csv").read_bytes() == (out4 / "measure.csv").read_bytes()
    d1 = json.loads((out1 / "distance.json").read_text())
    d4 = json.loads((out4 / "distance.json").read_text())
    assert d1 == d4


def test_check_invariants(tmp_path):
    cfg = "grid.n_points = 129\ngrid.length = 3.141592653589793\nparams.lam2 = 1.0\n"
    status, out = run_cli(tmp_path, "check-invariants", cfg)
    assert status == 0
    results = json.loads((out / "invariants.json").read_text())
    assert all(entry["passed"] for entry in results.values())
    assert "laplacian_identity_residual" in results


def test_inequality_energy(tmp_path):
    status, out = run_cli(tmp_path, "inequality", BASE, extra=["--name", "energy"])
    assert status == 0
    report = json.loads((out / "inequality_energy.json").read_text())
    assert report["passed"] is True
    header = (out / "inequality_energy_series.csv").read_text().splitlines()[0]
    assert header == "time,mean_grad_norm_sq,mean_cross_lap_int,mean_energy"


def test_inequality_improved_gate(tmp_path):
    big = BASE + "params.b = 0 0 2\n"
    status, _ = run_cli(tmp_path, "inequality", big, extra=["--name", "improved"])
    assert status == 3


def test_sync_command(tmp_path):
    cfg = """
grid.n_points = 32
grid.length = 3.141592653589793
params.lam2 = 1.0
noise.amplitude = 1.0
solver.dt = 2e-3
run.initial = tilted-wave
run.n_trajectories = 3
run.sample_stride = 25
sync.horizons = 0.0 0.5
"""
    status, out = run_cli(tmp_path, "sync", cfg)
    assert status == 0
    report = json.loads((out / "sync.json").read_text())
    assert report["alpha_bound_ok"] is True
    lines = (out / "sync_decay.csv").read_text().splitlines()
    assert lines[0] == "horizon,sup_deviation"
    assert len(lines) == 3


def test_feller_probe_command(tmp_path):
    cfg = BASE + "run.perturbation = 1e-3\nrun.n_trajectories = 6\n"
    status, out = run_cli(tmp_path, "feller-probe", cfg)
    assert status == 0
    report = json.loads((out / "feller.json").read_text())
    assert report["fraction_bounded"] >= 0.95
    header = (out / "feller_ratio.csv").read_text().splitlines()[0]
    assert header == "time,mean_log_ratio,max_log_ratio"


def test_flatness_command_scalar_noise(tmp_path):
    cfg = """
grid.n_points = 16
grid.length = 1.0
params.lam2 = 1.0
noise.shape = A
noise.profile = constant
noise.direction = 0 1 0
solver.dt = 2e-4
run.horizon = 0.02
"""
    status, out = run_cli(tmp_path, "flatness", cfg)
    assert status == 0
    report = json.loads((out / "flatness.json").read_text())
    assert report["passed"] is True
    assert report["max_grad_norm"] <= 1e-10


def test_seed_flag_overrides_config(tmp_path):
    status, out = run_cli(
        tmp_path, "simulate-spde", BASE + "noise.seed = 9\n", extra=["--seed", "123"]
    )
    assert status == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 123


def test_unknown_inequality_name_rejected_by_argparse(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE)
    with pytest.raises(SystemExit):
        main(["inequality", "--config", str(cfg), "--name", "bogus"])
