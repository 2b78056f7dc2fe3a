import io

import numpy as np
import pytest

from sllg.params import AnisotropyParams
from sllg.sde import (
    GibbsSpec,
    anisotropic_drift,
    assert_unit,
    gibbs_density,
    gibbs_z_marginal,
    rejection_sample,
    run_chains,
    sde_step_A,
    sde_step_B,
    spherical_brownian,
    uniform_spec,
    write_states_csv,
)

# Frozen reference values for the equilibrium density with
# lam2 = 1, h2 = 1, |D| = 1, A = diag(0, 0, 2), b = 0 (exponent -2 z^2):
#   Z_z      = int_{-1}^{1} exp(-2 z^2) dz
#   E[z^2], E[z^4] under the z-marginal
# computed independently with mpmath quadrature at 50 digits.
Z_Z = 1.196288013323
EZ2 = 0.193435325887
EZ4 = 0.088511820303
MARG_AT_0 = 0.835919100470
MARG_AT_1 = 0.113129348225


def axial_spec(beta: float = 2.0) -> GibbsSpec:
    return GibbsSpec(
        lam2=1.0,
        h2=1.0,
        aniso=AnisotropyParams(lam2=1.0, A=np.diag([0.0, 0.0, beta])),
        domain_length=1.0,
    )


# -- drift --------------------------------------------------------------------

def test_anisotropic_drift_hand_example():
    beta = 2.0
    p = AnisotropyParams(lam1=0.7, lam2=1.3, A=np.diag([0.0, 0.0, beta]))
    s = 1.0 / np.sqrt(2.0)
    v = np.array([s, 0.0, s])
    expected = 0.7 * np.array([0.0, -beta / 2.0, 0.0]) - 1.3 * np.array(
        [beta / (2.0 * np.sqrt(2.0)), 0.0, -beta / (2.0 * np.sqrt(2.0))]
    )
    np.testing.assert_allclose(anisotropic_drift(v, p), expected, atol=1e-14)
    np.testing.assert_allclose(anisotropic_drift(v, p, drift_sign=-1.0), -expected, atol=1e-14)


def test_anisotropic_drift_offset_only():
    # A = 0, b = (0,0,beta): g' is constant, same algebra as the axis example.
    beta = 1.5
    p = AnisotropyParams(lam1=1.0, lam2=1.0, b=[0.0, 0.0, beta])
    v = np.array([1.0, 0.0, 0.0])
    # v x b = (0, -beta, 0); v x (v x b) = (0, 0, -beta)
    expected = np.array([0.0, -beta, 0.0]) - np.array([0.0, 0.0, -beta])
    np.testing.assert_allclose(anisotropic_drift(v, p), expected, atol=1e-14)


def test_drift_is_tangent_batched():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((64, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    p = AnisotropyParams(lam1=0.4, lam2=1.0, A=rng.standard_normal((3, 3)), b=[0.1, 0.0, -0.2])
    d = anisotropic_drift(v, p)
    assert np.max(np.abs(np.sum(d * v, axis=1))) < 1e-12


def test_assert_unit():
    assert_unit(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        assert_unit(np.array([0.0, 0.0, 1.1]))


# -- steppers -----------------------------------------------------------------

def test_sde_step_B_pole_is_fixed_point_of_drift():
    # v along the A-axis with b = 0: drift vanishes; with zero noise increment
    # the state is unchanged.
    p = AnisotropyParams(lam2=1.0, A=np.diag([0.0, 0.0, 2.0]))
    v = np.array([0.0, 0.0, 1.0])
    out = sde_step_B(v, p, h2=1.0, dBbar=np.zeros(3), dt=1e-3)
    np.testing.assert_allclose(out, v, atol=1e-15)


def test_sde_step_B_preserves_unit_norm():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((128, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    p = AnisotropyParams(lam1=0.3, lam2=1.0, A=np.diag([1.0, -0.5, 0.2]))
    for _ in range(50):
        v = sde_step_B(v, p, 1.0, rng.standard_normal(3) * 0.03, 1e-3)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)


def test_sde_step_A_aligned_state_frozen():
    # v parallel to h1 and no anisotropy: v x h1 = 0 for every increment.
    p = AnisotropyParams(lam2=1.0)
    h1 = np.array([0.0, 1.0, 0.0])
    v = h1.copy()
    for dB in (0.3, -1.2, 0.05):
        v = sde_step_A(v, h1, dB, p, 1e-3)
    np.testing.assert_allclose(v, h1, atol=1e-14)


def test_sde_step_A_rotates_transverse_state():
    p = AnisotropyParams(lam2=1.0)
    h1 = np.array([0.0, 0.0, 1.0])
    v = np.array([1.0, 0.0, 0.0])
    out = sde_step_A(v, h1, np.pi / 2.0, p, 1e-3)
    np.testing.assert_allclose(out, [0.0, -1.0, 0.0], atol=1e-14)


# -- chain driver -------------------------------------------------------------

def test_run_chains_partition_independent():
    p = AnisotropyParams(lam2=1.0, A=np.diag([0.0, 0.0, 2.0]))
    v0 = np.tile([1.0, 0.0, 0.0], (4, 1))
    whole = run_chains(v0, p, 1.0, 1e-3, 200, seed=9, chain_indices=range(4), drift_sign=-1.0)
    first = run_chains(v0[:2], p, 1.0, 1e-3, 200, seed=9, chain_indices=[0, 1], drift_sign=-1.0)
    second = run_chains(v0[2:], p, 1.0, 1e-3, 200, seed=9, chain_indices=[2, 3], drift_sign=-1.0)
    np.testing.assert_array_equal(whole, np.vstack([first, second]))


def test_run_chains_chunking_invariant():
    p = AnisotropyParams(lam2=1.0, A=np.diag([0.0, 0.0, 2.0]))
    v0 = np.tile([0.0, 1.0, 0.0], (3, 1))
    a = run_chains(v0, p, 1.0, 1e-3, 150, seed=5, chain_indices=range(3), chunk=7)
    b = run_chains(v0, p, 1.0, 1e-3, 150, seed=5, chain_indices=range(3), chunk=150)
    np.testing.assert_array_equal(a, b)


def test_run_chains_observer_schedule():
    p = AnisotropyParams(lam2=1.0)
    v0 = np.array([[0.0, 0.0, 1.0]])
    seen = []
    run_chains(
        v0, p, 1.0, 1e-3, 100, seed=1, chain_indices=[0],
        burn_in_steps=40, observe_stride=20, observer=lambda s, v: seen.append(s),
    )
    assert seen == [60, 80, 100]


def test_run_chains_validates_indices():
    p = AnisotropyParams(lam2=1.0)
    with pytest.raises(ValueError):
        run_chains(np.tile([0.0, 0.0, 1.0], (2, 1)), p, 1.0, 1e-3, 10, seed=0, chain_indices=[0])


# -- equilibrium density ------------------------------------------------------

def test_uniform_density_value():
    spec = uniform_spec()
    pts = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(gibbs_density(pts, spec), 1.0 / (4.0 * np.pi), rtol=1e-10)


def test_density_integrates_to_one():
    spec = axial_spec()
    rng = np.random.default_rng(2)
    # Monte Carlo over the uniform sphere measure: E[4 pi f] = 1.
    z = rng.uniform(-1, 1, 200_000)
    phi = rng.uniform(-np.pi, np.pi, z.size)
    s = np.sqrt(1 - z ** 2)
    pts = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    est = 4.0 * np.pi * np.mean(gibbs_density(pts, spec))
    assert est == pytest.approx(1.0, abs=3.0 / np.sqrt(z.size))


def test_z_marginal_matches_frozen_oracle():
    spec = axial_spec()
    vals = gibbs_z_marginal(np.array([0.0, 1.0]), spec)
    assert vals[0] == pytest.approx(MARG_AT_0, rel=1e-5)
    assert vals[1] == pytest.approx(MARG_AT_1, rel=1e-5)
    # closed form: exp(-2 z^2) / Z_z
    z = np.linspace(-1.0, 1.0, 41)
    np.testing.assert_allclose(
        gibbs_z_marginal(z, spec), np.exp(-2.0 * z ** 2) / Z_Z, rtol=1e-5
    )


def test_z_marginal_moments_match_frozen_oracle():
    spec = axial_spec()
    z = np.linspace(-1.0, 1.0, 4097)
    marg = gibbs_z_marginal(z, spec)
    ez2 = np.trapezoid(z ** 2 * marg, z)
    ez4 = np.trapezoid(z ** 4 * marg, z)
    assert ez2 == pytest.approx(EZ2, abs=1e-5)
    assert ez4 == pytest.approx(EZ4, abs=1e-5)


def test_density_symmetric_under_z_flip():
    spec = axial_spec()
    v = np.array([0.3, -0.4, np.sqrt(1 - 0.25)])
    w = v * np.array([1.0, 1.0, -1.0])
    assert gibbs_density(v, spec) == pytest.approx(gibbs_density(w, spec), rel=1e-14)


def test_gibbs_spec_validation():
    with pytest.raises(ValueError):
        GibbsSpec(lam2=1.0, h2=0.0, aniso=AnisotropyParams(), domain_length=1.0)
    with pytest.raises(ValueError):
        GibbsSpec(lam2=0.0, h2=1.0, aniso=AnisotropyParams(), domain_length=1.0)


# -- sampling -----------------------------------------------------------------

def test_rejection_sample_moments():
    spec = axial_spec()
    pts = rejection_sample(spec, 100_000, seed=31)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    n = pts.shape[0]
    z = pts[:, 2]
    assert z.mean() == pytest.approx(0.0, abs=3.0 * np.sqrt(EZ2 / n))
    var_z2 = EZ4 - EZ2 ** 2
    assert (z ** 2).mean() == pytest.approx(EZ2, abs=3.0 * np.sqrt(var_z2 / n))
    # transverse components are symmetric
    assert abs(pts[:, 0].mean()) < 3.0 / np.sqrt(n)
    assert abs(pts[:, 1].mean()) < 3.0 / np.sqrt(n)


def test_rejection_sample_deterministic():
    spec = axial_spec()
    a = rejection_sample(spec, 500, seed=8, trajectory=1)
    b = rejection_sample(spec, 500, seed=8, trajectory=1)
    np.testing.assert_array_equal(a, b)


# -- dynamics vs equilibrium --------------------------------------------------

def test_spherical_brownian_relaxes_to_uniform():
    # E[v3] of spherical BM decays like exp(-2t); by t = 3 it is below 0.01
    # starting from the pole. Check first and second moments against the
    # uniform law within Monte Carlo error.
    dt, n_steps, n_paths = 1e-2, 300, 400
    finals = np.array(
        [spherical_brownian([0.0, 0.0, 1.0], dt, n_steps, seed=13, trajectory=t)[-1]
         for t in range(n_paths)]
    )
    z = finals[:, 2]
    assert abs(z.mean()) < np.exp(-2.0 * dt * n_steps) + 3.0 / np.sqrt(n_paths)
    assert (z ** 2).mean() == pytest.approx(1.0 / 3.0, abs=3.0 * 0.3 / np.sqrt(n_paths))


def test_chain_ensemble_approaches_equilibrium_moment():
    # Descent dynamics with the axial anisotropy: after burn-in, E[v3^2]
    # over chains and time matches the frozen equilibrium moment.
    spec = axial_spec()
    p = spec.aniso
    n_chains, dt, n_steps, burn = 32, 1e-3, 30_000, 10_000
    v0 = rejection_sample(spec, n_chains, seed=17)
    acc = []
    run_chains(
        v0, p, 1.0, dt, n_steps, seed=23, chain_indices=range(n_chains),
        drift_sign=-1.0, burn_in_steps=burn, observe_stride=100,
        observer=lambda s, v: acc.append(v[:, 2].copy()),
    )
    z = np.concatenate(acc)
    # correlated samples: allow a generous tolerance tied to the IAT scale
    assert (z ** 2).mean() == pytest.approx(EZ2, abs=0.03)


# -- CSV ----------------------------------------------------------------------

def test_write_states_csv():
    times = np.array([0.0, 0.5])
    states = np.zeros((2, 2, 3))
    states[0, 0] = [1.0, 0.0, 0.0]
    states[1, 1] = [0.0, 0.0, -1.0]
    buf = io.StringIO()
    write_states_csv(times, states, [4, 7], buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "time,v1,v2,v3,trajectory_id"
    assert len(lines) == 5
    assert lines[1].endswith(",4")
    assert lines[4] == "0.5,0,0,-1,7"
