import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sllg.noise import (
    BrownianPath,
    NoiseShape,
    RoughDriverSample,
    antisymmetry_residual,
    chen_residual,
    first_level,
    geometricity_residual,
    ito_correction,
    p_variation,
    path_rng,
    read_increments,
    sample_brownian,
    second_level,
    write_increments,
)


# -- Brownian sampling --------------------------------------------------------

def test_sample_brownian_deterministic():
    a = sample_brownian(seed=7, dt=0.01, n_steps=100, trajectory=3)
    b = sample_brownian(seed=7, dt=0.01, n_steps=100, trajectory=3)
    np.testing.assert_array_equal(a.increments, b.increments)


def test_sample_brownian_trajectories_independent():
    a = sample_brownian(seed=7, dt=0.01, n_steps=100, trajectory=0)
    b = sample_brownian(seed=7, dt=0.01, n_steps=100, trajectory=1)
    assert not np.array_equal(a.increments, b.increments)


def test_sample_brownian_validation():
    with pytest.raises(ValueError):
        sample_brownian(seed=0, dt=0.0, n_steps=10)
    with pytest.raises(ValueError):
        sample_brownian(seed=0, dt=0.01, n_steps=0)
    with pytest.raises(ValueError):
        sample_brownian(seed=0, dt=0.01, n_steps=10, dimension=2)


def test_brownian_scaling_statistics():
    # Var of each increment is dt; the sample variance of 60000 draws should
    # sit within 3 sigma of dt (relative sigma ~ sqrt(2/n)).
    dt = 0.03
    path = sample_brownian(seed=11, dt=dt, n_steps=20000, dimension=3)
    samples = path.increments.ravel()
    n = samples.size
    var = samples.var()
    assert abs(var - dt) < 3.0 * dt * np.sqrt(2.0 / n)
    assert abs(samples.mean()) < 3.0 * np.sqrt(dt / n)


def test_positions_and_times():
    path = BrownianPath(dt=0.5, increments=np.array([[1.0, 0, 0], [0, 2.0, 0]]))
    np.testing.assert_allclose(path.times, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(
        path.positions(), [[0, 0, 0], [1, 0, 0], [1, 2, 0]]
    )
    assert path.dimension == 3
    assert path.n_steps == 2


def test_path_rng_reproducible():
    x = path_rng(42, 5).standard_normal(4)
    y = path_rng(42, 5).standard_normal(4)
    np.testing.assert_array_equal(x, y)


def test_increments_roundtrip(tmp_path):
    path = sample_brownian(seed=9, dt=0.002, n_steps=50, dimension=3)
    fname = tmp_path / "incs.bin"
    write_increments(path, fname)
    back = read_increments(fname)
    assert back.dt == path.dt
    assert back.seed == path.seed
    np.testing.assert_array_equal(back.increments, path.increments)


# -- first/second levels ------------------------------------------------------

def test_first_level_matrix():
    np.testing.assert_array_equal(
        first_level(np.array([1.0, 2.0, 3.0])),
        np.array([[0.0, 3.0, -2.0], [-3.0, 0.0, 1.0], [2.0, -1.0, 0.0]]),
    )


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_first_level_acts_as_cross_product(vals):
    dw = np.array(vals[:3])
    v = np.array(vals[3:])
    np.testing.assert_allclose(first_level(dw) @ v, np.cross(v, dw), atol=1e-9)


def test_second_level_straight_line_path():
    # w(t) = (t, 0, 0): W vanishes off-axis except the x-block, and the raw
    # level-2 tensor is T^2/2 e11, so the driver matrix has diagonal
    # (0, -T^2/2, -T^2/2).
    n, dt = 64, 0.125
    T = n * dt
    incs = np.zeros((n, 3))
    incs[:, 0] = dt
    path = BrownianPath(dt=dt, increments=incs)
    sample = second_level(path, np.array([0.0, T]))
    np.testing.assert_allclose(sample.W[0], first_level([T, 0, 0]), atol=1e-12)
    expected = np.diag([0.0, -T * T / 2.0, -T * T / 2.0])
    np.testing.assert_allclose(sample.WW[0], expected, atol=1e-12)
    np.testing.assert_allclose(sample.levy_area[0], 0.0, atol=1e-12)


def test_second_level_requires_3d():
    path = sample_brownian(seed=0, dt=0.01, n_steps=8, dimension=1)
    with pytest.raises(ValueError):
        second_level(path, np.array([0.0, 0.08]))


def test_second_level_misaligned_partition():
    path = sample_brownian(seed=0, dt=0.01, n_steps=8)
    with pytest.raises(ValueError):
        second_level(path, np.array([0.0, 0.045]))
    with pytest.raises(ValueError):
        second_level(path, np.array([0.0, 0.08, 0.04]))


def _random_sample(seed=3, n_steps=256, m=8):
    path = sample_brownian(seed=seed, dt=1.0 / n_steps, n_steps=n_steps)
    coarse = np.linspace(0.0, 1.0, m + 1)
    return second_level(path, coarse)


def test_driver_algebraic_residuals():
    sample = _random_sample()
    assert antisymmetry_residual(sample) <= 1e-12
    assert geometricity_residual(sample) <= 1e-12
    assert chen_residual(sample) <= 1e-12


def test_combined_matches_single_interval_lift():
    # Chen-combining the fine sample over the full window must equal lifting
    # over the single coarse interval directly.
    path = sample_brownian(seed=5, dt=1.0 / 128, n_steps=128)
    fine = second_level(path, np.linspace(0.0, 1.0, 9))
    whole = second_level(path, np.array([0.0, 1.0]))
    W, WW = fine.combined(0, fine.n_intervals)
    np.testing.assert_allclose(W, whole.W[0], atol=1e-12)
    np.testing.assert_allclose(WW, whole.WW[0], atol=1e-12)


def test_combined_invalid_interval():
    sample = _random_sample()
    with pytest.raises(IndexError):
        sample.combined(3, 3)
    with pytest.raises(IndexError):
        sample.combined(0, sample.n_intervals + 1)


def test_levy_area_is_antisymmetric():
    sample = _random_sample(seed=17)
    area = sample.levy_area
    np.testing.assert_allclose(area, -np.transpose(area, (0, 2, 1)), atol=1e-15)


# -- p-variation --------------------------------------------------------------

def test_p_variation_linear_path():
    t = np.linspace(0.0, 2.0, 513)
    assert p_variation(3.0 * t, 1.0) == pytest.approx(6.0, rel=1e-12)
    # Higher p only lowers the dyadic sum for a monotone path.
    assert p_variation(3.0 * t, 2.0) <= 6.0


def test_p_variation_zigzag():
    # Up then down by 1: total 1-variation is 2, captured at depth >= 1.
    t = np.linspace(0.0, 1.0, 257)
    zig = 1.0 - np.abs(2.0 * t - 1.0)
    assert p_variation(zig, 1.0) == pytest.approx(2.0, rel=1e-12)


def test_p_variation_monotone_in_depth():
    path = sample_brownian(seed=2, dt=1.0 / 1024, n_steps=1024)
    pos = path.positions()
    vals = [p_variation(pos, 2.5, max_depth=d) for d in range(0, 11, 2)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_p_variation_rejects_p_below_one():
    with pytest.raises(ValueError):
        p_variation(np.arange(4.0), 0.5)


# -- Ito correction -----------------------------------------------------------

def test_ito_correction_values():
    np.testing.assert_allclose(
        ito_correction(np.array([1.0, 2.0, 3.0]), 1.0), [-1.0, -2.0, -3.0]
    )
    np.testing.assert_allclose(
        ito_correction(np.array([1.0, 0.0, 0.0]), 4.0), [-4.0, 0.0, 0.0]
    )


# -- noise shapes -------------------------------------------------------------

def test_noise_shape_validation():
    with pytest.raises(ValueError):
        NoiseShape(tag="A", profile=np.zeros(5))
    with pytest.raises(ValueError):
        NoiseShape(tag="B", profile=np.zeros((5, 3)))
    with pytest.raises(ValueError):
        NoiseShape(tag="C", profile=np.zeros(5))
    with pytest.raises(ValueError):
        NoiseShape(tag="B", profile=np.array([1.0, np.inf]))


def test_noise_shape_dimensions_and_constancy():
    a = NoiseShape(tag="A", profile=np.tile([0.0, 0.0, 1.0], (4, 1)))
    b = NoiseShape(tag="B", profile=np.array([1.0, 2.0, 3.0]))
    assert a.dimension == 1
    assert b.dimension == 3
    assert a.spatially_constant
    assert not b.spatially_constant


def test_rotation_increments():
    prof = np.array([[0.0, 0.0, 1.0], [0.0, 2.0, 0.0]])
    a = NoiseShape(tag="A", profile=prof)
    np.testing.assert_allclose(
        a.rotation_increments(np.array([0.5])), 0.5 * prof
    )
    b = NoiseShape(tag="B", profile=np.array([1.0, 3.0]))
    dW = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(
        b.rotation_increments(dW), np.array([dW, 3.0 * dW])
    )


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_driver_residuals_hold_across_paths(seed):
    sample = _random_sample(seed=seed, n_steps=64, m=4)
    assert antisymmetry_residual(sample) <= 1e-12
    assert geometricity_residual(sample) <= 1e-12
    assert chen_residual(sample) <= 1e-12
