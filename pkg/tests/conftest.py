import numpy as np
import pytest

from sllg.fields import Grid1D, SphereField, normalize_rows


@pytest.fixture
def unit_interval_grid():
    return Grid1D(n_points=64, length=1.0)


def smooth_unit_field(grid: Grid1D, wavenumber: float = 2.0, tilt: float = 0.8) -> SphereField:
    """A smooth non-constant sphere field that does not satisfy the Neumann
    condition (exercises the boundary handling honestly)."""
    x = grid.x
    raw = np.stack(
        [
            np.cos(wavenumber * np.pi * x / grid.length),
            0.6 * np.sin(wavenumber * np.pi * x / grid.length),
            np.full(grid.n_points, tilt),
        ],
        axis=1,
    )
    return SphereField(grid, normalize_rows(raw))


def circle_field(grid: Grid1D) -> SphereField:
    """u(x) = (cos x, sin x, 0): the unit-speed great-circle curve."""
    x = grid.x
    return SphereField(grid, np.stack([np.cos(x), np.sin(x), np.zeros_like(x)], axis=1))
