import numpy as np
import pytest

from csslab.grid import RadialField, make_grid
from csslab.profiles import build_bundle


@pytest.fixture(scope="session")
def grid_m1():
    """Reference profile grid, m=1."""
    return make_grid(m=1, n=4096, r_max=1e3)


@pytest.fixture(scope="session")
def grid_small():
    """Coarser grid for cheap structural tests."""
    return make_grid(m=1, n=1024, r_max=100.0)


@pytest.fixture(scope="session")
def bundle_m1(grid_m1):
    return build_bundle(grid_m1, eta=0.0)


def bump_field(grid, center, width, amp=1.0, power=1):
    """Smooth compactly supported equivariant-legal test field."""
    r = grid.nodes
    x = (r - center) / width
    win = np.where(np.abs(x) < 1, np.exp(1.0 - 1.0 / np.maximum(1 - x**2, 1e-300)), 0.0)
    return RadialField(grid, amp * win * r**power / (1 + r) ** power)


def random_bump(grid, rng, complex_amp=True, lo=0.8, hi=3.0):
    amp = rng.normal() + (1j * rng.normal() if complex_amp else 0.0)
    return bump_field(grid, rng.uniform(lo, hi), rng.uniform(1.0, 2.5), amp)
