import numpy as np
import pytest

from geoflow.spectral import make_grid, transform_forward


def coords(grid):
    """Physical sample coordinates, one array per axis."""
    axes = [np.arange(m) * (length / m) for m, length in zip(grid.n, grid.lengths)]
    return np.meshgrid(*axes, indexing="ij")


def random_field(grid, components, seed=0, dealiased=True, mean_free=True):
    """Random real field with a decaying spectrum."""
    rng = np.random.default_rng(seed)
    u = transform_forward(rng.standard_normal((components,) + grid.shape), grid)
    damp = 1.0 / (1.0 + grid.k2) ** 0.75
    u.coeffs *= damp
    if dealiased:
        u.coeffs *= grid.mask
    if mean_free:
        u.coeffs[(slice(None),) + (0,) * grid.ndim] = 0.0
    return u


def rel(a, b):
    """Relative coefficient-space discrepancy."""
    a = getattr(a, "coeffs", a)
    b = getattr(b, "coeffs", b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def grid16():
    return make_grid((16, 16, 16))


@pytest.fixture
def grid8():
    return make_grid((8, 8, 8))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
