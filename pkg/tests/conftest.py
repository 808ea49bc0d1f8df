"""Shared fixtures: small grids, masks and a fast run configuration."""

import pytest

from qpat_py.grid import DomainMask, GridSpec
from qpat_py.models import RunConfig


@pytest.fixture
def unit_grid():
    """33x33 nodes on the unit square."""
    return GridSpec.unit_square(33)


@pytest.fixture
def rect_mask(unit_grid):
    return DomainMask.rectangle(unit_grid)


@pytest.fixture
def disk_mask(unit_grid):
    return DomainMask.disk(unit_grid, center=(0.5, 0.5), radius=0.4)


@pytest.fixture
def small_config():
    """Benchmark phantom on a 33x33 grid."""
    cfg = RunConfig()
    return cfg.model_copy(
        update={
            "phantom": cfg.phantom.model_copy(update={"resolution": 33}),
            "potential": cfg.potential.model_copy(update={"resolution": 33}),
        }
    )
