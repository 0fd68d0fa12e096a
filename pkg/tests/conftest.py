from __future__ import annotations

import numpy as np
import pytest

from mabuchi_action_lab.core.models import GeodesicOptions
from mabuchi_action_lab.fixtures import fixture_pair
from mabuchi_action_lab.geometry.grid import Grid, Potential


@pytest.fixture
def grid() -> Grid:
    return Grid(8)


@pytest.fixture
def fine_grid() -> Grid:
    return Grid(16)


@pytest.fixture
def options() -> GeodesicOptions:
    """Coarse continuation settings that keep every solve in the millisecond range."""
    return GeodesicOptions(
        time_steps=8, epsilon_initial=0.5, continuation_tol=1e-3, solver_tol=1e-9
    )


@pytest.fixture
def constants(grid: Grid) -> tuple[Potential, Potential]:
    return fixture_pair("constants", grid)


@pytest.fixture
def cosine(grid: Grid) -> tuple[Potential, Potential]:
    return fixture_pair("cosine_x", grid)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
