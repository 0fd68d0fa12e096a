import numpy as np
import pytest

from mabuchi_action_lab.core.errors import NotKahler
from mabuchi_action_lab.geometry.grid import (
    DerivativeScheme,
    Grid,
    integrate,
    make_potential,
    poisson_bracket,
    sgrad,
    weighted_values,
    zero_potential,
)


def test_spectral_laplacian_of_cosine_is_exact(grid):
    x, _ = grid.nodes()
    f = np.cos(2 * np.pi * x)
    assert grid.laplacian(f) == pytest.approx(-4 * np.pi**2 * f, abs=1e-10)


def test_central_laplacian_uses_five_point_symbol():
    grid = Grid(8, "central")
    x, _ = grid.nodes()
    f = np.cos(2 * np.pi * x)
    symbol = 4 * grid.n**2 * np.sin(np.pi / grid.n) ** 2
    assert grid.scheme is DerivativeScheme.CENTRAL
    assert grid.laplacian(f) == pytest.approx(-symbol * f, abs=1e-10)


def test_nyquist_mode_has_zero_first_derivative(grid):
    x, _ = grid.nodes()
    nyquist = np.cos(2 * np.pi * (grid.n // 2) * x)
    assert np.max(np.abs(grid.derivative(nyquist, 0))) < 1e-12


@pytest.mark.parametrize("n", [3, 2, 7])
def test_grid_rejects_odd_or_tiny_sizes(n):
    with pytest.raises(ValueError):
        Grid(n)


def test_make_potential_rejects_non_positive_density(grid):
    x, _ = grid.nodes()
    with pytest.raises(NotKahler) as info:
        make_potential(np.cos(2 * np.pi * x), grid)
    assert info.value.min_density == pytest.approx(1 - 2 * np.pi**2)


def test_potential_mass_is_one(grid, rng):
    x, y = grid.nodes()
    u = make_potential(0.01 * np.sin(2 * np.pi * (x + 2 * y)), grid)
    assert integrate(1.0, u) == pytest.approx(1.0, abs=1e-12)
    assert weighted_values(u, rng.normal(size=grid.shape)).total_mass == pytest.approx(
        1.0, abs=1e-12
    )


def test_potential_fields_are_read_only(grid):
    u = zero_potential(grid)
    with pytest.raises(ValueError):
        u.field[0, 0] = 1.0


def test_interpolated_potential_density_is_affine(cosine):
    w, w_prime = cosine
    mid = w.interpolate(w_prime, 0.25)
    assert mid.ma_density == pytest.approx(
        0.75 * w.ma_density + 0.25 * w_prime.ma_density
    )
    with pytest.raises(ValueError):
        w.interpolate(w_prime, 1.5)


def test_symplectic_gradient_preserves_measure(grid, rng):
    """div(ρ_u sgrad_u ζ) vanishes for any Hamiltonian ζ."""
    x, y = grid.nodes()
    u = make_potential(0.01 * np.cos(2 * np.pi * (x - y)), grid)
    zeta = np.sin(2 * np.pi * x) * np.cos(4 * np.pi * y)
    vx, vy = sgrad(u, zeta)
    flux = grid.divergence(u.ma_density * vx, u.ma_density * vy)
    assert np.max(np.abs(flux)) < 1e-10


def test_poisson_bracket_is_antisymmetric(grid):
    x, y = grid.nodes()
    u = zero_potential(grid)
    f = np.cos(2 * np.pi * x)
    g = np.sin(2 * np.pi * y)
    assert poisson_bracket(u, f, g) == pytest.approx(-poisson_bracket(u, g, f))
    assert np.max(np.abs(poisson_bracket(u, f, f))) < 1e-12
