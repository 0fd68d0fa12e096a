"""Periodic N×N discretisation of the flat torus R²/Z² with ω = dx∧dy.

Axis 0 of every field is the x direction, axis 1 the y direction; node (i, j) sits at
(i/N, j/N). All derivative helpers act on the last two axes so that stacks of fields
(for example every knot of a path) are processed in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mabuchi_action_lab.core.errors import NotKahler

type GridField = NDArray[np.float64]


class DerivativeScheme(enum.StrEnum):
    SPECTRAL = "spectral"
    CENTRAL = "central"


@dataclass(frozen=True)
class Grid:
    """Torus grid with ``n`` cells per side and a derivative scheme."""

    n: int
    scheme: DerivativeScheme = DerivativeScheme.SPECTRAL

    def __post_init__(self) -> None:
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 4, got {self.n}")
        object.__setattr__(self, "scheme", DerivativeScheme(self.scheme))

    @property
    def cell_width(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def cell_mass(self) -> float:
        """Lebesgue mass of one cell."""
        return 1.0 / (self.n * self.n)

    def nodes(self) -> tuple[GridField, GridField]:
        coords = np.arange(self.n, dtype=np.float64) / self.n
        x, y = np.meshgrid(coords, coords, indexing="ij")
        return x, y

    @cached_property
    def _modes(self) -> NDArray[np.float64]:
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def _first_derivative_symbol(self) -> NDArray[np.complex128]:
        k = 2.0 * np.pi * self._modes
        # The Nyquist mode has no odd partner on an even grid
        k[self.n // 2] = 0.0
        return 1j * k

    @cached_property
    def laplacian_eigenvalues(self) -> GridField:
        """Eigenvalues λ ≥ 0 of −Δ on the Fourier modes, in ``fft2`` order."""
        m = self._modes
        if self.scheme is DerivativeScheme.SPECTRAL:
            k2 = (2.0 * np.pi * m) ** 2
        else:
            k2 = 4.0 * self.n**2 * np.sin(np.pi * m / self.n) ** 2
        return k2[:, None] + k2[None, :]

    def derivative(self, f: ArrayLike, axis: int) -> GridField:
        """Partial derivative along torus axis 0 (x) or 1 (y)."""
        arr = np.asarray(f, dtype=np.float64)
        ax = -2 if axis == 0 else -1
        if self.scheme is DerivativeScheme.SPECTRAL:
            symbol = self._first_derivative_symbol
            shape = (self.n, 1) if axis == 0 else (self.n,)
            spectrum = np.fft.fft(arr, axis=ax) * symbol.reshape(shape)
            return np.fft.ifft(spectrum, axis=ax).real
        return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) * (self.n / 2.0)

    def gradient(self, f: ArrayLike) -> tuple[GridField, GridField]:
        return self.derivative(f, 0), self.derivative(f, 1)

    def divergence(self, vx: ArrayLike, vy: ArrayLike) -> GridField:
        return self.derivative(vx, 0) + self.derivative(vy, 1)

    def laplacian(self, f: ArrayLike) -> GridField:
        arr = np.asarray(f, dtype=np.float64)
        if self.scheme is DerivativeScheme.SPECTRAL:
            spectrum = np.fft.fft2(arr, axes=(-2, -1))
            return np.fft.ifft2(
                -self.laplacian_eigenvalues * spectrum, axes=(-2, -1)
            ).real
        neighbours = (
            np.roll(arr, 1, axis=-2)
            + np.roll(arr, -1, axis=-2)
            + np.roll(arr, 1, axis=-1)
            + np.roll(arr, -1, axis=-1)
        )
        return (neighbours - 4.0 * arr) * float(self.n**2)

    def density(self, f: ArrayLike) -> GridField:
        """Monge–Ampère density 1 + Δf/2 (no positivity check)."""
        return 1.0 + 0.5 * self.laplacian(f)


def _frozen(arr: NDArray[np.float64]) -> NDArray[np.float64]:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Potential:
    """A grid field ``u`` with cached density ρ_u = 1 + Δu/2 > 0.

    Build through :func:`make_potential`; the positivity test runs only there.
    """

    grid: Grid
    field: GridField
    ma_density: GridField

    @property
    def weights(self) -> GridField:
        """Cell masses of μ_u."""
        return self.ma_density * self.grid.cell_mass

    def interpolate(self, other: Potential, s: float) -> Potential:
        """The convex combination (1 − s)·self + s·other.

        The density is affine in the potential, so a convex combination of two
        potentials is again a potential and needs no recheck.
        """
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"interpolation weight must lie in [0, 1], got {s}")
        field = (1.0 - s) * self.field + s * other.field
        density = (1.0 - s) * self.ma_density + s * other.ma_density
        return Potential(self.grid, _frozen(field), _frozen(density))

    def same_field(self, other: Potential) -> bool:
        return self.grid == other.grid and bool(np.array_equal(self.field, other.field))


@dataclass(frozen=True, eq=False)
class WeightedValues:
    """Values on a finite weighted set, e.g. a grid field paired with μ_u.

    ``cells`` names the underlying cell of every entry (row-major grid index); it is
    ``None`` when entries are simply positional.
    """

    values: NDArray[np.float64]
    weights: NDArray[np.float64]
    cells: NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if values.size == 0 or values.shape != weights.shape:
            raise ValueError("values and weights must be non-empty and equally long")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
            raise ValueError("weights must be finite and strictly positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        if self.cells is not None:
            cells = np.asarray(self.cells, dtype=np.int64).ravel()
            if cells.shape != values.shape:
                raise ValueError("cells must align with values")
            object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def cell_ids(self) -> NDArray[np.int64]:
        if self.cells is None:
            return np.arange(self.values.size, dtype=np.int64)
        return self.cells

    def with_values(self, values: ArrayLike) -> WeightedValues:
        values = np.asarray(values, dtype=np.float64)
        return WeightedValues(values, self.weights, self.cells)


def laplacian(f: ArrayLike, grid: Grid) -> GridField:
    return grid.laplacian(f)


def gradient(f: ArrayLike, grid: Grid) -> tuple[GridField, GridField]:
    return grid.gradient(f)


def divergence(vx: ArrayLike, vy: ArrayLike, grid: Grid) -> GridField:
    return grid.divergence(vx, vy)


def make_potential(f: ArrayLike, grid: Grid) -> Potential:
    """Admit ``f`` as a potential if its density 1 + Δf/2 is positive everywhere.

    Raises:
        NotKahler: if the minimum density is not positive.
    """
    field = np.array(f, dtype=np.float64, copy=True)
    if field.shape != grid.shape:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError("potential values must be finite")
    density = grid.density(field)
    min_density = float(density.min())
    if not min_density > 0.0:
        raise NotKahler(min_density)
    return Potential(grid, _frozen(field), _frozen(density))


def zero_potential(grid: Grid) -> Potential:
    return make_potential(np.zeros(grid.shape), grid)


def f_density(u: Potential) -> GridField:
    """The function F(u) with F(u)·ω_u = ω, i.e. 1/ρ_u."""
    return 1.0 / u.ma_density


def metric_grad(u: Potential, xi: ArrayLike) -> tuple[GridField, GridField]:
    gx, gy = u.grid.gradient(xi)
    return gx / u.ma_density, gy / u.ma_density


def inner_product_du(u: Potential, xi: ArrayLike, eta: ArrayLike) -> GridField:
    """Pointwise (dξ, dη)_u = ∇ξ·∇η / ρ_u."""
    xi_x, xi_y = u.grid.gradient(xi)
    eta_x, eta_y = u.grid.gradient(eta)
    return (xi_x * eta_x + xi_y * eta_y) / u.ma_density


def poisson_bracket(u: Potential, f: ArrayLike, g: ArrayLike) -> GridField:
    """{f, g}_u = (f_x g_y − f_y g_x) / ρ_u for the symplectic form ω_u."""
    f_x, f_y = u.grid.gradient(f)
    g_x, g_y = u.grid.gradient(g)
    return (f_x * g_y - f_y * g_x) / u.ma_density


def sgrad(u: Potential, zeta: ArrayLike) -> tuple[GridField, GridField]:
    """Symplectic gradient (−ζ_y, ζ_x)/ρ_u; its flow preserves μ_u."""
    z_x, z_y = u.grid.gradient(zeta)
    return -z_y / u.ma_density, z_x / u.ma_density


def integrate(f: ArrayLike, u: Potential) -> float:
    """Midpoint quadrature Σ f·ρ_u / N² of f against μ_u."""
    values = np.broadcast_to(np.asarray(f, dtype=np.float64), u.grid.shape)
    return float(np.sum(values * u.ma_density)) * u.grid.cell_mass


def weighted_values(u: Potential, xi: ArrayLike) -> WeightedValues:
    """Pair a field with the cell masses of μ_u."""
    values = np.broadcast_to(np.asarray(xi, dtype=np.float64), u.grid.shape)
    return WeightedValues(
        values.ravel().copy(),
        u.weights.ravel().copy(),
        np.arange(u.grid.n * u.grid.n, dtype=np.int64),
    )


def random_trigonometric_field(
    grid: Grid, rng: np.random.Generator, max_mode: int = 2
) -> GridField:
    """Random band-limited field (|k_x|, |k_y| ≤ ``max_mode``) with unit sup norm."""
    if max_mode < 1:
        raise ValueError("max_mode must be at least 1")
    x, y = grid.nodes()
    field = np.zeros(grid.shape)
    for kx in range(-max_mode, max_mode + 1):
        for ky in range(0, max_mode + 1):
            if ky == 0 and kx <= 0:
                continue
            a, b = rng.normal(size=2)
            phase = 2.0 * np.pi * (kx * x + ky * y)
            field += a * np.cos(phase) + b * np.sin(phase)
    return field / np.max(np.abs(field))
