"""Paths of potentials, parallel transport and Hamiltonian flows on the torus grid.

Parallel transport along a path u(t) is generated by the time-dependent vector field
V_t = −(1/2)·grad_{u(t)} u̇(t) = −∇u̇/(2ρ_{u(t)}); a field ξ(t) is parallel exactly when
ξ(t)∘φ(t) does not depend on t. Trajectories are integrated with a classical RK4
scheme, the velocity field being sampled bilinearly (periodic) between grid nodes.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage

from mabuchi_action_lab.core.errors import NotKahler, StepUnstable
from mabuchi_action_lab.geometry.grid import (
    DerivativeScheme,
    Grid,
    GridField,
    Potential,
    inner_product_du,
    sgrad,
)

logger = logging.getLogger(__name__)

type Positions = tuple[GridField, GridField]
type FlowField = Callable[[float, GridField, GridField], Positions]
type TimeFamily = Callable[[float], GridField]


class Interpolation(enum.StrEnum):
    PIECEWISE_LINEAR = "piecewise-linear"
    SOLVER_NATIVE = "solver-native"


@dataclass(frozen=True, eq=False)
class PotentialPath:
    """Potentials sampled at increasing times t_0 < … < t_m.

    Piecewise-linear paths are admitted only if the midpoint of every segment is a
    potential as well.
    """

    times: NDArray[np.float64]
    knots: tuple[Potential, ...]
    interpolation: Interpolation = Interpolation.PIECEWISE_LINEAR

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64)
        knots = tuple(self.knots)
        if times.ndim != 1 or times.size < 2 or times.size != len(knots):
            raise ValueError("a path needs at least two knots, one per time")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("path times must increase strictly")
        grid = knots[0].grid
        if any(k.grid != grid for k in knots):
            raise ValueError("all knots must live on the same grid")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))
        if self.interpolation is Interpolation.PIECEWISE_LINEAR:
            for left, right in zip(knots[:-1], knots[1:]):
                midpoint = grid.density(0.5 * (left.field + right.field))
                if not float(midpoint.min()) > 0.0:
                    raise NotKahler(float(midpoint.min()))

    @property
    def grid(self) -> Grid:
        return self.knots[0].grid

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def steps(self) -> int:
        """Number of knot intervals m."""
        return len(self.knots) - 1

    @cached_property
    def fields(self) -> NDArray[np.float64]:
        """Knot potentials stacked along axis 0."""
        return np.stack([k.field for k in self.knots])

    @cached_property
    def densities(self) -> NDArray[np.float64]:
        return np.stack([k.ma_density for k in self.knots])

    def locate(self, t: float) -> tuple[int, float]:
        """Interval index i with t in [t_i, t_{i+1}] and the fraction inside it."""
        a, b = self.interval
        if not a <= t <= b:
            raise ValueError(f"time {t} outside the path interval [{a}, {b}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), self.steps - 1)
        s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, float(min(max(s, 0.0), 1.0))

    def sample(self, t: float) -> Potential:
        """The potential at time t, linear between knots."""
        i, s = self.locate(t)
        if s == 0.0:
            return self.knots[i]
        if s == 1.0:
            return self.knots[i + 1]
        return self.knots[i].interpolate(self.knots[i + 1], s)

    def reversed(self) -> PotentialPath:
        """The same path run backwards on the same interval."""
        a, b = self.interval
        return PotentialPath(
            (a + b) - self.times[::-1], self.knots[::-1], self.interpolation
        )


def linear_path(
    w: Potential,
    w_prime: Potential,
    interval: tuple[float, float] = (0.0, 1.0),
    steps: int = 1,
) -> PotentialPath:
    """The straight path (1 − s)w + s·w′, sampled at ``steps`` + 1 equidistant knots."""
    times = np.linspace(interval[0], interval[1], steps + 1)
    inner = [w.interpolate(w_prime, k / steps) for k in range(1, steps)]
    knots = [w, *inner, w_prime]
    return PotentialPath(times, tuple(knots))


@dataclass(frozen=True, eq=False)
class PathVelocity:
    """u̇ of a path.

    Piecewise-linear paths carry one field per interval (the right derivative on
    [t_i, t_{i+1})); solver-native paths carry one field per knot.
    """

    times: NDArray[np.float64]
    values: NDArray[np.float64]
    per_interval: bool

    def at_knot(self, i: int) -> GridField:
        """Right derivative at knot i (left derivative at the final knot)."""
        if self.per_interval:
            return self.values[min(i, self.values.shape[0] - 1)]
        return self.values[i]

    def knot_values(self) -> NDArray[np.float64]:
        if self.per_interval:
            return np.concatenate((self.values, self.values[-1:]))
        return self.values


def _time_derivative(
    path: PotentialPath, fields: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Per-knot time derivative of knot-aligned fields, matching the path type."""
    if path.interpolation is Interpolation.PIECEWISE_LINEAR:
        quotients = np.diff(fields, axis=0) / np.diff(path.times)[:, None, None]
        return np.concatenate((quotients, quotients[-1:]))
    edge_order = 2 if fields.shape[0] >= 3 else 1
    return np.gradient(fields, path.times, axis=0, edge_order=edge_order)


def velocity(path: PotentialPath) -> PathVelocity:
    fields = path.fields
    if path.interpolation is Interpolation.PIECEWISE_LINEAR:
        quotients = np.diff(fields, axis=0) / np.diff(path.times)[:, None, None]
        return PathVelocity(path.times, quotients, per_interval=True)
    return PathVelocity(path.times, _time_derivative(path, fields), per_interval=False)


def covariant_derivative(
    path: PotentialPath, fields: Sequence[ArrayLike] | NDArray[np.float64]
) -> NDArray[np.float64]:
    """∇_t ξ = ξ̇ − (1/2)(du̇, dξ)_{u(t)} at every knot."""
    xi = np.asarray(fields, dtype=np.float64)
    if xi.shape[0] != len(path.knots):
        raise ValueError("field and path must share knots")
    xi_dot = _time_derivative(path, xi)
    u_dot = velocity(path).knot_values()
    out = np.empty_like(xi)
    for i, knot in enumerate(path.knots):
        out[i] = xi_dot[i] - 0.5 * inner_product_du(knot, u_dot[i], xi[i])
    return out


@dataclass(frozen=True, eq=False)
class TransportMap:
    """Image φ(x) of every grid node, stored unwrapped (continuous in x)."""

    grid: Grid
    target_x: GridField
    target_y: GridField

    @classmethod
    def identity(cls, grid: Grid) -> TransportMap:
        x, y = grid.nodes()
        return cls(grid, x, y)

    def displacement(self) -> Positions:
        x, y = self.grid.nodes()
        return self.target_x - x, self.target_y - y

    def wrapped(self) -> Positions:
        """Targets reduced to the fundamental domain [0, 1)²."""
        return np.mod(self.target_x, 1.0), np.mod(self.target_y, 1.0)

    def is_identity(self) -> bool:
        dx, dy = self.displacement()
        return not (np.any(dx) or np.any(dy))

    @cached_property
    def jacobian(self) -> GridField:
        """det Dφ from derivatives of the periodic displacement (grid scheme)."""
        dx, dy = self.displacement()
        dx_x, dx_y = self.grid.gradient(dx)
        dy_x, dy_y = self.grid.gradient(dy)
        return (1.0 + dx_x) * (1.0 + dy_y) - dx_y * dy_x


def _sample_bilinear(field: GridField, x: GridField, y: GridField) -> GridField:
    n = field.shape[-1]
    return ndimage.map_coordinates(field, [x * n, y * n], order=1, mode="grid-wrap")


def _sample_trigonometric(field: GridField, x: GridField, y: GridField) -> GridField:
    n = field.shape[-1]
    coeffs = np.fft.fft2(field) / (n * n)
    k = np.fft.fftfreq(n, d=1.0 / n)
    ex = np.exp(2j * np.pi * np.multiply.outer(x.ravel(), k))
    ey = np.exp(2j * np.pi * np.multiply.outer(y.ravel(), k))
    values = np.einsum("pa,ab,pb->p", ex, coeffs, ey, optimize=True)
    return values.real.reshape(x.shape)


def interpolate(field: ArrayLike, grid: Grid, x: GridField, y: GridField) -> GridField:
    """Evaluate a periodic grid field at arbitrary points.

    Spectral grids use trigonometric interpolation, difference grids bilinear.
    """
    arr = np.asarray(field, dtype=np.float64)
    if np.all(arr == arr.flat[0]):
        return np.full(x.shape, arr.flat[0])
    if grid.scheme is DerivativeScheme.SPECTRAL:
        return _sample_trigonometric(arr, x, y)
    return _sample_bilinear(arr, x, y)


def pullback(xi: ArrayLike, phi: TransportMap) -> GridField:
    """ξ∘φ on the grid nodes."""
    if phi.is_identity():
        return np.array(xi, dtype=np.float64, copy=True)
    return interpolate(xi, phi.grid, *phi.wrapped())


def compose_maps(first: TransportMap, second: TransportMap) -> TransportMap:
    """second∘first."""
    dx, dy = second.displacement()
    x, y = first.wrapped()
    return TransportMap(
        first.grid,
        first.target_x + interpolate(dx, first.grid, x, y),
        first.target_y + interpolate(dy, first.grid, x, y),
    )


def flow_distance(a: TransportMap, b: TransportMap) -> float:
    """Sup over nodes of the torus distance between the two images."""
    dx = a.target_x - b.target_x
    dy = a.target_y - b.target_y
    dx -= np.round(dx)
    dy -= np.round(dy)
    return float(np.max(np.hypot(dx, dy)))


def _rk4(
    field: FlowField,
    positions: Positions,
    t0: float,
    t1: float,
    substeps: int,
    cell_width: float,
) -> Positions:
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    x, y = positions
    h = (t1 - t0) / substeps
    for k in range(substeps):
        t = t0 + k * h
        k1x, k1y = field(t, x, y)
        k2x, k2y = field(t + 0.5 * h, x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y = field(t + 0.5 * h, x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y = field(t + h, x + h * k3x, y + h * k3y)
        step_x = (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        step_y = (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        moved = float(max(np.max(np.abs(step_x)), np.max(np.abs(step_y))))
        if moved > cell_width:
            raise StepUnstable(moved, cell_width)
        x = x + step_x
        y = y + step_y
    return x, y


def _transport_field(path: PotentialPath, interval: int) -> FlowField:
    """V_t = −∇u̇/(2ρ_{u(t)}) on one knot interval, with ρ linear in t."""
    grid = path.grid
    t_lo, t_hi = path.times[interval], path.times[interval + 1]
    rho_lo, rho_hi = path.densities[interval], path.densities[interval + 1]
    vel = velocity(path)
    if vel.per_interval:
        g = grid.gradient(vel.values[interval])
        grad_lo, grad_hi = g, g
    else:
        grad_lo = grid.gradient(vel.values[interval])
        grad_hi = grid.gradient(vel.values[interval + 1])

    def field(t: float, x: GridField, y: GridField) -> Positions:
        s = (t - t_lo) / (t_hi - t_lo)
        rho = (1.0 - s) * rho_lo + s * rho_hi
        vx = -0.5 * ((1.0 - s) * grad_lo[0] + s * grad_hi[0]) / rho
        vy = -0.5 * ((1.0 - s) * grad_lo[1] + s * grad_hi[1]) / rho
        return _sample_bilinear(vx, x, y), _sample_bilinear(vy, x, y)

    return field


def flow_between(
    path: PotentialPath, start: int, stop: int, substeps: int = 4
) -> TransportMap:
    """Map carrying the nodes from knot ``start`` to knot ``stop`` (either direction)."""
    grid = path.grid
    positions = grid.nodes()
    direction = 1 if stop >= start else -1
    for i in range(start, stop, direction):
        interval = i if direction > 0 else i - 1
        positions = _rk4(
            _transport_field(path, interval),
            positions,
            float(path.times[i]),
            float(path.times[i + direction]),
            substeps,
            grid.cell_width,
        )
    return TransportMap(grid, *positions)


def transport_flow(path: PotentialPath, substeps: int = 4) -> list[TransportMap]:
    """φ(t_i) for every knot, φ(t_0) the identity.

    Raises:
        StepUnstable: if a substep moves a point further than one cell.
    """
    grid = path.grid
    maps = [TransportMap.identity(grid)]
    positions = grid.nodes()
    for i in range(path.steps):
        positions = _rk4(
            _transport_field(path, i),
            positions,
            float(path.times[i]),
            float(path.times[i + 1]),
            substeps,
            grid.cell_width,
        )
        maps.append(TransportMap(grid, *positions))
    logger.debug(
        f"[transport] integrated {path.steps} intervals with {substeps} substeps",
        extra={"n": grid.n},
    )
    return maps


def parallel_transport(
    path: PotentialPath, eta: ArrayLike, substeps: int = 4
) -> NDArray[np.float64]:
    """The parallel field ξ with ξ(t_0) = η, i.e. ξ(t_i) = η∘φ(t_i)^{-1} per knot."""
    base = np.asarray(eta, dtype=np.float64)
    out = [base.copy()]
    for i in range(1, len(path.knots)):
        inverse = flow_between(path, i, 0, substeps)
        out.append(pullback(base, inverse))
    return np.stack(out)


def pullback_density_residual(
    phi: TransportMap, rho_start: ArrayLike, rho_end: ArrayLike
) -> float:
    """sup |ρ_end(φ(x))·det Dφ(x) − ρ_start(x)|."""
    pulled = pullback(rho_end, phi)
    return float(np.max(np.abs(pulled * phi.jacobian - np.asarray(rho_start))))


def _as_family(zeta: TimeFamily | ArrayLike) -> TimeFamily:
    if callable(zeta):
        return zeta
    frozen = np.asarray(zeta, dtype=np.float64)
    return lambda _t: frozen


def _hamiltonian_field(u: Potential, zeta: TimeFamily) -> FlowField:
    def field(t: float, x: GridField, y: GridField) -> Positions:
        vx, vy = sgrad(u, zeta(t))
        return _sample_bilinear(vx, x, y), _sample_bilinear(vy, x, y)

    return field


def symplectic_flow(
    zeta: TimeFamily | ArrayLike,
    u: Potential,
    substeps: int = 32,
    span: tuple[float, float] = (0.0, 1.0),
) -> TransportMap:
    """Time-1 map of the Hamiltonian field sgrad_u ζ_t = (−∂_yζ_t, ∂_xζ_t)/ρ_u."""
    positions = _rk4(
        _hamiltonian_field(u, _as_family(zeta)),
        u.grid.nodes(),
        span[0],
        span[1],
        substeps,
        u.grid.cell_width,
    )
    return TransportMap(u.grid, *positions)


def composition_scheme(
    zeta: TimeFamily | ArrayLike, k: int, u: Potential, substeps: int = 8
) -> TransportMap:
    """φ^{(k−1)/k}_{1/k} ∘ … ∘ φ^0_{1/k}.

    φ^s_τ is the time-τ flow of the frozen field sgrad_u ζ_s, so the composition
    follows ζ only at the k sample times j/k; it approaches the true time-1 flow as
    k grows. k = 1 is a single macro step with ζ_0.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    family = _as_family(zeta)
    positions = u.grid.nodes()
    for j in range(k):
        frozen = family(j / k)
        positions = _rk4(
            _hamiltonian_field(u, lambda _t, f=frozen: f),
            positions,
            j / k,
            (j + 1) / k,
            substeps,
            u.grid.cell_width,
        )
    return TransportMap(u.grid, *positions)
