"""Path actions ∫ L(u̇(t)) dt and least actions between two potentials."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from mabuchi_action_lab.core.errors import GenerationFailed, NotKahler
from mabuchi_action_lab.core.models import GeodesicOptions
from mabuchi_action_lab.dynamics.geodesics import weak_geodesic
from mabuchi_action_lab.dynamics.transport import (
    Interpolation,
    PotentialPath,
    linear_path,
)
from mabuchi_action_lab.geometry.grid import (
    Potential,
    make_potential,
    random_trigonometric_field,
)

from .lagrangians import Lagrangian

logger = logging.getLogger(__name__)

MAX_SHRINKAGES = 50


class Quadrature(enum.StrEnum):
    RIGHT_ENDPOINT = "right-endpoint"
    MIDPOINT = "midpoint"


@dataclass(frozen=True)
class ActionReport:
    value: float
    contributions: tuple[float, ...]
    quadrature: Quadrature


def _fractions(quadrature: Quadrature, substeps: int) -> np.ndarray:
    k = np.arange(1, substeps + 1, dtype=np.float64)
    if quadrature is Quadrature.MIDPOINT:
        return (k - 0.5) / substeps
    return k / substeps


def path_action(
    spec: Lagrangian,
    path: PotentialPath,
    quadrature: Quadrature | None = None,
    substeps: int = 1,
) -> ActionReport:
    """Composite quadrature of t ↦ L(u̇(t)) along ``path``.

    Piecewise-linear paths default to the right-endpoint rule on every segment
    (segment velocity, measure of the later knot). Solver-native paths use the
    midpoint rule with the secant velocity of each interval.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if quadrature is None:
        quadrature = (
            Quadrature.RIGHT_ENDPOINT
            if path.interpolation is Interpolation.PIECEWISE_LINEAR
            else Quadrature.MIDPOINT
        )
    quadrature = Quadrature(quadrature)
    fractions = _fractions(quadrature, substeps)
    contributions = []
    for left, right, t0, t1 in zip(
        path.knots[:-1], path.knots[1:], path.times[:-1], path.times[1:]
    ):
        dt = float(t1 - t0)
        secant = (right.field - left.field) / dt
        values = [
            spec.evaluate(left.interpolate(right, float(s)), secant) for s in fractions
        ]
        contributions.append(dt * math.fsum(values) / substeps)
    return ActionReport(math.fsum(contributions), tuple(contributions), quadrature)


@dataclass(frozen=True, eq=False)
class LeastActionQuery:
    w: Potential
    w_prime: Potential
    T: float
    spec: Lagrangian
    tol: float = 1e-4

    def __post_init__(self) -> None:
        if not self.T > 0.0:
            raise ValueError(f"T must be positive, got {self.T}")


def least_action(
    query: LeastActionQuery, options: GeodesicOptions | None = None
) -> float:
    """ℒ_T(w, w′) as the action of the connecting weak geodesic."""
    path = weak_geodesic(
        query.w, query.w_prime, (0.0, query.T), tol=query.tol, options=options
    )
    return path_action(query.spec, path).value


def least_action_bounds(
    spec: Lagrangian, w: Potential, w_prime: Potential, T: float
) -> tuple[float, float]:
    """A priori bracket of ℒ_T(w, w′).

    The connecting geodesic has |v̇| ≤ (M − m)/T with m, M the joint bounds of both
    endpoints, so convexity and the Lipschitz bound of L bracket every L(v̇).
    """
    if not T > 0.0:
        raise ValueError(f"T must be positive, got {T}")
    low = min(float(w.field.min()), float(w_prime.field.min()))
    high = max(float(w.field.max()), float(w_prime.field.max()))
    radius = (high - low) / T
    at_rest = spec.evaluate(w, np.zeros(w.grid.shape))
    spread = spec.lipschitz_bound(radius) * radius
    return T * (at_rest - spread), T * (at_rest + spread)


def _perturbed_knot(
    w: Potential,
    w_prime: Potential,
    fraction: float,
    rng: np.random.Generator,
    amplitude: float,
    max_mode: int,
    knot: int,
) -> Potential:
    base = (1.0 - fraction) * w.field + fraction * w_prime.field
    shape = random_trigonometric_field(w.grid, rng, max_mode)
    scale = amplitude
    for _ in range(MAX_SHRINKAGES):
        try:
            return make_potential(base + scale * shape, w.grid)
        except NotKahler:
            scale *= 0.5
    raise GenerationFailed(knot, MAX_SHRINKAGES)


def competitor_paths(
    w: Potential,
    w_prime: Potential,
    T: float,
    count: int,
    seed: int,
    knot_budget: int,
    amplitude: float = 0.05,
    max_mode: int = 2,
) -> list[PotentialPath]:
    """Random admissible piecewise-linear paths from w to w′ on [0, T].

    Every path has between one and ``knot_budget`` interior knots at random times.
    Each knot is the linear interpolant at an independently drawn fraction (a
    non-uniform reparametrisation of time) plus a band-limited perturbation, halved
    until the knot is a potential. ``knot_budget = 0`` gives only the linear path.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if knot_budget == 0:
        return [linear_path(w, w_prime, (0.0, T))]
    rng = np.random.default_rng(seed)
    paths = []
    for _ in range(count):
        k = int(rng.integers(1, knot_budget + 1))
        times = np.unique(rng.uniform(0.0, T, size=k))
        times = times[(times > 0.0) & (times < T)]
        fractions = np.sort(rng.uniform(0.0, 1.0, size=times.size))
        inner = [
            _perturbed_knot(w, w_prime, float(s), rng, amplitude, max_mode, j + 1)
            for j, s in enumerate(fractions)
        ]
        paths.append(
            PotentialPath(
                np.concatenate(([0.0], times, [T])), (w, *inner, w_prime)
            )
        )
    logger.debug(
        f"[competitors] generated {count} paths",
        extra={"seed": seed, "knot_budget": knot_budget},
    )
    return paths
