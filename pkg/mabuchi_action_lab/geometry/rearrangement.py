"""Decreasing rearrangements of weighted grid functions.

A weighted set (values with positive cell masses) is summarised by its decreasing
rearrangement ξ*, a left-continuous decreasing step function on (0, M]. Everything
here is exact on step functions: comparisons and integrals run over the common
refinement of breakpoint sets, never over a quadrature grid.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mabuchi_action_lab.core.errors import MassMismatch

from .grid import WeightedValues

DEFAULT_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Value ``levels[j]`` on (breakpoints[j], breakpoints[j+1]]."""

    breakpoints: NDArray[np.float64]
    levels: NDArray[np.float64]

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 1 or lv.size == 0 or bp.shape != (lv.size + 1,):
            raise ValueError("need k >= 1 levels and k + 1 breakpoints")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(np.diff(lv) >= 0.0):
            raise ValueError("levels must decrease strictly")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", lv)

    @classmethod
    def constant(cls, level: float, mass: float = 1.0) -> StepFunction:
        return cls(np.array([0.0, mass]), np.array([level]))

    @property
    def total_mass(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def lengths(self) -> NDArray[np.float64]:
        return np.diff(self.breakpoints)

    def __len__(self) -> int:
        return int(self.levels.size)

    def __call__(self, s: ArrayLike) -> NDArray[np.float64]:
        """Evaluate at ``s``; at a breakpoint the level of the interval ending there."""
        idx = np.searchsorted(self.breakpoints[1:], np.asarray(s), side="left")
        return self.levels[np.clip(idx, 0, self.levels.size - 1)]

    def integral(
        self, fn: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None
    ) -> float:
        """∫_0^M fn(ξ*(s)) ds (identity when ``fn`` is None)."""
        values = self.levels if fn is None else fn(self.levels)
        return float(np.sum(values * self.lengths))

    def prefix_integrals(self) -> NDArray[np.float64]:
        """∫_0^{s_j} ξ* for every breakpoint s_0 = 0, …, s_k."""
        return np.concatenate(([0.0], np.cumsum(self.levels * self.lengths)))


@dataclass(frozen=True, eq=False)
class ThetaMap:
    """Measure-preserving assignment of entries to consecutive intervals of (0, M].

    Entry ``ordering[j]`` (a position in the source WeightedValues, living on cell
    ``cells[j]``) owns the interval (interval_bounds[j], interval_bounds[j+1]].
    """

    ordering: NDArray[np.int64]
    cells: NDArray[np.int64]
    interval_bounds: NDArray[np.float64]

    @property
    def total_mass(self) -> float:
        return float(self.interval_bounds[-1])

    def locate(self, s: ArrayLike) -> NDArray[np.int64]:
        """Index j of the interval containing each ``s``."""
        idx = np.searchsorted(self.interval_bounds[1:], np.asarray(s), side="left")
        return np.clip(idx, 0, self.ordering.size - 1)


def decreasing_rearrangement(wv: WeightedValues) -> StepFunction:
    """ξ* of a weighted set; equal values merge into one step."""
    order = np.argsort(-wv.values, kind="stable")
    values = wv.values[order]
    weights = wv.weights[order]
    starts = np.flatnonzero(np.concatenate(([True], values[1:] != values[:-1])))
    masses = np.add.reduceat(weights, starts)
    breakpoints = np.concatenate(([0.0], np.cumsum(masses)))
    return StepFunction(breakpoints, values[starts])


def _check_masses(mass_a: float, mass_b: float, tol: float) -> None:
    if abs(mass_a - mass_b) > tol * max(mass_a, mass_b, 1.0):
        raise MassMismatch(mass_a, mass_b)


def common_refinement(
    f: StepFunction, g: StepFunction
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Piece lengths and the values of f and g on the merged breakpoints.

    Pieces run up to the smaller of the two total masses.
    """
    total = min(f.total_mass, g.total_mass)
    cuts = np.union1d(f.breakpoints, g.breakpoints)
    cuts = np.append(cuts[cuts < total], total)
    lengths = np.diff(cuts)
    mids = cuts[:-1] + 0.5 * lengths
    return lengths, f(mids), g(mids)


def rearrangement_distance(
    a: WeightedValues | StepFunction, b: WeightedValues | StepFunction
) -> float:
    """L¹ distance ∫|a* − b*| ds; zero exactly for equidistributed inputs."""
    fa = a if isinstance(a, StepFunction) else decreasing_rearrangement(a)
    fb = b if isinstance(b, StepFunction) else decreasing_rearrangement(b)
    lengths, va, vb = common_refinement(fa, fb)
    return float(np.sum(lengths * np.abs(va - vb)))


def equidistributed(
    a: WeightedValues, b: WeightedValues, tol: float = DEFAULT_TOLERANCE
) -> bool:
    """True iff both weighted sets share their distribution function.

    Levels must agree within ``tol`` (relative to the largest level, floor 1) on every
    piece of the common refinement, up to pieces of total length ``tol``·M.

    Raises:
        MassMismatch: if total masses differ by more than ``tol``·M.
    """
    _check_masses(a.total_mass, b.total_mass, tol)
    fa = decreasing_rearrangement(a)
    fb = decreasing_rearrangement(b)
    lengths, va, vb = common_refinement(fa, fb)
    scale = max(
        1.0, float(np.max(np.abs(fa.levels))), float(np.max(np.abs(fb.levels)))
    )
    mismatched = np.abs(va - vb) > tol * scale
    mass = max(fa.total_mass, fb.total_mass)
    return bool(np.sum(lengths[mismatched]) <= tol * mass)


def theta_map(wv: WeightedValues, tie_break: ArrayLike | None = None) -> ThetaMap:
    """Order entries by value descending, ties by ``tie_break`` (default: cell index)."""
    keys = wv.cell_ids() if tie_break is None else np.asarray(tie_break)
    ordering = np.lexsort((keys, -wv.values)).astype(np.int64)
    bounds = np.concatenate(([0.0], np.cumsum(wv.weights[ordering])))
    return ThetaMap(ordering, wv.cell_ids()[ordering], bounds)


def pull_back(step: StepFunction, theta: ThetaMap) -> NDArray[np.float64]:
    """ξ*∘θ as one value per source entry, sampled at each entry's interval midpoint."""
    bounds = theta.interval_bounds
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    out = np.empty(theta.ordering.size)
    out[theta.ordering] = step(mids)
    return out


def _transfer_pieces(
    step: StepFunction, theta: ThetaMap
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.int64]]:
    total = min(step.total_mass, theta.total_mass)
    cuts = np.union1d(step.breakpoints, theta.interval_bounds)
    cuts = np.append(cuts[cuts < total], total)
    lengths = np.diff(cuts)
    mids = cuts[:-1] + 0.5 * lengths
    keep = lengths > 0.0
    positions = theta.ordering[theta.locate(mids[keep])]
    return step(mids[keep]), lengths[keep], positions


def theta_transfer(step: StepFunction, theta: ThetaMap) -> WeightedValues:
    """Carry a rearrangement class onto the measure space described by ``theta``.

    The result lives on the common refinement of the step breakpoints and the
    θ-intervals. Every piece remembers the target cell it falls in, so the result is
    equidistributed with ``step`` and is a function on the target cells, split where
    ``step`` jumps inside a cell.
    """
    values, lengths, positions = _transfer_pieces(step, theta)
    cells = theta.cells[np.argsort(theta.ordering)][positions]
    return WeightedValues(values, lengths, cells)


def _as_values(f: WeightedValues | ArrayLike) -> NDArray[np.float64]:
    if isinstance(f, WeightedValues):
        return f.values
    return np.asarray(f, dtype=np.float64).ravel()


def similarly_ordered(
    g: WeightedValues | ArrayLike, h: WeightedValues | ArrayLike
) -> bool:
    """(g(x) − g(y))(h(x) − h(y)) ≥ 0 for every pair, checked with one sort."""
    gv = _as_values(g)
    hv = _as_values(h)
    if gv.shape != hv.shape:
        raise ValueError("similarly_ordered needs both functions on the same cells")
    # sorted by g then h, h must never step down
    order = np.lexsort((hv, gv))
    return bool(np.all(np.diff(hv[order]) >= 0.0))


def hardy_littlewood_sup(
    f0: StepFunction, eta: WeightedValues, tol: float = DEFAULT_TOLERANCE
) -> float:
    """sup ∫ f η dμ over all f equidistributed with ``f0``, i.e. ∫ f0* η* ds.

    Raises:
        MassMismatch: if the masses of ``f0`` and ``eta`` differ.
    """
    _check_masses(f0.total_mass, eta.total_mass, tol)
    lengths, fv, ev = common_refinement(f0, decreasing_rearrangement(eta))
    return float(np.sum(lengths * fv * ev))


def maximizer(
    f0: StepFunction, eta: WeightedValues, tol: float = DEFAULT_TOLERANCE
) -> tuple[WeightedValues, WeightedValues]:
    """A rearrangement of ``f0`` attaining :func:`hardy_littlewood_sup`.

    Returns the maximiser together with ``eta`` restricted to the same refined
    pieces; the two are similarly ordered.
    """
    _check_masses(f0.total_mass, eta.total_mass, tol)
    values, lengths, positions = _transfer_pieces(f0, theta_map(eta))
    cells = eta.cell_ids()[positions]
    return (
        WeightedValues(values, lengths, cells),
        WeightedValues(eta.values[positions], lengths, cells),
    )
