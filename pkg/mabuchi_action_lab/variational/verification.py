"""Property checks on paths, geodesics and least actions, with negative controls.

Every check returns a :class:`VerificationReport`. Controls build a deliberately false
instance of the same inequality and are flagged ``expect_failure``.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Sequence
from dataclasses import replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mabuchi_action_lab.core.errors import HomogeneityRequired, NotKahler
from mabuchi_action_lab.core.models import GeodesicOptions, VerificationReport
from mabuchi_action_lab.core.parallel import map_in_batches
from mabuchi_action_lab.dynamics.geodesics import (
    EpsGeodesicProblem,
    jacobi_field,
    jacobi_residual,
    solve_epsilon_geodesic,
    weak_geodesic,
)
from mabuchi_action_lab.dynamics.transport import (
    Interpolation,
    PotentialPath,
    velocity,
)
from mabuchi_action_lab.geometry.grid import (
    Potential,
    make_potential,
    random_trigonometric_field,
    weighted_values,
)
from mabuchi_action_lab.geometry.rearrangement import rearrangement_distance

from .action import (
    LeastActionQuery,
    Quadrature,
    competitor_paths,
    least_action,
    path_action,
)
from .lagrangians import Lagrangian

logger = logging.getLogger(__name__)

COMPETITOR_SUBSTEPS = 4


def _initial_velocity(path: PotentialPath) -> NDArray[np.float64]:
    """One-sided second-order v̇(0) (first order for two knots)."""
    u = path.fields
    if u.shape[0] < 3:
        return (u[1] - u[0]) / (path.times[1] - path.times[0])
    return np.gradient(u[:3], path.times[:3], axis=0, edge_order=2)[0]


def _geodesic_leg(
    apex: Potential,
    end: Potential,
    T: float,
    epsilon: float,
    options: GeodesicOptions,
) -> PotentialPath | None:
    """ε-geodesic from ``apex`` to ``end`` on [0, T]; None for the constant leg."""
    if apex.same_field(end):
        return None
    problem = EpsGeodesicProblem(
        apex,
        end,
        epsilon=epsilon,
        interval=(0.0, T),
        time_steps=options.time_steps,
        solver_tol=options.solver_tol,
        max_iter=options.max_iter,
    )
    return solve_epsilon_geodesic(problem).path


def midpoint_convexity(
    values: ArrayLike,
    tol: float,
    *,
    experiment: str,
    check: str,
    expect_failure: bool = False,
) -> VerificationReport:
    """g_i ≤ (g_{i−1} + g_{i+1})/2 + tol for consecutive samples of equal spacing."""
    g = np.asarray(values, dtype=np.float64)
    excess = g[1:-1] - 0.5 * (g[:-2] + g[2:])
    return VerificationReport(
        experiment=experiment,
        check=check,
        value=float(np.max(excess, initial=0.0)),
        worst_violation=max(0.0, float(np.max(excess, initial=0.0))),
        tolerance=tol,
        expect_failure=expect_failure,
        samples=[float(x) for x in g],
    )


def verify_least_action(
    spec: Lagrangian,
    w: Potential,
    w_prime: Potential,
    T: float,
    count: int,
    seed: int,
    tol: float,
    knot_budget: int = 3,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """ℒ_T(w, w′) ≤ action of every seeded random competitor + tol."""
    options = options or GeodesicOptions()
    best = least_action(LeastActionQuery(w, w_prime, T, spec), options)
    competitors = competitor_paths(w, w_prime, T, count, seed, knot_budget)
    actions = map_in_batches(
        lambda p: path_action(spec, p, Quadrature.MIDPOINT, COMPETITOR_SUBSTEPS).value,
        competitors,
        label="least_action",
    )
    margins = [a - best for a in actions]
    logger.info(
        f"[least_action] {spec}: geodesic {best:.6g}, min margin {min(margins):.3e}",
        extra={"seed": seed, "count": count},
    )
    return VerificationReport(
        experiment="least_action",
        check=spec.describe(),
        value=best,
        worst_violation=max(0.0, -min(margins)),
        tolerance=tol,
        samples=margins,
        provenance={
            "seed": seed,
            "count": count,
            "knot_budget": knot_budget,
            "n": w.grid.n,
            "time_steps": options.time_steps,
        },
    )


def least_action_control(
    spec: Lagrangian,
    w: Potential,
    w_prime: Potential,
    T: float,
    count: int,
    seed: int,
    tol: float,
    knot_budget: int = 3,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """Claims the reverse: every detour is at most as expensive as the geodesic."""
    report = verify_least_action(
        spec, w, w_prime, T, count, seed, tol, max(knot_budget, 1), options
    )
    return report.model_copy(
        update={
            "check": f"{spec.describe()}:detour-cheaper",
            "worst_violation": max(0.0, max(report.samples)),
            "expect_failure": True,
        }
    )


def verify_comparison_inequality(
    spec: Lagrangian,
    u_path: PotentialPath,
    apex: Potential,
    T: float,
    epsilon: float,
    tol: float,
    options: GeodesicOptions | None = None,
    *,
    reverse: bool = False,
) -> VerificationReport:
    """(1/T)∫L∘u̇ ≥ L(v̇_b(0)) − L(v̇_a(0)) for ε-geodesic legs from a common apex.

    ``reverse`` asserts the opposite inequality; it is used as a negative control.

    Raises:
        HomogeneityRequired: if ``spec`` is not positively homogeneous.
    """
    if not spec.positively_homogeneous:
        raise HomogeneityRequired(spec.describe())
    options = options or GeodesicOptions()
    ends = [u_path.knots[0], u_path.knots[-1]]
    leg_a, leg_b = map_in_batches(
        lambda end: _geodesic_leg(apex, end, T, epsilon, options), ends, label="legs"
    )
    zero = np.zeros(apex.grid.shape)
    slope_a = zero if leg_a is None else _initial_velocity(leg_a)
    slope_b = zero if leg_b is None else _initial_velocity(leg_b)
    lhs = path_action(spec, u_path, Quadrature.MIDPOINT, COMPETITOR_SUBSTEPS).value / T
    rhs = spec.evaluate(apex, slope_b) - spec.evaluate(apex, slope_a)
    margin = lhs - rhs
    violation = max(0.0, margin) if reverse else max(0.0, -margin)
    return VerificationReport(
        experiment="comparison",
        check=f"{spec.describe()}:reversed" if reverse else spec.describe(),
        value=margin,
        worst_violation=violation,
        tolerance=tol,
        expect_failure=reverse,
        provenance={"epsilon": epsilon, "T": T, "n": apex.grid.n},
        details={"mean_action": lhs, "leg_difference": rhs},
    )


def verify_mean_action_bound(
    spec: Lagrangian,
    u_path: PotentialPath,
    tol: float,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """(1/T)∫L∘u̇ ≥ L(v̇(0)) for the weak geodesic v with the endpoints of ``u_path``."""
    options = options or GeodesicOptions()
    a, b = u_path.interval
    T = b - a
    start, end = u_path.knots[0], u_path.knots[-1]
    geodesic = weak_geodesic(start, end, (0.0, T), options=options)
    mean = path_action(spec, u_path, Quadrature.MIDPOINT, COMPETITOR_SUBSTEPS).value / T
    bound = spec.evaluate(start, _initial_velocity(geodesic))
    return VerificationReport(
        experiment="comparison",
        check=f"{spec.describe()}:mean-action",
        value=mean - bound,
        worst_violation=max(0.0, bound - mean),
        tolerance=tol,
        provenance={"T": T, "n": start.grid.n, "time_steps": options.time_steps},
        details={"mean_action": mean, "initial_cost": bound},
    )


def verify_noether(
    spec: Lagrangian,
    path: PotentialPath,
    tol: float,
    equidistribution_tol: float | None = None,
) -> list[VerificationReport]:
    """Constancy of L∘u̇ along a geodesic and pairwise equidistribution of the u̇(t).

    Returns two reports: the maximal deviation of L(u̇(t_i)) from its mean, and the
    maximal rearrangement distance between the velocity distributions at two knots.
    """
    u_dot = velocity(path).knot_values()
    costs = np.array([spec.evaluate(u, v) for u, v in zip(path.knots, u_dot)])
    deviation = float(np.max(np.abs(costs - costs.mean())))
    distributions = [weighted_values(u, v) for u, v in zip(path.knots, u_dot)]
    distances = [
        rearrangement_distance(p, q)
        for p, q in itertools.combinations(distributions, 2)
    ]
    spread = max(distances, default=0.0)
    provenance = {"n": path.grid.n, "time_steps": path.steps}
    return [
        VerificationReport(
            experiment="noether",
            check=f"{spec.describe()}:constancy",
            value=deviation,
            worst_violation=deviation,
            tolerance=tol,
            samples=[float(c) for c in costs],
            provenance=provenance,
        ),
        VerificationReport(
            experiment="noether",
            check="velocity_equidistribution",
            value=spread,
            worst_violation=spread,
            tolerance=tol if equidistribution_tol is None else equidistribution_tol,
            provenance=provenance,
        ),
    ]


def perturbed_path(
    path: PotentialPath, amplitude: float = 0.02, seed: int = 0
) -> PotentialPath:
    """A non-geodesic path with the same endpoints: interior knots get a sin(πs) bump.

    The bump has positive mean and is halved until every knot stays a potential.
    """
    rng = np.random.default_rng(seed)
    grid = path.grid
    bump = 1.0 + random_trigonometric_field(grid, rng)
    a, b = path.interval
    profile = np.sin(np.pi * (path.times - a) / (b - a))
    scale = amplitude
    for _ in range(50):
        try:
            inner = [
                make_potential(k.field + scale * p * bump, grid)
                for k, p in zip(path.knots[1:-1], profile[1:-1])
            ]
            knots = (path.knots[0], *inner, path.knots[-1])
            return PotentialPath(path.times, knots, Interpolation.SOLVER_NATIVE)
        except NotKahler:
            scale *= 0.5
    raise ValueError("could not perturb the path inside the potential space")


def verify_jacobi_convexity(
    spec: Lagrangian,
    problem: EpsGeodesicProblem,
    direction_a: ArrayLike,
    direction_b: ArrayLike,
    delta: float,
    tol: float,
) -> VerificationReport:
    """t ↦ L(ξ(t)) is midpoint convex along an ε-Jacobi field ξ."""
    tuned = replace(problem, solver_tol=min(problem.solver_tol, 1e-10))
    base = solve_epsilon_geodesic(tuned)
    xi = jacobi_field(tuned, direction_a, direction_b, delta)
    costs = [spec.evaluate(u, x) for u, x in zip(base.path.knots, xi)]
    report = midpoint_convexity(
        costs, tol, experiment="jacobi_convexity", check=spec.describe()
    )
    return report.model_copy(
        update={
            "provenance": {
                "epsilon": problem.epsilon,
                "delta": delta,
                "n": problem.grid.n,
                "time_steps": problem.time_steps,
            },
            "details": {"jacobi_residual": jacobi_residual(base, xi)},
        }
    )


def jacobi_convexity_control(
    spec: Lagrangian, path: PotentialPath, eta: ArrayLike, tol: float
) -> VerificationReport:
    """ξ(t) = sin(πs)·η is no Jacobi field; L∘ξ is concave for homogeneous L."""
    a, b = path.interval
    profile = np.sin(np.pi * (path.times - a) / (b - a))
    field = np.asarray(eta, dtype=np.float64)
    costs = [spec.evaluate(u, p * field) for u, p in zip(path.knots, profile)]
    return midpoint_convexity(
        costs,
        tol,
        experiment="jacobi_convexity",
        check=f"{spec.describe()}:non-jacobi",
        expect_failure=True,
    )


def _least_actions(
    spec: Lagrangian,
    pairs: Sequence[tuple[Potential, Potential]],
    S: float,
    options: GeodesicOptions,
) -> list[float]:
    return map_in_batches(
        lambda pair: least_action(LeastActionQuery(pair[0], pair[1], S, spec), options),
        pairs,
        label="least_actions",
    )


def verify_action_convexity(
    spec: Lagrangian,
    u_path: PotentialPath,
    v_path: PotentialPath,
    S: float,
    tol: float,
    centers: Sequence[float] | None = None,
    spacing: float | None = None,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """ℒ_S(u(t), v(t)) is midpoint convex in t on sampled triples t − Δ, t, t + Δ."""
    if not np.allclose(u_path.interval, v_path.interval):
        raise ValueError("u_path and v_path must share their interval")
    options = options or GeodesicOptions()
    a, b = u_path.interval
    spacing = spacing or (b - a) / 4.0
    if centers is None:
        centers = np.linspace(a + spacing, b - spacing, 3).tolist()
    triples = sorted((c - spacing, c, c + spacing) for c in centers)
    if triples[0][0] < a - 1e-12 or triples[-1][2] > b + 1e-12:
        raise ValueError("sampled triples leave the path interval")
    times = list(dict.fromkeys(t for triple in triples for t in triple))
    clamped = [min(max(t, a), b) for t in times]
    pairs = [(u_path.sample(t), v_path.sample(t)) for t in clamped]
    values = dict(zip(times, _least_actions(spec, pairs, S, options)))
    excess = [values[mid] - 0.5 * (values[lo] + values[hi]) for lo, mid, hi in triples]
    return VerificationReport(
        experiment="action_convexity",
        check=spec.describe(),
        value=max(excess),
        worst_violation=max(0.0, max(excess)),
        tolerance=tol,
        samples=excess,
        provenance={
            "S": S,
            "centers": list(centers),
            "spacing": spacing,
            "n": u_path.grid.n,
            "time_steps": options.time_steps,
        },
    )


def action_convexity_control(
    spec: Lagrangian,
    u_path: PotentialPath,
    v_path: PotentialPath,
    S: float,
    tol: float,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """Midpoint convexity of −ℒ_S(u(t), v(t)); fails wherever ℒ_S bends."""
    options = options or GeodesicOptions()
    a, b = u_path.interval
    times = np.linspace(a, b, 5)
    pairs = [(u_path.sample(float(t)), v_path.sample(float(t))) for t in times]
    values = _least_actions(spec, pairs, S, options)
    return midpoint_convexity(
        [-v for v in values],
        tol,
        experiment="action_convexity",
        check=f"{spec.describe()}:negated",
        expect_failure=True,
    )


def verify_least_action_continuity(
    spec: Lagrangian,
    w_seq: Sequence[Potential],
    w_prime_seq: Sequence[Potential],
    w: Potential,
    w_prime: Potential,
    T: float,
    tol: float,
    options: GeodesicOptions | None = None,
    *,
    expect_failure: bool = False,
) -> VerificationReport:
    """Gaps |ℒ_T(w_j, w′_j) − ℒ_T(w, w′)| must shrink and end below ``tol``.

    A gap may grow from one term to the next by at most ``tol``.
    """
    if len(w_seq) != len(w_prime_seq) or not w_seq:
        raise ValueError("endpoint sequences must be non-empty and equally long")
    options = options or GeodesicOptions()
    pairs = [*zip(w_seq, w_prime_seq), (w, w_prime)]
    values = _least_actions(spec, pairs, T, options)
    limit = values[-1]
    gaps = [abs(v - limit) for v in values[:-1]]
    rise = max((y - x for x, y in zip(gaps, gaps[1:])), default=0.0)
    return VerificationReport(
        experiment="continuity",
        check=(
            f"{spec.describe()}:non-convergent" if expect_failure else spec.describe()
        ),
        value=limit,
        worst_violation=max(gaps[-1], rise),
        tolerance=tol,
        expect_failure=expect_failure,
        samples=gaps,
        provenance={"T": T, "n": w.grid.n, "time_steps": options.time_steps},
        details={
            "monotone_gaps": bool(rise <= tol),
            "largest_rise": max(rise, 0.0),
            "final_gap": gaps[-1],
        },
    )
