"""Named verification suites driven by an :class:`ExperimentConfig`.

Each suite is a function of the shared :class:`SuiteContext` returning its reports,
negative controls included. ``run_suites`` executes the requested suites in order.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from mabuchi_action_lab.core.errors import ConfigError
from mabuchi_action_lab.core.models import (
    ExperimentConfig,
    GeodesicOptions,
    VerificationReport,
)
from mabuchi_action_lab.dynamics.geodesics import (
    EpsGeodesicProblem,
    monotone_limit_check,
    weak_geodesic,
)
from mabuchi_action_lab.dynamics.transport import (
    PotentialPath,
    TimeFamily,
    composition_scheme,
    flow_distance,
    linear_path,
    symplectic_flow,
)
from mabuchi_action_lab.fixtures import resolve_fixture
from mabuchi_action_lab.geometry.grid import (
    Grid,
    GridField,
    Potential,
    make_potential,
    random_trigonometric_field,
)
from mabuchi_action_lab.variational.action import competitor_paths
from mabuchi_action_lab.variational.lagrangians import Lagrangian, parse_lagrangian
from mabuchi_action_lab.variational.verification import (
    action_convexity_control,
    jacobi_convexity_control,
    least_action_control,
    perturbed_path,
    verify_action_convexity,
    verify_comparison_inequality,
    verify_jacobi_convexity,
    verify_least_action,
    verify_least_action_continuity,
    verify_mean_action_bound,
    verify_noether,
)

logger = logging.getLogger(__name__)

REFERENCE_SUBSTEPS = 256
COMPOSITION_AMPLITUDE = 0.05


@dataclass
class SuiteContext:
    """Inputs shared by every suite of one run; geodesics are solved once, lazily."""

    config: ExperimentConfig
    grid: Grid
    w: Potential
    w_prime: Potential
    specs: list[Lagrangian] = field(default_factory=list)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> SuiteContext:
        grid = Grid(config.grid.n, config.grid.scheme)
        w, w_prime = resolve_fixture(config.fixture, grid)
        specs = []
        for index, text in enumerate(config.lagrangian.all_specs()):
            try:
                specs.append(parse_lagrangian(text))
            except (ValueError, OSError) as exc:
                where = f"lagrangian.extra.{index - 1}" if index else "lagrangian.spec"
                raise ConfigError(where, str(exc)) from exc
        return cls(config, grid, w, w_prime, specs)

    @property
    def options(self) -> GeodesicOptions:
        return self.config.geodesic

    @property
    def T(self) -> float:
        return self.options.T

    @property
    def tol(self) -> float:
        return self.config.verification.tolerance

    @cached_property
    def geodesic(self) -> PotentialPath:
        return weak_geodesic(self.w, self.w_prime, (0.0, self.T), options=self.options)

    def shifted(self, u: Potential, c: float) -> Potential:
        return make_potential(u.field + c, self.grid)

    def decreasing_sequence(self, u: Potential) -> list[Potential]:
        length = self.config.verification.sequence_length
        return [self.shifted(u, 0.1 / 2**j) for j in range(length)]

    def direction(self, seed: int) -> GridField:
        """Random band-limited field scaled so ±δ-perturbations stay potentials."""
        rng = np.random.default_rng(seed)
        shape = random_trigonometric_field(self.grid, rng)
        swing = float(np.max(np.abs(self.grid.laplacian(shape))))
        return shape / max(swing, 1.0)


type Suite = Callable[[SuiteContext], list[VerificationReport]]


# Principle of least action
def least_action_suite(ctx: SuiteContext) -> list[VerificationReport]:
    v = ctx.config.verification
    reports = []
    for spec in ctx.specs:
        for seed in v.seeds:
            reports.append(
                verify_least_action(
                    spec, ctx.w, ctx.w_prime, ctx.T, v.count, seed, ctx.tol,
                    v.knot_budget, ctx.options,
                )
            )
        reports.append(
            least_action_control(
                spec, ctx.w, ctx.w_prime, ctx.T, min(v.count, 10), v.seeds[0],
                ctx.tol, v.knot_budget, ctx.options,
            )
        )
    return reports


# Triangle and mean-action comparisons
def comparison_suite(ctx: SuiteContext) -> list[VerificationReport]:
    v = ctx.config.verification
    epsilon = ctx.options.epsilon or 0.01
    u_path = competitor_paths(
        ctx.w, ctx.w_prime, ctx.T, 1, v.seeds[0], max(v.knot_budget, 1)
    )[0]
    apex = ctx.shifted(ctx.w.interpolate(ctx.w_prime, 0.5), -0.1)
    reports = []
    for spec in ctx.specs:
        reports.append(verify_mean_action_bound(spec, u_path, ctx.tol, ctx.options))
        if not spec.positively_homogeneous:
            logger.warning(
                f"[comparison] {spec} is not positively homogeneous; "
                "running the mean-action bound only",
                extra={"suite": "comparison"},
            )
            continue
        for vertex in (ctx.w, apex):
            reports.append(
                verify_comparison_inequality(
                    spec, u_path, vertex, ctx.T, epsilon, ctx.tol, ctx.options
                )
            )
        detour = _detour_path(ctx)
        reports.append(
            verify_comparison_inequality(
                spec, detour, ctx.w, ctx.T, epsilon, ctx.tol, ctx.options, reverse=True
            )
        )
    return reports


def _detour_path(ctx: SuiteContext) -> PotentialPath:
    """w → w′ with a large spatially constant swing in the middle."""
    steps = ctx.options.time_steps
    base = linear_path(ctx.w, ctx.w_prime, (0.0, ctx.T), steps)
    bumps = 0.5 * np.sin(np.pi * base.times / ctx.T)
    knots = tuple(ctx.shifted(k, float(b)) for k, b in zip(base.knots, bumps))
    return PotentialPath(
        base.times, (base.knots[0], *knots[1:-1], base.knots[-1])
    )


# Noether constancy along the weak geodesic
def noether_suite(ctx: SuiteContext) -> list[VerificationReport]:
    path = ctx.geodesic
    seed = ctx.config.verification.seeds[0]
    control = perturbed_path(path, seed=seed)
    reports = []
    for spec in ctx.specs:
        reports.extend(verify_noether(spec, path, ctx.tol))
        constancy = verify_noether(spec, control, ctx.tol)[0]
        reports.append(
            constancy.model_copy(
                update={
                    "check": f"{constancy.check}:perturbed",
                    "expect_failure": True,
                }
            )
        )
    return reports


# Convexity along ε-Jacobi fields
def jacobi_convexity_suite(ctx: SuiteContext) -> list[VerificationReport]:
    v = ctx.config.verification
    reports = []
    for epsilon in v.jacobi_epsilons:
        problem = EpsGeodesicProblem(
            ctx.w,
            ctx.w_prime,
            epsilon=epsilon,
            interval=(0.0, ctx.T),
            time_steps=ctx.options.time_steps,
            solver_tol=ctx.options.solver_tol,
            max_iter=ctx.options.max_iter,
        )
        for seed in v.seeds:
            dir_a = ctx.direction(seed)
            dir_b = ctx.direction(seed + 1)
            for spec in ctx.specs:
                report = verify_jacobi_convexity(
                    spec, problem, dir_a, dir_b, v.jacobi_delta, v.jacobi_tolerance
                )
                provenance = {**report.provenance, "seed": seed}
                reports.append(report.model_copy(update={"provenance": provenance}))
    rng = np.random.default_rng(v.seeds[0])
    eta = 5.0 * random_trigonometric_field(ctx.grid, rng)
    for spec in ctx.specs:
        if spec.positively_homogeneous:
            reports.append(
                jacobi_convexity_control(spec, ctx.geodesic, eta, v.jacobi_tolerance)
            )
    return reports


# Convexity of least action between two geodesics
def action_convexity_suite(ctx: SuiteContext) -> list[VerificationReport]:
    v = ctx.config.verification
    reverse = weak_geodesic(
        ctx.shifted(ctx.w_prime, 0.1), ctx.w, (0.0, ctx.T), options=ctx.options
    )
    spacing = ctx.T / 4.0
    centers = np.linspace(spacing, ctx.T - spacing, v.triples).tolist()
    reports = [
        verify_action_convexity(
            spec, ctx.geodesic, reverse, ctx.T, ctx.tol, centers, spacing, ctx.options
        )
        for spec in ctx.specs
    ]
    quadratic = parse_lagrangian("orlicz:p2")
    lo = linear_path(ctx.w, ctx.w, (0.0, ctx.T))
    hi = linear_path(ctx.w, ctx.shifted(ctx.w, 1.0), (0.0, ctx.T))
    reports.append(
        action_convexity_control(quadratic, lo, hi, ctx.T, ctx.tol, ctx.options)
    )
    return reports


# Continuity of least action along decreasing endpoints
def continuity_suite(ctx: SuiteContext) -> list[VerificationReport]:
    w_seq = ctx.decreasing_sequence(ctx.w)
    w_prime_seq = ctx.decreasing_sequence(ctx.w_prime)
    stuck = [ctx.shifted(ctx.w, 0.5)] * len(w_seq)
    reports = []
    for spec in ctx.specs:
        reports.append(
            verify_least_action_continuity(
                spec, w_seq, w_prime_seq, ctx.w, ctx.w_prime, ctx.T,
                ctx.tol, ctx.options,
            )
        )
        reports.append(
            verify_least_action_continuity(
                spec, stuck, [ctx.w_prime] * len(stuck), ctx.w, ctx.w_prime, ctx.T,
                ctx.tol, ctx.options, expect_failure=True,
            )
        )
    return reports


# Monotone limits of weak geodesics
def monotone_limits_suite(ctx: SuiteContext) -> list[VerificationReport]:
    w_seq = ctx.decreasing_sequence(ctx.w)
    w_prime_seq = ctx.decreasing_sequence(ctx.w_prime)
    report = monotone_limit_check(
        w_seq, w_prime_seq, ctx.w, ctx.w_prime, ctx.tol, ctx.options
    )
    control = monotone_limit_check(
        w_seq[::-1], w_prime_seq[::-1], ctx.w, ctx.w_prime, ctx.tol, ctx.options
    )
    return [
        report,
        control.model_copy(
            update={"check": "geodesic_monotonicity:increasing", "expect_failure": True}
        ),
    ]


# Composition scheme against the integrated Hamiltonian flow
def _hamiltonian_family(grid: Grid, seed: int) -> TimeFamily:
    rng = np.random.default_rng(seed)
    first = COMPOSITION_AMPLITUDE * random_trigonometric_field(grid, rng)
    second = COMPOSITION_AMPLITUDE * random_trigonometric_field(grid, rng)
    return lambda t: np.cos(np.pi * t) * first + np.sin(np.pi * t) * second


def composition_suite(ctx: SuiteContext) -> list[VerificationReport]:
    v = ctx.config.verification
    steps = sorted(v.composition_steps)
    reports = []
    for seed in v.seeds:
        zeta = _hamiltonian_family(ctx.grid, seed)
        reference = symplectic_flow(zeta, ctx.w, substeps=REFERENCE_SUBSTEPS)
        frozen = symplectic_flow(zeta(0.0), ctx.w, substeps=REFERENCE_SUBSTEPS)
        maps = [composition_scheme(zeta, k, ctx.w) for k in steps]
        errors = [flow_distance(m, reference) for m in maps]
        growth = max((b - a for a, b in zip(errors, errors[1:])), default=0.0)
        provenance = {"seed": seed, "steps": steps, "n": ctx.grid.n}
        reports.append(
            VerificationReport(
                experiment="composition",
                check="monotone_decay",
                value=errors[-1],
                worst_violation=max(0.0, growth),
                tolerance=0.0,
                samples=errors,
                provenance=provenance,
            )
        )
        reports.append(
            VerificationReport(
                experiment="composition",
                check="converges_to_flow",
                value=errors[-1],
                worst_violation=errors[-1],
                tolerance=ctx.tol,
                samples=errors,
                provenance=provenance,
            )
        )
        frozen_gap = flow_distance(maps[-1], frozen)
        reports.append(
            VerificationReport(
                experiment="composition",
                check="converges_to_flow:frozen-reference",
                value=frozen_gap,
                worst_violation=frozen_gap,
                tolerance=ctx.tol,
                expect_failure=True,
                provenance=provenance,
            )
        )
    return reports


SUITES: dict[str, Suite] = {
    "least_action": least_action_suite,
    "comparison": comparison_suite,
    "noether": noether_suite,
    "jacobi_convexity": jacobi_convexity_suite,
    "action_convexity": action_convexity_suite,
    "continuity": continuity_suite,
    "monotone_limits": monotone_limits_suite,
    "composition": composition_suite,
}


def resolve_suites(names: Sequence[str]) -> list[str]:
    """Validate suite names, keeping order and dropping repeats."""
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        known = ", ".join(SUITES)
        raise ConfigError(
            "verification.suites", f"unknown suite(s) {unknown} ({known})"
        )
    if not names:
        raise ConfigError("verification.suites", "name at least one suite")
    return list(dict.fromkeys(names))


def run_suites(
    ctx: SuiteContext, names: Sequence[str]
) -> list[tuple[str, list[VerificationReport]]]:
    results = []
    for name in resolve_suites(names):
        logger.info(f"[verify] running suite {name}", extra={"suite": name})
        reports = SUITES[name](ctx)
        failed = sum(not r.outcome_ok for r in reports)
        logger.info(
            f"[verify] suite {name}: {len(reports) - failed} of {len(reports)} "
            "checks as expected",
            extra={"suite": name, "failed": failed},
        )
        results.append((name, reports))
    return results
