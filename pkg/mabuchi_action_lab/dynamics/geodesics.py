"""ε-geodesics, their ε → 0 limits and Jacobi fields on the space-time grid.

An ε-geodesic solves ü − |∇u̇|²/(2ρ_u) = ε/ρ_u on [a, b] with prescribed endpoints.
The solver works with the multiplied form

    G_i = ρ_i·D²u_i − ½|∇u̇_i|² − ε = 0      (interior knots i = 1, …, m − 1)

with centred time differences, and reports the residual sup|G/ρ| of the divided form.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.linalg import LinearOperator, gmres

from mabuchi_action_lab.core.errors import (
    NonConvergence,
    NotKahler,
    PerturbationTooLarge,
    PositivityLoss,
)
from mabuchi_action_lab.core.models import GeodesicOptions, VerificationReport
from mabuchi_action_lab.core.parallel import map_in_batches
from mabuchi_action_lab.geometry.grid import (
    Grid,
    Potential,
    f_density,
    make_potential,
    poisson_bracket,
)

from .transport import Interpolation, PotentialPath, covariant_derivative, velocity

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
RELAXATION_SWEEPS = 20
GMRES_RESTART = 40

type SpaceTime = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class EpsGeodesicProblem:
    endpoint_a: Potential
    endpoint_b: Potential
    epsilon: float
    interval: tuple[float, float] = (0.0, 1.0)
    time_steps: int = 32
    solver_tol: float = 1e-8
    max_iter: int = 50

    def __post_init__(self) -> None:
        if self.endpoint_a.grid != self.endpoint_b.grid:
            raise ValueError("endpoints must live on the same grid")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.time_steps < 2:
            raise ValueError(f"time_steps must be >= 2, got {self.time_steps}")
        if self.solver_tol <= 0.0:
            raise ValueError("solver_tol must be positive")
        if not self.interval[0] < self.interval[1]:
            raise ValueError(f"empty interval {self.interval}")

    @property
    def grid(self) -> Grid:
        return self.endpoint_a.grid

    @property
    def times(self) -> NDArray[np.float64]:
        return np.linspace(self.interval[0], self.interval[1], self.time_steps + 1)

    def reversed(self) -> EpsGeodesicProblem:
        """Same problem with the endpoints swapped."""
        return replace(self, endpoint_a=self.endpoint_b, endpoint_b=self.endpoint_a)

    def with_endpoints(self, u_a: Potential, u_b: Potential) -> EpsGeodesicProblem:
        return replace(self, endpoint_a=u_a, endpoint_b=u_b)


@dataclass(frozen=True, eq=False)
class GeodesicSolution:
    path: PotentialPath
    residual_norm: float
    epsilon: float
    iterations: int
    residual_history: tuple[float, ...] = ()


class _SpaceTimeSystem:
    """Discrete equations on the interior knots with Jacobian and preconditioner."""

    def __init__(self, problem: EpsGeodesicProblem) -> None:
        self.grid = problem.grid
        self.epsilon = problem.epsilon
        self.dt = (problem.interval[1] - problem.interval[0]) / problem.time_steps
        self.u_a = problem.endpoint_a.field
        self.u_b = problem.endpoint_b.field
        self.shape = (problem.time_steps - 1, *self.grid.shape)

    def assemble(self, interior: SpaceTime) -> SpaceTime:
        return np.concatenate((self.u_a[None], interior, self.u_b[None]))

    def densities(self, interior: SpaceTime) -> SpaceTime:
        return self.grid.density(interior)

    def residual(self, interior: SpaceTime, rho: SpaceTime) -> SpaceTime:
        u = self.assemble(interior)
        second = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / self.dt**2
        vx, vy = self.grid.gradient((u[2:] - u[:-2]) / (2.0 * self.dt))
        return rho * second - 0.5 * (vx**2 + vy**2) - self.epsilon

    def jacobian(self, interior: SpaceTime, rho: SpaceTime) -> LinearOperator:
        u = self.assemble(interior)
        second = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / self.dt**2
        vx, vy = self.grid.gradient((u[2:] - u[:-2]) / (2.0 * self.dt))
        size = int(np.prod(self.shape))

        def matvec(vec: NDArray[np.float64]) -> NDArray[np.float64]:
            d = vec.reshape(self.shape)
            edge = np.zeros((1, *self.shape[1:]))
            padded = np.concatenate((edge, d, edge))
            d_second = (padded[2:] - 2.0 * d + padded[:-2]) / self.dt**2
            dvx, dvy = self.grid.gradient((padded[2:] - padded[:-2]) / (2.0 * self.dt))
            out = (
                rho * d_second
                + 0.5 * self.grid.laplacian(d) * second
                - (vx * dvx + vy * dvy)
            )
            return out.ravel()

        return LinearOperator((size, size), matvec=matvec, dtype=np.float64)

    def preconditioner(self, interior: SpaceTime, rho: SpaceTime) -> LinearOperator:
        """Mode-wise tridiagonal solve with space-averaged coefficients."""
        u = self.assemble(interior)
        second = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / self.dt**2
        rho_bar = rho.mean(axis=(1, 2))[:, None, None]
        curvature = np.maximum(second.mean(axis=(1, 2)), 0.0)[:, None, None]
        off = rho_bar / self.dt**2
        diag = -2.0 * off - 0.5 * curvature * self.grid.laplacian_eigenvalues[None]
        size = int(np.prod(self.shape))

        def solve(vec: NDArray[np.float64]) -> NDArray[np.float64]:
            rhs = np.fft.fft2(vec.reshape(self.shape), axes=(1, 2))
            x = _thomas(off, diag, off, rhs)
            return np.fft.ifft2(x, axes=(1, 2)).real.ravel()

        return LinearOperator((size, size), matvec=solve, dtype=np.float64)


def _thomas(
    lower: NDArray[np.float64],
    diag: NDArray[np.float64],
    upper: NDArray[np.float64],
    rhs: NDArray[np.complex128],
) -> NDArray[np.complex128]:
    """Batched tridiagonal solve along axis 0."""
    n = rhs.shape[0]
    c = np.empty(diag.shape)
    d = np.empty_like(rhs)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / denom
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom
    x = np.empty_like(rhs)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def _scaled_norm(g: SpaceTime, rho: SpaceTime) -> float:
    return float(np.max(np.abs(g / rho)))


def _initial_guess(problem: EpsGeodesicProblem) -> SpaceTime:
    a, b = problem.interval
    t = problem.times[1:-1][:, None, None]
    s = (t - a) / (b - a)
    linear = (1.0 - s) * problem.endpoint_a.field + s * problem.endpoint_b.field
    return linear + 0.5 * problem.epsilon * (t - a) * (t - b)


def _positivity_loss(problem: EpsGeodesicProblem, rho: SpaceTime) -> PositivityLoss:
    knot, i, j = np.unravel_index(int(np.argmin(rho)), rho.shape)
    return PositivityLoss(float(problem.times[knot + 1]), (int(i), int(j)))


def _relax(
    system: _SpaceTimeSystem, problem: EpsGeodesicProblem, interior: SpaceTime
) -> SpaceTime:
    """Nonlinear Gauss–Seidel sweeps over the time slices."""
    u = system.assemble(interior.copy())
    dt2 = system.dt**2
    grid = system.grid
    for _ in range(RELAXATION_SWEEPS):
        for i in range(1, u.shape[0] - 1):
            rho = grid.density(u[i])
            second = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / dt2
            vx, vy = grid.gradient((u[i + 1] - u[i - 1]) / (2.0 * system.dt))
            g = rho * second - 0.5 * (vx**2 + vy**2) - system.epsilon
            update = g * dt2 / (2.0 * rho)
            for _ in range(MAX_HALVINGS):
                trial = u[i] + update
                if float(grid.density(trial).min()) > 0.0:
                    u[i] = trial
                    break
                update = 0.5 * update
            else:
                cell = np.unravel_index(int(np.argmin(grid.density(trial))), grid.shape)
                raise PositivityLoss(
                    float(problem.times[i]), (int(cell[0]), int(cell[1]))
                )
    return u[1:-1]


def solve_epsilon_geodesic(
    problem: EpsGeodesicProblem, warm_start: ArrayLike | None = None
) -> GeodesicSolution:
    """Damped Newton–Krylov solve of the ε-geodesic boundary value problem.

    Args:
        problem: Endpoints, ε > 0, interval and discretisation.
        warm_start: Optional full knot stack (m + 1 fields) whose interior seeds the
            iteration, e.g. the solution at a larger ε.

    Returns:
        A solver-native path with endpoints identical to the problem data.

    Raises:
        NonConvergence: if ``max_iter`` Newton steps do not reach ``solver_tol``.
        PositivityLoss: if no damped step keeps every knot inside the potential space.
    """
    if problem.epsilon <= 0.0:
        raise ValueError("the ε-geodesic solver needs epsilon > 0")
    system = _SpaceTimeSystem(problem)
    if warm_start is None:
        interior = _initial_guess(problem)
    else:
        interior = np.array(np.asarray(warm_start, dtype=np.float64)[1:-1], copy=True)
        if interior.shape != system.shape:
            raise ValueError("warm start does not match the problem discretisation")

    rho = system.densities(interior)
    if not float(rho.min()) > 0.0:
        raise _positivity_loss(problem, rho)
    g = system.residual(interior, rho)
    norm = _scaled_norm(g, rho)
    history = [norm]
    iterations = 0
    while norm > problem.solver_tol:
        if iterations >= problem.max_iter:
            raise NonConvergence(iterations, norm)
        iterations += 1
        step, info = gmres(
            system.jacobian(interior, rho),
            -g.ravel(),
            M=system.preconditioner(interior, rho),
            rtol=1e-8,
            atol=0.0,
            restart=GMRES_RESTART,
            maxiter=20,
        )
        if info < 0:
            raise NonConvergence(iterations, norm)
        step = step.reshape(system.shape)

        alpha = 1.0
        accepted = False
        positive_seen = False
        first_rho: SpaceTime | None = None
        for _ in range(MAX_HALVINGS):
            trial = interior + alpha * step
            trial_rho = system.densities(trial)
            if first_rho is None:
                first_rho = trial_rho
            if float(trial_rho.min()) > 0.0:
                positive_seen = True
                trial_g = system.residual(trial, trial_rho)
                trial_norm = _scaled_norm(trial_g, trial_rho)
                if trial_norm < norm:
                    interior, rho, g, norm = trial, trial_rho, trial_g, trial_norm
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not positive_seen:
                assert first_rho is not None
                raise _positivity_loss(problem, first_rho)
            logger.debug(
                f"[solve] line search stalled at residual {norm:.3e}; relaxing",
                extra={"iteration": iterations, "epsilon": problem.epsilon},
            )
            interior = _relax(system, problem, interior)
            rho = system.densities(interior)
            g = system.residual(interior, rho)
            norm = _scaled_norm(g, rho)
        history.append(norm)
        logger.debug(
            f"[solve] newton {iterations}: residual {norm:.3e} (step {alpha:g})",
            extra={"epsilon": problem.epsilon, "gmres_info": int(info)},
        )

    knots = (
        problem.endpoint_a,
        *(make_potential(f, problem.grid) for f in interior),
        problem.endpoint_b,
    )
    path = PotentialPath(problem.times, knots, Interpolation.SOLVER_NATIVE)
    return GeodesicSolution(path, norm, problem.epsilon, iterations, tuple(history))


@dataclass(frozen=True)
class ContinuationStep:
    epsilon: float
    iterations: int
    residual: float
    sup_change: float | None


@dataclass(frozen=True, eq=False)
class ContinuationResult:
    path: PotentialPath
    history: tuple[ContinuationStep, ...] = field(default_factory=tuple)
    converged: bool = True

    @property
    def final_epsilon(self) -> float:
        return self.history[-1].epsilon if self.history else 0.0


def constant_path(
    u: Potential, interval: tuple[float, float], time_steps: int
) -> PotentialPath:
    times = np.linspace(interval[0], interval[1], time_steps + 1)
    return PotentialPath(times, (u,) * (time_steps + 1), Interpolation.SOLVER_NATIVE)


def continue_to_weak_geodesic(
    u_a: Potential,
    u_b: Potential,
    options: GeodesicOptions | None = None,
    interval: tuple[float, float] | None = None,
) -> ContinuationResult:
    """ε-continuation ε_0, ε_0·f, ε_0·f², … with warm starts.

    Stops once successive solutions differ by less than ``continuation_tol`` in sup
    norm, or when the next ε would fall below ``epsilon_floor``.
    """
    options = options or GeodesicOptions()
    interval = interval or (0.0, options.T)
    if u_a.same_field(u_b):
        return ContinuationResult(constant_path(u_a, interval, options.time_steps))

    problem = EpsGeodesicProblem(
        u_a,
        u_b,
        epsilon=options.epsilon_initial,
        interval=interval,
        time_steps=options.time_steps,
        solver_tol=options.solver_tol,
        max_iter=options.max_iter,
    )
    history: list[ContinuationStep] = []
    previous: NDArray[np.float64] | None = None
    epsilon = options.epsilon_initial
    while True:
        solution = solve_epsilon_geodesic(replace(problem, epsilon=epsilon), previous)
        fields = solution.path.fields
        change = None if previous is None else float(np.max(np.abs(fields - previous)))
        history.append(
            ContinuationStep(
                epsilon, solution.iterations, solution.residual_norm, change
            )
        )
        logger.debug(
            f"[continuation] eps={epsilon:.3e} iterations={solution.iterations} "
            f"change={change if change is not None else float('nan'):.3e}",
            extra={"n": u_a.grid.n, "time_steps": options.time_steps},
        )
        if change is not None and change < options.continuation_tol:
            return ContinuationResult(solution.path, tuple(history), True)
        epsilon *= options.epsilon_factor
        if epsilon < options.epsilon_floor:
            logger.warning(
                f"[continuation] reached epsilon floor {options.epsilon_floor:g} "
                f"with change {change if change is not None else float('nan'):.3e}",
                extra={"continuation_tol": options.continuation_tol},
            )
            return ContinuationResult(solution.path, tuple(history), False)
        previous = fields


def weak_geodesic(
    u_a: Potential,
    u_b: Potential,
    interval: tuple[float, float] = (0.0, 1.0),
    tol: float | None = None,
    options: GeodesicOptions | None = None,
) -> PotentialPath:
    """The weak geodesic between two potentials as the limit of ε-geodesics."""
    options = options or GeodesicOptions()
    if tol is not None:
        options = options.model_copy(update={"continuation_tol": tol})
    return continue_to_weak_geodesic(u_a, u_b, options, interval).path


def hcma_residual(path: PotentialPath) -> NDArray[np.float64]:
    """c = ü·ρ_u − ½|∇u̇|² on the interior knots (ε for an ε-geodesic, 0 in the limit)."""
    if len(path.knots) < 3:
        raise ValueError("hcma_residual needs at least three knots")
    u = path.fields
    t = path.times
    h1 = np.diff(t)[:-1][:, None, None]
    h2 = np.diff(t)[1:][:, None, None]
    second = 2.0 * ((u[2:] - u[1:-1]) / h2 - (u[1:-1] - u[:-2]) / h1) / (h1 + h2)
    vx, vy = path.grid.gradient((u[2:] - u[:-2]) / (h1 + h2))
    return second * path.densities[1:-1] - 0.5 * (vx**2 + vy**2)


def _perturbed(u: Potential, direction: NDArray[np.float64], delta: float) -> Potential:
    try:
        return make_potential(u.field + delta * direction, u.grid)
    except NotKahler as exc:
        raise PerturbationTooLarge(exc.min_density) from exc


def jacobi_field(
    problem: EpsGeodesicProblem,
    direction_a: ArrayLike,
    direction_b: ArrayLike,
    delta: float = 1e-3,
) -> NDArray[np.float64]:
    """ξ ≈ (u^{+δ} − u^{−δ})/(2δ) from two endpoint-perturbed ε-geodesics.

    Raises:
        PerturbationTooLarge: if a perturbed endpoint is not a potential.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    dir_a = np.asarray(direction_a, dtype=np.float64)
    dir_b = np.asarray(direction_b, dtype=np.float64)
    problems = [
        problem.with_endpoints(
            _perturbed(problem.endpoint_a, dir_a, sign * delta),
            _perturbed(problem.endpoint_b, dir_b, sign * delta),
        )
        for sign in (1.0, -1.0)
    ]
    plus, minus = map_in_batches(solve_epsilon_geodesic, problems, label="jacobi")
    return (plus.path.fields - minus.path.fields) / (2.0 * delta)


def jacobi_residual(solution: GeodesicSolution, xi: ArrayLike) -> float:
    """sup of ρ∇_t²ξ − ¼{{u̇, ξ}, u̇}ρ + (ε/2)·div(F(u)∇ξ) over interior knots.

    Knots next to the ends are skipped when the path is long enough, so every
    reported value uses centred differences only.
    """
    path = solution.path
    fields = np.asarray(xi, dtype=np.float64)
    if fields.shape != path.fields.shape:
        raise ValueError("ξ must give one field per knot of the solution path")
    first = covariant_derivative(path, fields)
    second = covariant_derivative(path, first)
    u_dot = velocity(path).knot_values()
    grid = path.grid
    m = path.steps
    knots = range(2, m - 1) if m >= 4 else range(1, m)
    worst = 0.0
    for i in knots:
        u = path.knots[i]
        rho = u.ma_density
        bracket = poisson_bracket(u, poisson_bracket(u, u_dot[i], fields[i]), u_dot[i])
        gx, gy = grid.gradient(fields[i])
        f = f_density(u)
        diffusion = grid.divergence(f * gx, f * gy)
        residual = (
            rho * second[i]
            - 0.25 * bracket * rho
            + 0.5 * solution.epsilon * diffusion
        )
        worst = max(worst, float(np.max(np.abs(residual))))
    return worst


def monotone_limit_check(
    u_a_seq: Sequence[Potential],
    u_b_seq: Sequence[Potential],
    u_a: Potential,
    u_b: Potential,
    tol: float,
    options: GeodesicOptions | None = None,
) -> VerificationReport:
    """Weak geodesics of decreasing endpoint pairs must decrease to the limit geodesic."""
    if len(u_a_seq) != len(u_b_seq) or not u_a_seq:
        raise ValueError("endpoint sequences must be non-empty and equally long")
    options = options or GeodesicOptions()
    interval = (0.0, options.T)
    pairs = [*zip(u_a_seq, u_b_seq), (u_a, u_b)]
    paths = map_in_batches(
        lambda pair: weak_geodesic(pair[0], pair[1], interval, options=options),
        pairs,
        label="monotone",
    )
    fields = [p.fields for p in paths]
    limit = fields[-1]
    violations = [
        float(np.max(later - earlier, initial=0.0))
        for earlier, later in zip(fields[:-1], fields[1:])
    ]
    distances = [float(np.max(np.abs(f - limit))) for f in fields[:-1]]
    return VerificationReport(
        experiment="monotone_limits",
        check="geodesic_monotonicity",
        value=distances[-1],
        worst_violation=max(violations, default=0.0),
        tolerance=tol,
        samples=distances,
        provenance={
            "n": u_a.grid.n,
            "time_steps": options.time_steps,
            "pairs": len(pairs) - 1,
        },
        details={"violations": violations},
    )
