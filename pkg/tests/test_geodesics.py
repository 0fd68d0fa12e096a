import time

import numpy as np
import pytest

from mabuchi_action_lab.core.errors import NonConvergence, PerturbationTooLarge
from mabuchi_action_lab.dynamics.geodesics import (
    EpsGeodesicProblem,
    continue_to_weak_geodesic,
    hcma_residual,
    jacobi_field,
    jacobi_residual,
    monotone_limit_check,
    solve_epsilon_geodesic,
    weak_geodesic,
)
from mabuchi_action_lab.dynamics.transport import Interpolation
from mabuchi_action_lab.fixtures import fixture_pair
from mabuchi_action_lab.geometry.grid import Grid, make_potential, zero_potential


def closed_form(t, low, high, epsilon, T):
    return low + (high - low) * t / T + 0.5 * epsilon * (t**2 - T * t)


@pytest.mark.parametrize("epsilon, T", [(0.3, 1.0), (1.0, 2.0), (0.01, 0.5)])
def test_constant_endpoints_follow_the_closed_form(constants, epsilon, T):
    w, w_prime = constants
    problem = EpsGeodesicProblem(w, w_prime, epsilon, interval=(0.0, T), time_steps=8)
    solution = solve_epsilon_geodesic(problem)
    expected = closed_form(problem.times, 0.0, 1.0, epsilon, T)
    assert solution.path.interpolation is Interpolation.SOLVER_NATIVE
    assert solution.path.fields[:, 3, 5] == pytest.approx(expected, abs=1e-10)
    assert solution.path.knots[0] is w and solution.path.knots[-1] is w_prime
    assert hcma_residual(solution.path) == pytest.approx(epsilon, abs=1e-8)


def test_newton_solve_of_a_cosine_perturbation(cosine):
    problem = EpsGeodesicProblem(*cosine, epsilon=0.5, time_steps=8)
    solution = solve_epsilon_geodesic(problem)
    assert solution.iterations >= 1
    assert solution.residual_norm <= problem.solver_tol
    assert solution.residual_history[-1] == solution.residual_norm
    assert np.max(np.abs(hcma_residual(solution.path) - 0.5)) < 1e-6


def test_reversed_problem_gives_the_reversed_path(cosine):
    problem = EpsGeodesicProblem(*cosine, epsilon=0.5, time_steps=8)
    forward = solve_epsilon_geodesic(problem)
    backward = solve_epsilon_geodesic(problem.reversed())
    assert backward.path.fields[::-1] == pytest.approx(forward.path.fields, abs=1e-8)


def test_solver_needs_positive_epsilon(constants):
    with pytest.raises(ValueError):
        solve_epsilon_geodesic(EpsGeodesicProblem(*constants, epsilon=0.0))


@pytest.mark.parametrize(
    "overrides",
    [
        {"epsilon": -1.0},
        {"time_steps": 1},
        {"interval": (1.0, 1.0)},
        {"solver_tol": 0.0},
    ],
)
def test_problem_validation(constants, overrides):
    kwargs = {"epsilon": 0.1, **overrides}
    with pytest.raises(ValueError):
        EpsGeodesicProblem(*constants, **kwargs)


def test_endpoints_on_different_grids_are_rejected(constants):
    with pytest.raises(ValueError):
        EpsGeodesicProblem(constants[0], zero_potential(Grid(16)), epsilon=0.1)


def test_iteration_cap_raises_non_convergence(cosine):
    problem = EpsGeodesicProblem(
        *cosine, epsilon=0.5, time_steps=8, solver_tol=1e-15, max_iter=1
    )
    with pytest.raises(NonConvergence) as info:
        solve_epsilon_geodesic(problem)
    assert info.value.iterations == 1


def test_continuation_converges_to_the_linear_path(constants, options):
    result = continue_to_weak_geodesic(*constants, options)
    epsilons = [step.epsilon for step in result.history]
    assert result.converged
    assert result.history[0].sup_change is None
    assert all(a > b for a, b in zip(epsilons, epsilons[1:]))
    linear = closed_form(result.path.times, 0.0, 1.0, 0.0, 1.0)
    tol = 2 * options.continuation_tol
    assert result.path.fields[:, 0, 0] == pytest.approx(linear, abs=tol)


def test_continuation_stops_at_the_epsilon_floor(constants, options):
    stubborn = options.model_copy(
        update={"epsilon_floor": 0.2, "continuation_tol": 1e-12}
    )
    result = continue_to_weak_geodesic(*constants, stubborn)
    assert not result.converged
    assert [step.epsilon for step in result.history] == [0.5, 0.25]
    assert result.final_epsilon == 0.25


def test_equal_endpoints_give_the_constant_path(cosine, options):
    w, _ = cosine
    result = continue_to_weak_geodesic(w, w, options)
    assert result.history == ()
    assert result.final_epsilon == 0.0
    assert all(k is w for k in result.path.knots)


def test_weak_geodesic_on_a_longer_interval(constants, options):
    path = weak_geodesic(*constants, interval=(0.0, 2.0), options=options)
    assert path.interval == (0.0, 2.0)
    assert path.fields[4, 2, 2] == pytest.approx(0.5, abs=2e-3)


def test_jacobi_field_of_constant_shifts_is_affine(constants):
    problem = EpsGeodesicProblem(*constants, epsilon=0.3, time_steps=8)
    dir_a = np.full((8, 8), 0.2)
    dir_b = np.full((8, 8), -0.1)
    xi = jacobi_field(problem, dir_a, dir_b, delta=1e-3)
    expected = 0.2 - 0.3 * problem.times
    assert xi[:, 1, 6] == pytest.approx(expected, abs=1e-8)
    base = solve_epsilon_geodesic(problem)
    assert jacobi_residual(base, xi) < 1e-8


def test_jacobi_residual_flags_a_non_jacobi_field(cosine):
    problem = EpsGeodesicProblem(*cosine, epsilon=0.5, time_steps=8)
    base = solve_epsilon_geodesic(problem)
    x, _ = base.path.grid.nodes()
    profile = np.sin(np.pi * problem.times)[:, None, None]
    bent = profile * np.cos(2 * np.pi * x)
    assert jacobi_residual(base, bent) > 1e-2


def test_oversized_perturbation_is_reported(constants, grid):
    x, _ = grid.nodes()
    problem = EpsGeodesicProblem(*constants, epsilon=0.3, time_steps=4)
    with pytest.raises(PerturbationTooLarge):
        jacobi_field(problem, np.cos(2 * np.pi * x), np.zeros(grid.shape), delta=1.0)


def test_monotone_limits_of_shifted_endpoints(constants, options, grid):
    w, w_prime = constants
    shifts = [0.1, 0.05, 0.025]
    w_seq = [make_potential(w.field + c, grid) for c in shifts]
    w_prime_seq = [make_potential(w_prime.field + c, grid) for c in shifts]
    report = monotone_limit_check(w_seq, w_prime_seq, w, w_prime, 1e-9, options)
    assert report.passed
    assert report.samples == pytest.approx(shifts, abs=1e-9)

    control = monotone_limit_check(
        w_seq[::-1], w_prime_seq[::-1], w, w_prime, 1e-9, options
    )
    assert not control.passed
    assert control.worst_violation == pytest.approx(0.05, abs=1e-9)


@pytest.mark.parametrize("epsilon", [1.0, 0.1, 0.01])
def test_closed_form_at_the_default_scale(epsilon):
    grid = Grid(32)
    low = zero_potential(grid)
    high = make_potential(np.ones(grid.shape), grid)
    problem = EpsGeodesicProblem(low, high, epsilon, time_steps=32)
    started = time.perf_counter()
    solution = solve_epsilon_geodesic(problem)
    assert time.perf_counter() - started < 5.0
    expected = closed_form(problem.times, 0.0, 1.0, epsilon, 1.0)[:, None, None]
    error = float(np.max(np.abs(solution.path.fields - expected)))
    assert error <= max(1e-8, epsilon / 32**2)


def test_newton_solve_on_a_difference_grid():
    grid = Grid(8, "central")
    problem = EpsGeodesicProblem(*fixture_pair("cosine_x", grid), 0.5, time_steps=8)
    solution = solve_epsilon_geodesic(problem)
    assert solution.path.grid.scheme == "central"
    assert solution.residual_norm <= problem.solver_tol
    assert np.max(np.abs(hcma_residual(solution.path) - 0.5)) < 1e-6


def test_jacobi_residual_converges_at_second_order(grid):
    """ξ = e^{kt}·cos(2πx), k² = 2π²ε, solves the Jacobi equation between constants."""
    epsilon = 0.01
    k = np.pi * np.sqrt(2.0 * epsilon)
    x, _ = grid.nodes()
    low = zero_potential(grid)
    high = make_potential(np.ones(grid.shape), grid)
    steps = (16, 32, 64)
    residuals = []
    for m in steps:
        problem = EpsGeodesicProblem(low, high, epsilon, time_steps=m)
        solution = solve_epsilon_geodesic(problem)
        xi = np.exp(k * problem.times)[:, None, None] * np.cos(2 * np.pi * x)
        residuals.append(jacobi_residual(solution, xi))
    order = -np.polyfit(np.log(steps), np.log(residuals), 1)[0]
    assert residuals[0] > residuals[1] > residuals[2]
    assert order >= 0.9 * 2


def test_jacobi_residual_of_a_computed_field_decays(fine_grid):
    x, y = fine_grid.nodes()
    endpoints = fixture_pair("cosine_x", fine_grid)
    residuals = []
    for m in (16, 32, 64):
        problem = EpsGeodesicProblem(
            *endpoints, epsilon=0.5, time_steps=m, solver_tol=1e-11
        )
        xi = jacobi_field(
            problem, 0.5 * np.cos(2 * np.pi * y), 0.5 * np.sin(2 * np.pi * x)
        )
        residuals.append(jacobi_residual(solve_epsilon_geodesic(problem), xi))
    assert residuals[0] > residuals[1] > residuals[2]
