import numpy as np
import pytest

from mabuchi_action_lab.core.errors import NotKahler, StepUnstable
from mabuchi_action_lab.dynamics.transport import (
    Interpolation,
    PotentialPath,
    TransportMap,
    compose_maps,
    composition_scheme,
    covariant_derivative,
    flow_distance,
    interpolate,
    linear_path,
    parallel_transport,
    pullback,
    pullback_density_residual,
    symplectic_flow,
    transport_flow,
    velocity,
)
from mabuchi_action_lab.fixtures import fixture_pair
from mabuchi_action_lab.geometry.grid import (
    Grid,
    make_potential,
    weighted_values,
    zero_potential,
)
from mabuchi_action_lab.geometry.rearrangement import rearrangement_distance


def test_linear_path_velocity_is_the_endpoint_difference(cosine):
    w, w_prime = cosine
    path = linear_path(w, w_prime, (0.0, 2.0), steps=4)
    vel = velocity(path)
    assert path.steps == 4
    assert path.knots[0] is w and path.knots[-1] is w_prime
    assert vel.per_interval
    for i in range(len(path.knots)):
        assert vel.at_knot(i) == pytest.approx((w_prime.field - w.field) / 2.0)


def test_path_rejects_unordered_times(constants):
    w, w_prime = constants
    with pytest.raises(ValueError):
        PotentialPath(np.array([0.0, 0.0]), (w, w_prime))
    with pytest.raises(ValueError):
        PotentialPath(np.array([0.0, 1.0, 2.0]), (w, w_prime))


def test_piecewise_linear_admission_checks_midpoints(grid):
    x, _ = grid.nodes()
    w = zero_potential(grid)
    # a knot object bypassing make_potential, as a corrupted path would carry
    bad = type(w)(grid, np.cos(2 * np.pi * x), grid.density(np.cos(2 * np.pi * x)))
    with pytest.raises(NotKahler):
        PotentialPath(np.array([0.0, 1.0]), (bad, bad))
    PotentialPath(np.array([0.0, 1.0]), (bad, bad), Interpolation.SOLVER_NATIVE)


def test_sample_and_reverse(cosine):
    w, w_prime = cosine
    path = linear_path(w, w_prime, (0.0, 1.0), steps=2)
    expected = 0.75 * w.field + 0.25 * w_prime.field
    assert path.sample(0.25).field == pytest.approx(expected)
    back = path.reversed()
    assert back.knots[0] is w_prime
    assert back.sample(0.25).field == pytest.approx(path.sample(0.75).field)
    with pytest.raises(ValueError):
        path.sample(1.5)


def test_transport_along_spatially_constant_velocity_is_trivial(constants):
    path = linear_path(*constants, steps=4)
    maps = transport_flow(path)
    identity = TransportMap.identity(path.grid)
    assert max(flow_distance(m, identity) for m in maps) < 1e-12
    eta = np.arange(64, dtype=float).reshape(8, 8)
    assert parallel_transport(path, eta) == pytest.approx(np.stack([eta] * 5))


def test_transport_carries_the_monge_ampere_measure(fine_grid):
    """ρ_end(φ(x))·det Dφ(x) = ρ_start(x) up to discretisation error."""
    w, w_prime = fixture_pair("cosine_x", fine_grid)
    path = linear_path(w, w_prime, steps=4)
    phi = transport_flow(path, substeps=8)[-1]
    assert not phi.is_identity()
    residual = pullback_density_residual(phi, w.ma_density, w_prime.ma_density)
    untransported = float(np.max(np.abs(w_prime.ma_density - w.ma_density)))
    assert residual < 5e-2 < untransported


def test_covariant_derivative_of_parallel_constant_field(constants):
    path = linear_path(*constants, steps=3)
    fields = np.ones((4, 8, 8))
    assert np.max(np.abs(covariant_derivative(path, fields))) < 1e-12
    with pytest.raises(ValueError):
        covariant_derivative(path, fields[:2])


def test_trigonometric_interpolation_is_exact_for_band_limited_fields(grid, rng):
    x = rng.uniform(0.0, 1.0, size=(3, 3))
    y = rng.uniform(0.0, 1.0, size=(3, 3))
    gx, gy = grid.nodes()
    field = np.cos(2 * np.pi * (gx + 2 * gy))
    assert interpolate(field, grid, x, y) == pytest.approx(
        np.cos(2 * np.pi * (x + 2 * y)), abs=1e-12
    )


def test_bilinear_interpolation_on_difference_grids():
    grid = Grid(8, "central")
    gx, _ = grid.nodes()
    x = np.array([[1.0 / 16.0]])
    assert interpolate(gx, grid, x, np.zeros((1, 1)))[0, 0] == pytest.approx(1 / 16)


def test_pullback_and_composition_with_a_shift(grid):
    x, y = grid.nodes()
    shift = TransportMap(grid, x + 0.25, y)
    field = np.cos(2 * np.pi * x)
    shifted = np.cos(2 * np.pi * (x + 0.25))
    assert pullback(field, shift) == pytest.approx(shifted, abs=1e-12)
    twice = compose_maps(shift, shift)
    assert twice.target_x == pytest.approx(x + 0.5)
    assert flow_distance(twice, TransportMap(grid, x - 0.5, y)) == pytest.approx(0.0)


def test_symplectic_flow_preserves_area(fine_grid):
    x, y = fine_grid.nodes()
    u = zero_potential(fine_grid)
    zeta = 0.005 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    phi = symplectic_flow(zeta, u)
    assert not phi.is_identity()
    assert np.max(np.abs(phi.jacobian - 1.0)) < 5e-3


def test_composition_with_a_frozen_hamiltonian_matches_the_flow(grid):
    x, _ = grid.nodes()
    u = make_potential(0.005 * np.cos(2 * np.pi * x), grid)
    zeta = 0.02 * np.sin(2 * np.pi * (x + grid.nodes()[1]))
    single = composition_scheme(zeta, 1, u, substeps=32)
    flow = symplectic_flow(zeta, u, substeps=32)
    assert flow_distance(single, flow) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        composition_scheme(zeta, 0, u)


def test_unstable_substep_is_reported(grid):
    x, _ = grid.nodes()
    with pytest.raises(StepUnstable):
        symplectic_flow(
            100.0 * np.cos(2 * np.pi * x), zero_potential(grid), substeps=1
        )


def test_composition_scheme_approaches_the_time_dependent_flow(grid):
    x, y = grid.nodes()
    u = zero_potential(grid)
    first = 0.02 * np.cos(2 * np.pi * x)
    second = 0.02 * np.sin(2 * np.pi * y)

    def zeta(t):
        return np.cos(np.pi * t) * first + np.sin(np.pi * t) * second

    reference = symplectic_flow(zeta, u, substeps=128)
    coarse = flow_distance(composition_scheme(zeta, 2, u), reference)
    fine = flow_distance(composition_scheme(zeta, 16, u), reference)
    assert fine < coarse / 2


RESOLUTIONS = (16, 32, 64)


def observed_order(errors):
    """Slope of −log(error) against log(N) over ``RESOLUTIONS``."""
    return -np.polyfit(np.log(RESOLUTIONS), np.log(errors), 1)[0]


@pytest.mark.parametrize("scheme", ["spectral", "central"])
def test_pullback_density_residual_decays_under_refinement(scheme):
    residuals = []
    for n in RESOLUTIONS:
        w, w_prime = fixture_pair("cosine_x", Grid(n, scheme))
        phi = transport_flow(linear_path(w, w_prime, steps=4), substeps=8)[-1]
        residuals.append(
            pullback_density_residual(phi, w.ma_density, w_prime.ma_density)
        )
    assert residuals[0] > residuals[1] > residuals[2]
    if scheme == "central":
        assert observed_order(residuals) >= 0.9 * 2


def test_transport_along_a_cosine_ramp_matches_the_analytic_map():
    """u(t) = t·a·cos(2πx) carries x to the root z of z − π·a·t·sin(2πz) = x."""
    amplitude = 0.01
    errors = []
    for n in RESOLUTIONS:
        grid = Grid(n)
        x, y = grid.nodes()
        end = make_potential(amplitude * np.cos(2 * np.pi * x), grid)
        path = linear_path(zero_potential(grid), end, steps=4)
        phi = transport_flow(path, substeps=8)[-1]
        z = phi.target_x
        implicit = z - np.pi * amplitude * np.sin(2 * np.pi * z) - x
        errors.append(float(np.max(np.abs(implicit))))
        assert phi.target_y == pytest.approx(y, abs=1e-12)
    assert errors[0] > errors[1] > errors[2]
    assert observed_order(errors) >= 0.9 * 2


def test_covariant_derivative_of_a_parallel_field_vanishes_under_refinement():
    errors = []
    for n in RESOLUTIONS:
        grid = Grid(n)
        x, y = grid.nodes()
        w, w_prime = fixture_pair("cosine_x", grid)
        path = linear_path(w, w_prime, steps=n // 4)
        eta = np.sin(2 * np.pi * x) + np.cos(2 * np.pi * y)
        fields = parallel_transport(path, eta)
        errors.append(float(np.max(np.abs(covariant_derivative(path, fields)))))
    assert errors[0] > errors[1] > errors[2]
    # forward differences in time
    assert observed_order(errors) >= 0.9


def test_transported_field_keeps_its_distribution():
    """(ξ∘φ, μ_w) and (ξ, μ_w′) match as the grid is refined; (ξ, μ_w) does not."""
    transported = []
    for n in RESOLUTIONS:
        grid = Grid(n)
        x, y = grid.nodes()
        w, w_prime = fixture_pair("cosine_x", grid)
        phi = transport_flow(linear_path(w, w_prime, steps=4), substeps=8)[-1]
        xi = np.cos(2 * np.pi * x) + 0.5 * np.sin(2 * np.pi * y)
        target = weighted_values(w_prime, xi)
        transported.append(
            rearrangement_distance(weighted_values(w, pullback(xi, phi)), target)
        )
        untransported = rearrangement_distance(weighted_values(w, xi), target)
    assert transported[-1] < transported[0]
    assert transported[-1] < untransported / 4
