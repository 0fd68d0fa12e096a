"""Named endpoint presets: constants and small band-limited trigonometric potentials."""

from __future__ import annotations

import numpy as np

from mabuchi_action_lab.core.errors import ConfigError, NotKahler
from mabuchi_action_lab.core.models import EndpointSpec, FixtureConfig, TrigMode
from mabuchi_action_lab.geometry.grid import Grid, GridField, Potential, make_potential


def _endpoint(
    constant: float = 0.0, *modes: tuple[int, int, float, str]
) -> EndpointSpec:
    return EndpointSpec(
        constant=constant,
        modes=[
            TrigMode(kx=kx, ky=ky, amplitude=amp, kind=kind)  # type: ignore[arg-type]
            for kx, ky, amp, kind in modes
        ],
    )


FIXTURES: dict[str, tuple[EndpointSpec, EndpointSpec]] = {
    "constants": (_endpoint(0.0), _endpoint(1.0)),
    "cosine_x": (_endpoint(0.0), _endpoint(0.0, (1, 0, 0.01, "cos"))),
    "mixed": (
        _endpoint(0.0, (1, 0, 0.005, "cos")),
        _endpoint(0.2, (0, 1, 0.008, "sin")),
    ),
    "diagonal": (
        _endpoint(0.0, (1, 1, 0.004, "cos")),
        _endpoint(-0.1, (1, 0, 0.006, "cos"), (1, -1, 0.003, "sin")),
    ),
    "swap": (
        _endpoint(0.0, (1, 0, 0.008, "cos")),
        _endpoint(0.0, (0, 1, 0.008, "cos")),
    ),
}


def build_field(spec: EndpointSpec, grid: Grid) -> GridField:
    x, y = grid.nodes()
    field = np.full(grid.shape, spec.constant, dtype=np.float64)
    for mode in spec.modes:
        phase = 2.0 * np.pi * (mode.kx * x + mode.ky * y)
        trig = np.cos if mode.kind == "cos" else np.sin
        field += mode.amplitude * trig(phase)
    return field


def build_endpoint(spec: EndpointSpec, grid: Grid) -> Potential:
    return make_potential(build_field(spec, grid), grid)


def fixture_pair(name: str, grid: Grid) -> tuple[Potential, Potential]:
    try:
        spec_a, spec_b = FIXTURES[name]
    except KeyError:
        known = ", ".join(sorted(FIXTURES))
        raise ConfigError(
            "fixture.preset", f"unknown preset {name!r} ({known})"
        ) from None
    return build_endpoint(spec_a, grid), build_endpoint(spec_b, grid)


def resolve_fixture(config: FixtureConfig, grid: Grid) -> tuple[Potential, Potential]:
    """Endpoints from explicit specs when given, otherwise from the preset."""
    try:
        if config.endpoint_a is not None and config.endpoint_b is not None:
            return (
                build_endpoint(config.endpoint_a, grid),
                build_endpoint(config.endpoint_b, grid),
            )
        return fixture_pair(config.preset or "constants", grid)
    except NotKahler as exc:
        raise ConfigError("fixture", str(exc)) from exc
