"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class LabError(Exception):
    """Base class for every failure raised by the lab."""


class NotKahler(LabError):
    """A field fails the positivity test 1 + Δu/2 > 0."""

    def __init__(self, min_density: float) -> None:
        super().__init__(f"not a Kähler potential: min density {min_density:.6g}")
        self.min_density = min_density


class PerturbationTooLarge(LabError):
    """Perturbed endpoints of a Jacobi family leave the space of potentials."""

    def __init__(self, min_density: float) -> None:
        super().__init__(
            f"perturbed endpoint leaves the potential space: "
            f"min density {min_density:.6g}"
        )
        self.min_density = min_density


class MassMismatch(LabError):
    def __init__(self, mass_a: float, mass_b: float) -> None:
        super().__init__(f"total masses differ: {mass_a!r} vs {mass_b!r}")
        self.mass_a = mass_a
        self.mass_b = mass_b


class NotEquidistributed(LabError):
    def __init__(self, discrepancy: float) -> None:
        super().__init__(
            f"inputs are not equidistributed (rearrangement distance {discrepancy:.3e})"
        )
        self.discrepancy = discrepancy


class SolverFailure(LabError):
    """A numerical integrator or solver could not produce a trustworthy result."""


class StepUnstable(SolverFailure):
    def __init__(self, displacement: float, cell_width: float) -> None:
        super().__init__(
            f"substep moved a point {displacement:.3e} > cell width {cell_width:.3e}; "
            "increase substeps"
        )
        self.displacement = displacement
        self.cell_width = cell_width


class NonConvergence(SolverFailure):
    def __init__(self, iterations: int, residual: float) -> None:
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class PositivityLoss(SolverFailure):
    def __init__(self, t: float, cell: tuple[int, int]) -> None:
        super().__init__(
            f"iterate left the potential space at t={t:.6g}, cell {cell}; "
            "damping could not restore positivity"
        )
        self.t = t
        self.cell = cell


class GenerationFailed(LabError):
    def __init__(self, knot: int, attempts: int) -> None:
        super().__init__(
            f"could not place competitor knot {knot} after {attempts} shrinkages"
        )
        self.knot = knot
        self.attempts = attempts


class HomogeneityRequired(LabError):
    def __init__(self, spec: str) -> None:
        super().__init__(f"Lagrangian {spec} is not positively homogeneous")
        self.spec = spec


class ConfigError(LabError):
    """Invalid experiment configuration; ``field`` is the dotted path at fault."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
