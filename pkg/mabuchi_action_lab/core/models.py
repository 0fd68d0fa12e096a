from __future__ import annotations

import hashlib
import json
from typing import Any, Literal, Self

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)


# Verification output schemas
class VerificationReport(BaseModel):
    """Outcome of one property check."""

    experiment: str = Field(description="Experiment (suite) the check belongs to")
    check: str = Field(description="Name of the individual check")
    value: float = Field(default=0.0, description="Headline measured quantity")
    worst_violation: float = Field(
        description="Largest violation of the checked inequality (0 when none)"
    )
    tolerance: float = Field(ge=0.0, description="Tolerance the violation is held to")
    expect_failure: bool = Field(
        default=False, description="Negative control: the check is meant to fail"
    )
    samples: list[float] = Field(
        default_factory=list, description="Per-instance margins or discrepancies"
    )
    provenance: dict[str, Any] = Field(
        default_factory=dict, description="Seeds, resolutions and other inputs"
    )
    details: dict[str, Any] = Field(
        default_factory=dict, description="Supplementary measurements"
    )

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return bool(self.worst_violation <= self.tolerance)

    @property
    def outcome_ok(self) -> bool:
        """A regular check must pass; a negative control must fail."""
        return self.passed != self.expect_failure

    @property
    def control_label(self) -> str | None:
        if not self.expect_failure:
            return None
        observed = "observed-pass" if self.passed else "observed-fail"
        return f"expected-fail: {observed}"


class ResultRecord(BaseModel):
    """One JSON-lines row written by ``mal verify``."""

    experiment: str = Field(description="Experiment id")
    check: str = Field(description="Check name")
    value: float = Field(description="Worst violation observed")
    tolerance: float = Field(description="Tolerance applied")
    passed: bool = Field(serialization_alias="pass", description="Pass flag")
    seed: int | None = Field(default=None, description="Seed of the randomised inputs")
    n: int = Field(serialization_alias="N", description="Cells per side")
    time_steps: int = Field(description="Knot intervals per path")
    epsilon: float | None = Field(default=None, description="ε used, when one")
    config_hash: str = Field(description="sha256 of the canonical parsed config")
    control: str | None = Field(
        default=None, description="Negative-control outcome label"
    )
    samples: list[float] = Field(default_factory=list, description="Margins")
    timing: float | None = Field(default=None, description="Wall-clock seconds")


# Lagrangian file schema
class SupMemberModel(BaseModel):
    """One member (a, f0) of a sup-family; f0 given by samples or by its steps."""

    offset: float = Field(default=0.0, description="Affine offset a")
    values: list[float] | None = Field(default=None, description="Sample values of f0")
    weights: list[float] | None = Field(
        default=None, description="Positive masses of the samples (sum 1)"
    )
    breakpoints: list[float] | None = Field(
        default=None, description="Breakpoints 0 = s_0 < … < s_k = 1 of f0*"
    )
    levels: list[float] | None = Field(
        default=None, description="Strictly decreasing levels of f0*"
    )

    @model_validator(mode="after")
    def _one_representation(self) -> Self:
        sampled = self.values is not None and self.weights is not None
        stepped = self.breakpoints is not None and self.levels is not None
        if sampled == stepped:
            raise ValueError(
                "give exactly one of (values, weights) or (breakpoints, levels)"
            )
        return self


class SupFamilyFile(BaseModel):
    members: list[SupMemberModel] = Field(min_length=1, description="Family members")


# Solver knobs
class GeodesicOptions(BaseModel):
    """Discretisation and continuation settings for geodesic solves."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: float = Field(default=1.0, gt=0.0, description="Length of the time interval")
    time_steps: int = Field(default=32, ge=2, description="Knot intervals m")
    epsilon: float | None = Field(
        default=None,
        gt=0.0,
        description="Solve one ε-geodesic at this ε instead of the ε → 0 limit",
    )
    epsilon_initial: float = Field(default=1.0, gt=0.0, description="First ε")
    epsilon_factor: float = Field(
        default=0.5, gt=0.0, lt=1.0, description="ε multiplier per continuation step"
    )
    epsilon_floor: float = Field(
        default=1e-6, gt=0.0, description="Continuation stops below this ε"
    )
    continuation_tol: float = Field(
        default=1e-4, gt=0.0, description="Sup change between successive ε that stops"
    )
    solver_tol: float = Field(default=1e-8, gt=0.0, description="Newton residual tol")
    max_iter: int = Field(default=50, ge=1, description="Newton iteration cap")


# Experiment configuration
class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=32, ge=4, description="Cells per side (even)")
    scheme: Literal["spectral", "central"] = Field(
        default="spectral", description="Derivative scheme"
    )

    @field_validator("n")
    @classmethod
    def _even(cls, n: int) -> int:
        if n % 2:
            raise ValueError("must be even")
        return n


class TrigMode(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kx: int = Field(description="Wavenumber along x")
    ky: int = Field(description="Wavenumber along y")
    amplitude: float = Field(description="Coefficient")
    kind: Literal["cos", "sin"] = Field(default="cos", description="Trigonometric kind")


class EndpointSpec(BaseModel):
    """constant + Σ amplitude·trig(2π(kx·x + ky·y))."""

    model_config = ConfigDict(extra="forbid")

    constant: float = Field(default=0.0, description="Constant part")
    modes: list[TrigMode] = Field(default_factory=list, description="Fourier modes")


class FixtureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: str | None = Field(
        default="constants", description="Named preset from the fixture registry"
    )
    endpoint_a: EndpointSpec | None = Field(default=None, description="Explicit u_a")
    endpoint_b: EndpointSpec | None = Field(default=None, description="Explicit u_b")

    @model_validator(mode="after")
    def _explicit_pair(self) -> Self:
        if (self.endpoint_a is None) != (self.endpoint_b is None):
            raise ValueError("endpoint_a and endpoint_b must be given together")
        return self


class LagrangianConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spec: str = Field(default="power:p1", description="Primary Lagrangian text form")
    extra: list[str] = Field(
        default_factory=list, description="Further Lagrangians used by suites"
    )

    def all_specs(self) -> list[str]:
        return [self.spec, *self.extra]


class VerificationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    suites: list[str] = Field(default_factory=list, description="Suites to run")
    seeds: list[int] = Field(default_factory=lambda: [7], description="Seeds")
    count: int = Field(default=100, ge=1, description="Competitors per seed")
    knot_budget: int = Field(default=3, ge=0, description="Interior competitor knots")
    tolerance: float = Field(default=5e-3, gt=0.0, description="Tolerance of the checks")
    jacobi_tolerance: float = Field(
        default=1e-4, gt=0.0, description="Tolerance of Jacobi convexity"
    )
    jacobi_delta: float = Field(default=1e-3, gt=0.0, description="Differencing δ")
    jacobi_epsilons: list[float] = Field(
        default_factory=lambda: [1.0, 0.1, 0.01], description="ε values for Jacobi"
    )
    triples: int = Field(default=5, ge=1, description="Sampled convexity triples")
    sequence_length: int = Field(default=4, ge=1, description="Decreasing sequences")
    composition_steps: list[int] = Field(
        default_factory=lambda: [4, 8, 16, 32], description="k for composition"
    )

    @field_validator("jacobi_epsilons")
    @classmethod
    def _positive(cls, values: list[float]) -> list[float]:
        if not values or any(v <= 0.0 for v in values):
            raise ValueError("needs at least one positive ε")
        return values


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = Field(default="results", description="Artifact directory")
    formats: list[Literal["csv", "json"]] = Field(
        default_factory=lambda: ["csv", "json"], description="Artifact formats"
    )
    include_timing: bool = Field(
        default=False, description="Record wall-clock timings (breaks byte identity)"
    )


class ExperimentConfig(BaseModel):
    """Parsed TOML experiment file."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="experiment", description="Experiment id")
    grid: GridConfig = Field(default_factory=GridConfig)
    fixture: FixtureConfig = Field(default_factory=FixtureConfig)
    lagrangian: LagrangianConfig = Field(default_factory=LagrangianConfig)
    geodesic: GeodesicOptions = Field(default_factory=GeodesicOptions)
    verification: VerificationConfig = Field(default_factory=VerificationConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def canonical_json(self) -> str:
        return json.dumps(
            self.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# Solve artifacts
class ContinuationRecord(BaseModel):
    epsilon: float = Field(description="ε of this continuation step")
    iterations: int = Field(description="Newton iterations spent")
    residual: float = Field(description="Final scaled residual")
    sup_change: float | None = Field(
        default=None, description="Sup distance to the previous ε solution"
    )


class SolveRecord(BaseModel):
    """JSON sidecar written next to the path CSV by ``mal solve``."""

    experiment: str = Field(description="Experiment id")
    config_hash: str = Field(description="sha256 of the canonical parsed config")
    n: int = Field(serialization_alias="N", description="Cells per side")
    scheme: str = Field(description="Derivative scheme")
    time_steps: int = Field(description="Knot intervals")
    T: float = Field(description="Interval length")
    epsilon: float = Field(description="Final ε (the ε → 0 limit uses its last ε)")
    iterations: int = Field(description="Newton iterations of the final solve")
    residual_history: list[float] = Field(
        default_factory=list, description="Scaled residual after every iteration"
    )
    continuation: list[ContinuationRecord] = Field(
        default_factory=list, description="ε-continuation steps, empty for one solve"
    )
    converged: bool = Field(default=True, description="Continuation met its tolerance")
    max_hcma_deviation: float | None = Field(
        default=None, description="sup |c − ε| of the HCMA residual field"
    )
    timing: float | None = Field(default=None, description="Wall-clock seconds")
