"""Rearrangement-invariant convex Lagrangians on tangent vectors ξ at a potential u.

Every Lagrangian is evaluated through the joint distribution of (ξ, μ_u) only, i.e.
through :class:`WeightedValues`; a Lagrangian is a function of that distribution and
nothing else.
"""

from __future__ import annotations

import json
import logging
import re
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mabuchi_action_lab.core.errors import MassMismatch, NotEquidistributed
from mabuchi_action_lab.core.models import SupFamilyFile, VerificationReport
from mabuchi_action_lab.geometry.grid import (
    Grid,
    GridField,
    Potential,
    WeightedValues,
    make_potential,
    random_trigonometric_field,
    weighted_values,
)
from mabuchi_action_lab.geometry.rearrangement import (
    StepFunction,
    decreasing_rearrangement,
    equidistributed,
    hardy_littlewood_sup,
    rearrangement_distance,
)

logger = logging.getLogger(__name__)

type YoungWeight = Callable[[NDArray[np.float64]], NDArray[np.float64]]

CONVEXITY_SAMPLES = 257


class Lagrangian(ABC):
    """An invariant convex Lagrangian L: T_u H → R."""

    @abstractmethod
    def evaluate_distribution(self, wv: WeightedValues) -> float:
        """L evaluated on the distribution of a weighted set."""

    @abstractmethod
    def describe(self) -> str:
        """Text form accepted by :func:`parse_lagrangian`."""

    @abstractmethod
    def lipschitz_bound(self, radius: float) -> float:
        """A with |L(ξ) − L(η)| ≤ A‖ξ − η‖_sup whenever ‖ξ‖, ‖η‖ < radius."""

    @property
    def positively_homogeneous(self) -> bool:
        return False

    @property
    def even(self) -> bool:
        return False

    def evaluate(self, u: Potential, xi: ArrayLike) -> float:
        return self.evaluate_distribution(weighted_values(u, xi))

    def __str__(self) -> str:
        return self.describe()


def _format_number(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True)
class Orlicz(Lagrangian):
    """L(ξ) = ∫ χ(ξ) dμ_u for a convex, finite Young weight χ."""

    chi: YoungWeight
    label: str
    symmetric: bool = True
    sample_radius: float = 4.0

    def __post_init__(self) -> None:
        r = self.sample_radius
        points = np.linspace(-r, r, CONVEXITY_SAMPLES)
        values = np.asarray(self.chi(points), dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"Young weight {self.label} is not finite on [-{r}, {r}]")
        midpoint = values[1:-1]
        chord = 0.5 * (values[:-2] + values[2:])
        slack = 1e-12 * max(1.0, float(np.max(np.abs(values))))
        if np.any(midpoint > chord + slack):
            raise ValueError(f"Young weight {self.label} is not convex on [-{r}, {r}]")

    @classmethod
    def power(cls, p: float) -> Orlicz:
        if p < 1.0:
            raise ValueError(f"Orlicz power must be >= 1, got {p}")
        return cls(lambda t: np.abs(t) ** p, label=f"p{_format_number(p)}")

    @classmethod
    def cosh(cls) -> Orlicz:
        return cls(lambda t: np.cosh(t) - 1.0, label="cosh")

    def evaluate_distribution(self, wv: WeightedValues) -> float:
        return float(np.sum(self.chi(wv.values) * wv.weights))

    def describe(self) -> str:
        return f"orlicz:{self.label}"

    @property
    def even(self) -> bool:
        return self.symmetric

    def lipschitz_bound(self, radius: float) -> float:
        # Outer secants dominate |χ'| on [−R, R] for convex χ
        step = max(radius, 1.0) * 1e-3
        ends = np.array([-radius - step, -radius, radius, radius + step])
        c = np.asarray(self.chi(ends), dtype=np.float64)
        return float(max(abs(c[1] - c[0]), abs(c[3] - c[2])) / step)


@dataclass(frozen=True)
class LorentzWeak(Lagrangian):
    """Weak-L^q norm sup_E (∫_E |ξ| dμ_u) / μ_u(E)^α with q = 1/α."""

    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"Lorentz exponent must lie in (0, 1), got {self.alpha}")

    def evaluate_distribution(self, wv: WeightedValues) -> float:
        star = decreasing_rearrangement(wv.with_values(np.abs(wv.values)))
        s = star.breakpoints
        prefix = star.prefix_integrals()
        # the sup is attained at a breakpoint
        ratios = prefix[1:] / s[1:] ** self.alpha
        return max(float(np.max(ratios)), 0.0)

    def describe(self) -> str:
        return f"lorentz:a{_format_number(self.alpha)}"

    @property
    def positively_homogeneous(self) -> bool:
        return True

    @property
    def even(self) -> bool:
        return True

    def lipschitz_bound(self, radius: float) -> float:
        return 1.0


@dataclass(frozen=True)
class Power(Lagrangian):
    """L^p norm (∫ |ξ|^p dμ_u)^{1/p}."""

    p: float

    def __post_init__(self) -> None:
        if self.p < 1.0:
            raise ValueError(f"power must be >= 1, got {self.p}")

    def evaluate_distribution(self, wv: WeightedValues) -> float:
        magnitude = np.abs(wv.values)
        if self.p == 1.0:
            return float(np.sum(magnitude * wv.weights))
        scale = float(np.max(magnitude))
        if scale == 0.0:
            return 0.0
        # factor out the sup norm so large p does not overflow
        total = float(np.sum((magnitude / scale) ** self.p * wv.weights))
        return scale * total ** (1.0 / self.p)

    def describe(self) -> str:
        return f"power:p{_format_number(self.p)}"

    @property
    def positively_homogeneous(self) -> bool:
        return True

    @property
    def even(self) -> bool:
        return True

    def lipschitz_bound(self, radius: float) -> float:
        return 1.0


@dataclass(frozen=True)
class SupMember:
    offset: float
    profile: StepFunction


def _negated(step: StepFunction) -> StepFunction:
    """Decreasing rearrangement of −f for f with rearrangement ``step``."""
    return StepFunction(
        step.total_mass - step.breakpoints[::-1], -step.levels[::-1].copy()
    )


@dataclass(frozen=True)
class SupFamily(Lagrangian):
    """L(ξ) = max over members of a + sup_{f ∼ f0} ∫ f ξ dμ_u."""

    members: tuple[SupMember, ...]
    source: str = field(default="inline", compare=False)

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a sup-family needs at least one member")
        for member in self.members:
            if abs(member.profile.total_mass - 1.0) > 1e-9:
                raise ValueError(
                    f"member profile mass {member.profile.total_mass!r} is not 1"
                )

    def evaluate_distribution(self, wv: WeightedValues) -> float:
        return max(
            m.offset + hardy_littlewood_sup(m.profile, wv) for m in self.members
        )

    def describe(self) -> str:
        return f"supfam:{self.source}"

    @property
    def positively_homogeneous(self) -> bool:
        return all(m.offset == 0.0 for m in self.members)

    @property
    def even(self) -> bool:
        def matches(a: SupMember, b: SupMember) -> bool:
            nb = _negated(b.profile)
            return (
                a.offset == b.offset
                and a.profile.breakpoints.shape == nb.breakpoints.shape
                and np.allclose(a.profile.breakpoints, nb.breakpoints, atol=1e-12)
                and np.allclose(a.profile.levels, nb.levels, atol=1e-12)
            )

        return all(any(matches(a, b) for b in self.members) for a in self.members)

    def lipschitz_bound(self, radius: float) -> float:
        return max(m.profile.integral(np.abs) for m in self.members)


def load_sup_family(path: str | Path) -> SupFamily:
    """Read a sup-family from its JSON description (see ``SupFamilyFile``)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = SupFamilyFile.model_validate(raw)
    members = []
    for item in spec.members:
        if item.breakpoints is not None and item.levels is not None:
            profile = StepFunction(np.array(item.breakpoints), np.array(item.levels))
        else:
            assert item.values is not None and item.weights is not None
            profile = decreasing_rearrangement(
                WeightedValues(np.array(item.values), np.array(item.weights))
            )
        members.append(SupMember(item.offset, profile))
    return SupFamily(tuple(members), source=str(path))


_TEXT_FORM = re.compile(r"^(orlicz|lorentz|power|supfam):(.+)$")
_NUMBER = r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)"


def parse_lagrangian(text: str) -> Lagrangian:
    """Parse ``orlicz:p2``, ``orlicz:cosh``, ``lorentz:a0.5``, ``power:p1``, ``supfam:<file>``.

    Raises:
        ValueError: on an unknown or malformed text form.
    """
    match = _TEXT_FORM.match(text.strip())
    if match is None:
        raise ValueError(f"unknown Lagrangian text form {text!r}")
    kind, arg = match.groups()
    if kind == "supfam":
        return load_sup_family(arg)
    if kind == "orlicz" and arg == "cosh":
        return Orlicz.cosh()
    if kind == "orlicz" and arg == "abs":
        return Orlicz.power(1.0)
    prefix = "a" if kind == "lorentz" else "p"
    number = re.fullmatch(prefix + _NUMBER, arg)
    if number is None:
        raise ValueError(f"malformed parameter {arg!r} for {kind}")
    value = float(number.group(1))
    if kind == "orlicz":
        return Orlicz.power(value)
    if kind == "lorentz":
        return LorentzWeak(value)
    return Power(value)


def _distribution(
    u: Potential | None, xi: WeightedValues | ArrayLike
) -> WeightedValues:
    if isinstance(xi, WeightedValues):
        return xi
    if u is None:
        raise ValueError("a potential is required to weight a grid field")
    return weighted_values(u, xi)


def evaluate(spec: Lagrangian, u: Potential, xi: ArrayLike) -> float:
    return spec.evaluate(u, xi)


def check_invariance(
    spec: Lagrangian,
    u: Potential | None,
    xi: WeightedValues | ArrayLike,
    v: Potential | None,
    eta: WeightedValues | ArrayLike,
    tol: float = 1e-9,
) -> VerificationReport:
    """Compare L on two equidistributed tangent vectors.

    Raises:
        NotEquidistributed: if (ξ, μ_u) and (η, μ_v) are not rearrangements of
            each other within ``tol``.
    """
    a = _distribution(u, xi)
    b = _distribution(v, eta)
    try:
        same = equidistributed(a, b, tol)
    except MassMismatch:
        same = False
    if not same:
        raise NotEquidistributed(rearrangement_distance(a, b))
    radius = max(float(np.max(np.abs(a.values))), float(np.max(np.abs(b.values))))
    discrepancy = abs(spec.evaluate_distribution(a) - spec.evaluate_distribution(b))
    return VerificationReport(
        experiment="invariance",
        check=spec.describe(),
        value=discrepancy,
        worst_violation=discrepancy,
        tolerance=tol * max(1.0, spec.lipschitz_bound(radius)),
    )


def check_fiber_convexity(
    spec: Lagrangian,
    u: Potential,
    xi: ArrayLike,
    eta: ArrayLike,
    samples: int = 16,
    seed: int = 0,
) -> VerificationReport:
    """Check L(λξ + (1 − λ)η) ≤ λL(ξ) + (1 − λ)L(η) at λ = 1/2 and random λ."""
    rng = np.random.default_rng(seed)
    xi_arr = np.asarray(xi, dtype=np.float64)
    eta_arr = np.asarray(eta, dtype=np.float64)
    l_xi = spec.evaluate(u, xi_arr)
    l_eta = spec.evaluate(u, eta_arr)
    lambdas = np.concatenate(([0.5], rng.uniform(0.0, 1.0, size=samples)))
    margins = []
    for lam in lambdas:
        lhs = spec.evaluate(u, lam * xi_arr + (1.0 - lam) * eta_arr)
        margins.append(lam * l_xi + (1.0 - lam) * l_eta - lhs)
    worst = max(0.0, -min(margins))
    return VerificationReport(
        experiment="fiber_convexity",
        check=spec.describe(),
        value=margins[0],
        worst_violation=worst,
        tolerance=1e-10 * max(1.0, abs(l_xi), abs(l_eta)),
        samples=margins,
        provenance={"seed": seed, "samples": samples},
    )


def _random_potential(grid: Grid, rng: np.random.Generator) -> Potential:
    shape = random_trigonometric_field(grid, rng)
    swing = float(np.max(np.abs(grid.laplacian(shape))))
    # keeps the density inside [0.5, 1.5]
    return make_potential(shape / swing, grid)


def estimate_lipschitz(
    spec: Lagrangian,
    radius: float,
    trials: int = 200,
    seed: int = 0,
    grid: Grid | None = None,
) -> float:
    """Largest observed |L(ξ) − L(η)| / ‖ξ − η‖_sup over random bounded pairs."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    grid = grid or Grid(8)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        u = _random_potential(grid, rng)
        xi = rng.uniform(-radius, radius, size=grid.shape)
        eta = rng.uniform(-radius, radius, size=grid.shape)
        gap = float(np.max(np.abs(xi - eta)))
        if gap == 0.0:
            continue
        best = max(best, abs(spec.evaluate(u, xi) - spec.evaluate(u, eta)) / gap)
    logger.debug(
        f"[lipschitz] {spec.describe()}: estimate {best:.6g} over {trials} trials",
        extra={"radius": radius, "seed": seed},
    )
    return best


def shrinking_bump_schedule(
    u: Potential, xi: ArrayLike, height: float = 1.0
) -> list[tuple[GridField, float]]:
    """ξ + height on corner blocks of side N/2, N/4, …, 1 cells, with block masses."""
    base = np.asarray(xi, dtype=np.float64)
    schedule = []
    side = u.grid.n // 2
    while side >= 1:
        bumped = base.copy()
        bumped[:side, :side] += height
        mass = float(np.sum(u.weights[:side, :side]))
        schedule.append((bumped, mass))
        side //= 2
    return schedule


def check_strong_continuity(
    spec: Lagrangian,
    u: Potential,
    xi: ArrayLike,
    schedule: Sequence[tuple[ArrayLike, float]],
    tol: float = 1e-2,
    tol_mass: float = 1e-2,
) -> VerificationReport:
    """|L(ξ_k) − L(ξ)| along a schedule whose exceptional masses m_k shrink.

    Passes when every discrepancy with m_k < ``tol_mass`` is at most ``tol``.
    """
    base = spec.evaluate(u, xi)
    discrepancies = [abs(spec.evaluate(u, xi_k) - base) for xi_k, _ in schedule]
    tail = [d for d, (_, m) in zip(discrepancies, schedule) if m < tol_mass]
    return VerificationReport(
        experiment="strong_continuity",
        check=spec.describe(),
        value=discrepancies[-1] if discrepancies else 0.0,
        worst_violation=max(tail, default=0.0),
        tolerance=tol,
        samples=discrepancies,
        details={"masses": [float(m) for _, m in schedule]},
    )
