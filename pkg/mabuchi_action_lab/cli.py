"""Command-line front end: ``mal solve``, ``mal verify`` and ``mal rearrange``.

Exit codes: 0 success, 1 verification violation, 2 solver failure, 3 config error.
Diagnostics go to standard error; standard output only carries result records.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
import tomllib
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from mabuchi_action_lab.core.errors import ConfigError, LabError, SolverFailure
from mabuchi_action_lab.core.logging_config import setup_logging
from mabuchi_action_lab.core.models import (
    ContinuationRecord,
    ExperimentConfig,
    ResultRecord,
    SolveRecord,
)
from mabuchi_action_lab.core.settings import settings
from mabuchi_action_lab.dynamics.geodesics import (
    EpsGeodesicProblem,
    continue_to_weak_geodesic,
    hcma_residual,
    solve_epsilon_geodesic,
)
from mabuchi_action_lab.dynamics.transport import PotentialPath
from mabuchi_action_lab.fixtures import resolve_fixture
from mabuchi_action_lab.geometry.grid import Grid, WeightedValues
from mabuchi_action_lab.geometry.rearrangement import decreasing_rearrangement
from mabuchi_action_lab.suites import SuiteContext, resolve_suites, run_suites

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file.

    Raises:
        ConfigError: naming the line and column of a syntax error, or the dotted
            field path of a validation error.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"TOML syntax error: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        extra = f" (+{exc.error_count() - 1} more)" if exc.error_count() > 1 else ""
        raise ConfigError(where, f"{first['msg']}{extra}") from exc


def _output_directory(config: ExperimentConfig, override: str | None) -> Path:
    if override:
        directory = Path(override)
    elif "directory" in config.output.model_fields_set:
        directory = Path(config.output.directory)
    else:
        directory = Path(settings.output_directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_field_csv(
    path: Path, column: str, times: Sequence[float], fields: np.ndarray
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "i", "j", column])
        n = fields.shape[-1]
        for t, field in zip(times, fields):
            stamp = f"{float(t):.17g}"
            for i in range(n):
                for j in range(n):
                    writer.writerow([stamp, i, j, f"{float(field[i, j]):.17g}"])


def cmd_solve(config: ExperimentConfig, output: str | None = None) -> int:
    """Solve one ε-geodesic (``geodesic.epsilon`` set) or the ε → 0 limit."""
    started = time.perf_counter()
    options = config.geodesic
    grid = Grid(config.grid.n, config.grid.scheme)
    u_a, u_b = resolve_fixture(config.fixture, grid)

    continuation: list[ContinuationRecord] = []
    converged = True
    path: PotentialPath
    if options.epsilon is not None:
        problem = EpsGeodesicProblem(
            u_a,
            u_b,
            epsilon=options.epsilon,
            interval=(0.0, options.T),
            time_steps=options.time_steps,
            solver_tol=options.solver_tol,
            max_iter=options.max_iter,
        )
        solution = solve_epsilon_geodesic(problem)
        path, epsilon = solution.path, solution.epsilon
        iterations, history = solution.iterations, list(solution.residual_history)
    else:
        result = continue_to_weak_geodesic(u_a, u_b, options)
        path, epsilon, converged = result.path, result.final_epsilon, result.converged
        continuation = [
            ContinuationRecord(
                epsilon=s.epsilon,
                iterations=s.iterations,
                residual=s.residual,
                sup_change=s.sup_change,
            )
            for s in result.history
        ]
        iterations = result.history[-1].iterations if result.history else 0
        history = [s.residual for s in result.history]

    residual = hcma_residual(path)
    deviation = float(np.max(np.abs(residual - epsilon)))
    directory = _output_directory(config, output)
    if "csv" in config.output.formats:
        _write_field_csv(directory / "path.csv", "u", path.times, path.fields)
        _write_field_csv(
            directory / "hcma_residual.csv", "c", path.times[1:-1], residual
        )
    if "json" in config.output.formats:
        record = SolveRecord(
            experiment=config.name,
            config_hash=config.config_hash(),
            n=grid.n,
            scheme=str(grid.scheme),
            time_steps=options.time_steps,
            T=options.T,
            epsilon=epsilon,
            iterations=iterations,
            residual_history=history,
            continuation=continuation,
            converged=converged,
            max_hcma_deviation=deviation,
            timing=(
                time.perf_counter() - started if config.output.include_timing else None
            ),
        )
        (directory / "path.json").write_text(
            record.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8"
        )
    logger.info(
        f"[solve] wrote artifacts to {directory}",
        extra={"epsilon": epsilon, "iterations": iterations, "hcma": deviation},
    )
    return EXIT_OK


def cmd_verify(
    config: ExperimentConfig,
    suites: Sequence[str] | None = None,
    output: str | None = None,
) -> int:
    """Run suites and emit one JSON record per check (stdout and ``verify.jsonl``)."""
    names = resolve_suites(suites if suites else config.verification.suites)
    # the hash identifies the suites actually run
    verification = config.verification.model_copy(update={"suites": names})
    config = config.model_copy(update={"verification": verification})
    ctx = SuiteContext.from_config(config)
    config_hash = config.config_hash()
    directory = _output_directory(config, output)

    records: list[ResultRecord] = []
    all_ok = True
    for name in names:
        started = time.perf_counter()
        [(_, reports)] = run_suites(ctx, [name])
        elapsed = time.perf_counter() - started
        for report in reports:
            all_ok = all_ok and report.outcome_ok
            epsilon = report.provenance.get("epsilon", config.geodesic.epsilon)
            records.append(
                ResultRecord(
                    experiment=report.experiment,
                    check=report.check,
                    value=report.worst_violation,
                    tolerance=report.tolerance,
                    passed=report.passed,
                    seed=report.provenance.get("seed"),
                    n=config.grid.n,
                    time_steps=config.geodesic.time_steps,
                    epsilon=epsilon,
                    config_hash=config_hash,
                    control=report.control_label,
                    samples=report.samples,
                    timing=elapsed if config.output.include_timing else None,
                )
            )

    lines = [r.model_dump_json(by_alias=True) for r in records]
    (directory / "verify.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    for line in lines:
        print(line)
    return EXIT_OK if all_ok else EXIT_VIOLATION


def _read_weighted_rows(path: Path) -> WeightedValues:
    values: list[float] = []
    weights: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for number, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ConfigError("input", f"row {number}: expected value,weight")
            try:
                value, weight = float(row[0]), float(row[1])
            except ValueError:
                if number == 1 and not values:
                    continue  # header
                raise ConfigError(
                    "input", f"row {number}: not a number pair {row!r}"
                ) from None
            if not (math.isfinite(value) and math.isfinite(weight)):
                raise ConfigError("input", f"row {number}: non-finite entry")
            if weight <= 0.0:
                raise ConfigError("input", f"row {number}: weight must be positive")
            values.append(value)
            weights.append(weight)
    if not values:
        raise ConfigError("input", "no value,weight rows")
    return WeightedValues(np.array(values), np.array(weights))


def cmd_rearrange(input_path: str | Path, output_path: str | Path) -> int:
    """Write the decreasing rearrangement of a value,weight table."""
    try:
        weighted = _read_weighted_rows(Path(input_path))
    except OSError as exc:
        raise ConfigError("input", f"cannot read {input_path}: {exc.strerror}") from exc
    step = decreasing_rearrangement(weighted)
    with open(output_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["breakpoint", "level"])
        for breakpoint, level in zip(step.breakpoints[1:], step.levels):
            writer.writerow([repr(float(breakpoint)), repr(float(level))])
    logger.info(
        f"[rearrange] {len(weighted)} rows -> {len(step)} steps",
        extra={"output": str(output_path)},
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mal",
        description="Numerical lab for invariant Lagrangians on Kähler potentials.",
    )
    parser.add_argument("--log-level", default=None, help="Override MAL_LOG_LEVEL")
    parser.add_argument(
        "--log-format",
        choices=["console", "json"],
        default=None,
        help="Override MAL_LOG_FORMAT",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Solve an ε-geodesic or its ε → 0 limit")
    solve.add_argument("--config", required=True, help="TOML experiment file")
    solve.add_argument("--output-dir", default=None, help="Artifact directory")

    verify = sub.add_parser("verify", help="Run verification suites")
    verify.add_argument("--config", required=True, help="TOML experiment file")
    verify.add_argument(
        "--suite", default=None, help="Comma-separated suite names (overrides config)"
    )
    verify.add_argument("--output-dir", default=None, help="Artifact directory")

    rearrange = sub.add_parser("rearrange", help="Decreasing rearrangement of a table")
    rearrange.add_argument("--in", dest="input", required=True, help="value,weight CSV")
    rearrange.add_argument("--out", dest="output", required=True, help="Output CSV")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    try:
        if args.command == "rearrange":
            return cmd_rearrange(args.input, args.output)
        config = load_config(args.config)
        if args.command == "solve":
            return cmd_solve(config, args.output_dir)
        suites = None
        if args.suite:
            suites = [s.strip() for s in args.suite.split(",") if s.strip()]
        return cmd_verify(config, suites, args.output_dir)
    except ConfigError as exc:
        logger.error(f"[config] {exc}", extra={"field": exc.field})
        return EXIT_CONFIG
    except SolverFailure as exc:
        logger.error(f"[solver] {exc}", extra={"error": type(exc).__name__})
        return EXIT_SOLVER
    except LabError as exc:
        logger.error(f"[run] {exc}", extra={"error": type(exc).__name__})
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
