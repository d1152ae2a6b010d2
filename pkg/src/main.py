import argparse
import logging
import sys
import os
from typing import List, Optional

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.checks.ito_checks import (
    ResidualSummary,
    ItoTestFunction,
    convergence_ratios,
    ito_residual,
    product_rule_residual,
    residual_table,
)
from src.config.scenario_config import ScenarioConfig, load_config
from src.duality.duality_estimator import evaluate_duality
from src.errors import (
    AssumptionViolation,
    ConfigError,
    DtTooLargeError,
    InvalidArgumentError,
    InvalidSpecError,
    NumericalBlowupError,
    ResourceLimitError,
)
from src.fixedpoint.picard_solver import picard_solve
from src.load.result_writer import ResultWriter
from src.noise.noise_bundle import ExactNoiseSampler, map_path_batches, sample_noise
from src.noise.time_grid import NODE_TOL, TimeGrid
from src.oracle.duality_gap import duality_gap
from src.oracle.scenario_tree import build_tree
from src.sdde.assumptions import validate_model
from src.sdde.coefficients import InitialPath, SDDECoefficients
from src.sdde.path_engine import coefficient_stream, simulate_sdde, simulate_sdde_batched


logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "picard", "duality", "oracle-gap", "check-ito", "check-product", "validate")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_RESOURCE = 4

VALIDATION_ERRORS = (InvalidSpecError, InvalidArgumentError, AssumptionViolation, ConfigError)
NUMERICAL_ERRORS = (NumericalBlowupError, DtTooLargeError)

PATH_COLUMNS = ["k", "t", "regime", "X"]
RESIDUAL_COLUMNS = ["dt", "mean_abs_residual", "se", "n_paths"]


def _writer(config: ScenarioConfig) -> ResultWriter:
    return ResultWriter(config.output.dir, config.output.prefix, config.digest, config.output.formats)


def _sampler(config: ScenarioConfig, grid: TimeGrid) -> ExactNoiseSampler:
    return ExactNoiseSampler(config.chain_spec, config.jump_spec, grid, config.initial_state, config.run.seed)


def _write_paths(writer: ResultWriter, ensemble, count: int) -> None:
    for n in range(min(count, ensemble.n_paths)):
        writer.write_csv(f"path_{int(ensemble.path_indices[n])}", PATH_COLUMNS, ensemble.path(n).csv_rows())


def _terminal_summary(values: np.ndarray) -> dict:
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return {"terminal_mean": float(values.mean()), "terminal_se": se}


def run_simulate(config: ScenarioConfig) -> None:
    grid, run = config.grid, config.run
    ensemble = simulate_sdde_batched(
        config.sdde, config.x0, config.delays, grid, _sampler(config, grid), run.n_paths, run.batch_size, run.workers
    )
    writer = _writer(config)
    _write_paths(writer, ensemble, config.output.path_files)
    writer.write_json("simulate", {
        "n_paths": run.n_paths,
        "seed": run.seed,
        "K": grid.K,
        "m": grid.m,
        "dt": grid.dt,
        **_terminal_summary(ensemble.terminal()),
    })


def run_picard(config: ScenarioConfig) -> None:
    grid, run = config.grid, config.run
    noise = sample_noise(_sampler(config, grid), run.n_paths, run.batch_size, run.workers)
    solution, diagnostics = picard_solve(
        config.sdde, config.x0, config.delays, grid, noise, tol=run.tolerance, max_iter=run.max_iter
    )
    direct = simulate_sdde(config.sdde, config.x0, config.delays, grid, noise)
    gap = float(np.max(np.abs(solution.values - direct.values)))
    logger.info(f"Largest per-path gap between the Picard limit and direct Euler: {gap:.3e}")

    writer = _writer(config)
    _write_paths(writer, solution, config.output.path_files)
    writer.write_json("picard", {**diagnostics.to_dict(), "euler_max_abs_diff": gap, "n_paths": run.n_paths, "seed": run.seed})


def run_duality(config: ScenarioConfig) -> None:
    grid, run = config.grid, config.run
    config.linear.check_bounds(grid.extend_horizon(), config.jump_spec.marks)
    estimate = evaluate_duality(
        config.linear,
        config.terminal,
        grid,
        grid.delta,
        config.initial_state,
        run.n_paths,
        run.seed,
        config.chain_spec,
        config.jump_spec,
        batch_size=run.batch_size,
        workers=run.workers,
    )
    _writer(config).write_json("duality", estimate.to_dict())


def tree_grid(config: ScenarioConfig, depth: Optional[int] = None) -> TimeGrid:
    """Tree levels span [t, T + delta]; depth defaults to the scenario's K + m."""
    grid = config.grid
    depth = grid.K + grid.m if depth is None else int(depth)
    if depth < 2:
        raise InvalidArgumentError(f"tree depth must be at least 2, got {depth}")
    span = grid.T - grid.t0 + grid.delta
    dt = span / depth
    m = grid.delta / dt
    if abs(m - round(m)) > NODE_TOL or round(m) < 1 or depth - round(m) < 1:
        raise InvalidArgumentError(f"tree depth {depth} puts delta={grid.delta:g} at {m:g} steps; need an integer in 1..{depth - 1}")
    return TimeGrid(grid.t0, grid.T + grid.delta, depth, int(round(m)))


def run_oracle_gap(config: ScenarioConfig, depth: Optional[int] = None) -> None:
    grid = tree_grid(config, depth)
    config.linear.check_bounds(grid, config.jump_spec.marks)
    tree = build_tree(config.chain_spec, config.jump_spec, grid, config.initial_state)
    report = duality_gap(tree, config.linear, config.terminal)
    _writer(config).write_json(f"oracle_gap_K{grid.K}", report.to_dict())


def _test_function(config: ScenarioConfig) -> ItoTestFunction:
    checks = config.checks
    if checks.phi == "identity":
        phi = ItoTestFunction.identity()
    elif checks.phi == "regime-indicator":
        if len(checks.phi_values) != config.D:
            raise ConfigError(f"'checks.phi_values' needs {config.D} values for regime-indicator, got {len(checks.phi_values)}")
        phi = ItoTestFunction.regime_indicator(checks.phi_values)
    else:
        phi = ItoTestFunction.square()
    phi.verify_derivatives(config.D, seed=config.run.seed)
    return phi


def _levels(config: ScenarioConfig) -> List[TimeGrid]:
    levels = config.checks.levels or [config.grid.K]
    return [config.grid.with_steps(int(K)) for K in levels]


def _write_residuals(config: ScenarioConfig, name: str, summaries: List[ResidualSummary]) -> None:
    writer = _writer(config)
    writer.write_csv(name, RESIDUAL_COLUMNS, residual_table(summaries), time_columns=("dt",))
    writer.write_json(name, {
        "table": residual_table(summaries),
        "ratios": convergence_ratios(summaries),
        "seed": config.run.seed,
    })


def run_check_ito(config: ScenarioConfig) -> None:
    phi = _test_function(config)
    run, delays = config.run, config.delays
    summaries = []
    for grid in _levels(config):
        sampler = _sampler(config, grid)

        def residuals(indices: np.ndarray) -> np.ndarray:
            noise = sampler.sample(indices)
            ensemble = simulate_sdde(config.sdde, config.x0, delays, grid, noise)
            stream = coefficient_stream(config.sdde, ensemble, noise, delays)
            return ito_residual(phi, ensemble, stream, noise)

        values = np.concatenate(map_path_batches(residuals, run.n_paths, run.batch_size, run.workers))
        summaries.append(ResidualSummary.of(values, grid.dt))
        logger.info(f"Ito residual of {phi.name} at dt={grid.dt:.6g}: |mean| {summaries[-1].mean_abs_residual:.3e} (SE {summaries[-1].se:.3e})")
    _write_residuals(config, "ito_residuals", summaries)


def run_check_product(config: ScenarioConfig) -> None:
    run, delays = config.run, config.delays
    unit = SDDECoefficients.zero(config.D)
    summaries = []
    for grid in _levels(config):
        sampler = _sampler(config, grid)

        def residuals(indices: np.ndarray) -> np.ndarray:
            noise = sampler.sample(indices)
            first = simulate_sdde(config.sdde, config.x0, delays, grid, noise)
            first_stream = coefficient_stream(config.sdde, first, noise, delays)
            if config.checks.product_with == "unit":
                second = simulate_sdde(unit, InitialPath.constant(1.0), delays, grid, noise)
                second_stream = coefficient_stream(unit, second, noise, delays)
            else:
                second, second_stream = first, first_stream
            return product_rule_residual(first, first_stream, second, second_stream, noise)

        values = np.concatenate(map_path_batches(residuals, run.n_paths, run.batch_size, run.workers))
        summaries.append(ResidualSummary.of(values, grid.dt))
        logger.info(f"Product-rule residual at dt={grid.dt:.6g}: |mean| {summaries[-1].mean_abs_residual:.3e} (SE {summaries[-1].se:.3e})")
    _write_residuals(config, "product_residuals", summaries)


def run_validate(config: ScenarioConfig) -> None:
    report = validate_model(config.sdde, config.delays, config.grid, config.chain_spec, config.jump_spec, seed=config.run.seed)
    report["linear_bounds"] = config.linear.check_bounds(config.grid.extend_horizon(), config.jump_spec.marks)
    report["stationary_distribution"] = config.chain_spec.stationary_distribution()
    for problem in report["problems"]:
        logger.warning(f"Assumption check: {problem}")
    _writer(config).write_json("validate", report)


def run_command(command: str, config: ScenarioConfig, tree_depth: Optional[int] = None) -> int:
    """Run one pipeline; returns the exit status (0 ok, 2 validation, 3 numerical, 4 resource limit)."""
    handlers = {
        "simulate": run_simulate,
        "picard": run_picard,
        "duality": run_duality,
        "oracle-gap": lambda c: run_oracle_gap(c, tree_depth),
        "check-ito": run_check_ito,
        "check-product": run_check_product,
        "validate": run_validate,
    }
    if command not in handlers:
        logger.error(f"Unknown command '{command}' (known: {', '.join(COMMANDS)})")
        return EXIT_VALIDATION
    try:
        logger.info(f"Running '{command}' on {config.source} (seed {config.run.seed}, {config.run.n_paths} paths).")
        handlers[command](config)
        logger.info(f"'{command}' completed successfully.")
        return EXIT_OK
    except VALIDATION_ERRORS as e:
        logger.error(f"Validation failed: {e}")
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except ResourceLimitError as e:
        logger.error(f"Resource limit: {e}")
        return EXIT_RESOURCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Regime-switching delayed and anticipated equations: simulation and checks.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="Scenario YAML file")
    parser.add_argument("--seed", type=int, help="Overrides run.seed")
    parser.add_argument("--out", help="Overrides output.dir")
    parser.add_argument("--paths", type=int, help="Overrides run.n_paths")
    parser.add_argument("--grid-k", type=int, help="Steps on [t, T] (tree levels on [t, T + delta] for oracle-gap)")
    parser.add_argument("--workers", type=int, help="Overrides run.workers")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        grid_k = None if args.command == "oracle-gap" else args.grid_k
        config = config.with_overrides(seed=args.seed, n_paths=args.paths, grid_k=grid_k, out=args.out, workers=args.workers)
    except VALIDATION_ERRORS as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_VALIDATION
    return run_command(args.command, config, tree_depth=args.grid_k if args.command == "oracle-gap" else None)


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    sys.exit(main())
