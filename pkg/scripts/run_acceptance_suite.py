#!/usr/bin/env python3
import sys
import os
import math
import logging
import tempfile
import time

import numpy as np

# Suppress logging from modules
logging.basicConfig(level=logging.WARNING)

# Ensure src is on path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.checks.ito_checks import (
    ResidualSummary,
    ItoTestFunction,
    convergence_ratios,
    ito_decomposition,
    ito_residual,
    product_rule_residual,
)
from src.config.scenario_config import load_config
from src.duality.duality_estimator import evaluate_duality
from src.fixedpoint.picard_solver import picard_solve
from src.main import main as run_cli, tree_grid
from src.noise.jump_measure import JumpSpec
from src.noise.noise_bundle import ExactNoiseSampler, sample_noise
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid
from src.oracle.duality_gap import duality_gap
from src.oracle.scenario_tree import build_tree
from src.sdde.coefficients import DelayFunctions, InitialPath, SDDECoefficients
from src.sdde.path_engine import coefficient_stream, simulate_sdde

SCENARIOS = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'config', 'scenarios'))
TOTAL_STEPS = 8


def print_header(title):
    print("=" * 80)
    print(title)
    print("=" * 80)


def print_step(step_num, total_steps, message):
    print(f"\n[{step_num}/{total_steps}] {message}")


def print_section(title):
    print(f"\n{title}")
    print("-" * 80)


def mark(ok):
    return "OK" if ok else "X"


def mean_and_se(values):
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def simulate_with_stream(config, grid, n_paths):
    sampler = ExactNoiseSampler(config.chain_spec, config.jump_spec, grid, config.initial_state, config.run.seed)
    noise = sample_noise(sampler, n_paths, config.run.batch_size)
    ensemble = simulate_sdde(config.sdde, config.x0, config.delays, grid, noise)
    return ensemble, coefficient_stream(config.sdde, ensemble, noise, config.delays), noise


def check_duality_gap(mixed):
    print_step(1, TOTAL_STEPS, "Duality cross-validation on the mixed model")
    reports = {}
    for depth in (4, 8):
        started = time.time()
        tree = build_tree(mixed.chain_spec, mixed.jump_spec, tree_grid(mixed, depth), mixed.initial_state)
        reports[depth] = duality_gap(tree, mixed.linear, mixed.terminal)
        r = reports[depth]
        print(f"  depth {depth}: y_forward={r.y_forward:.10f} y_backward={r.y_backward:.10f} gap={r.gap:.3e} ({r.paths:,} paths, {time.time() - started:.1f}s)")
    ratio = reports[8].gap / reports[4].gap if reports[4].gap > 0 else float("nan")
    ok = math.isfinite(reports[4].gap) and 0.3 <= ratio <= 0.7
    print(f"  {mark(ok)} gap(8) / gap(4) = {ratio:.3f} (expected in [0.3, 0.7])")
    print("  Depth 6 is skipped: delta = 0.25 is not a whole number of steps of (T + delta) / 6.")
    return ok


def check_zero_driver(zero):
    print_step(2, TOTAL_STEPS, "Zero-driver exactness")
    tree = build_tree(zero.chain_spec, zero.jump_spec, tree_grid(zero), zero.initial_state)
    report = duality_gap(tree, zero.linear, zero.terminal)
    grid = zero.grid
    estimate = evaluate_duality(
        zero.linear, zero.terminal, grid, grid.delta, zero.initial_state, zero.run.n_paths, zero.run.seed, zero.chain_spec, zero.jump_spec
    )
    ok = report.gap <= 1e-12 and estimate.y == 1.0 and estimate.standard_error == 0.0
    print(f"  {mark(report.gap <= 1e-12)} tree gap = {report.gap:.3e}")
    print(f"  {mark(estimate.y == 1.0 and estimate.standard_error == 0.0)} Monte Carlo Y = {estimate.y!r}, SE = {estimate.standard_error!r}")
    return ok


def check_contraction(lipschitz):
    print_step(3, TOTAL_STEPS, "Contraction certificate on the Lipschitz model")
    run = lipschitz.run
    sampler = ExactNoiseSampler(lipschitz.chain_spec, lipschitz.jump_spec, lipschitz.grid, lipschitz.initial_state, run.seed)
    noise = sample_noise(sampler, run.n_paths, run.batch_size)
    solution, diagnostics = picard_solve(lipschitz.sdde, lipschitz.x0, lipschitz.delays, lipschitz.grid, noise, tol=run.tolerance, max_iter=run.max_iter)
    direct = simulate_sdde(lipschitz.sdde, lipschitz.x0, lipschitz.delays, lipschitz.grid, noise)
    gap = float(np.max(np.abs(solution.values - direct.values)))
    worst = max(diagnostics.ratios[1:], default=0.0)
    print(f"  beta = {diagnostics.beta:g}, iterations = {diagnostics.iterations}, converged = {diagnostics.converged}")
    print(f"  {mark(worst <= 0.6)} largest ratio for n >= 1: {worst:.3f} (expected <= 0.6)")
    print(f"  {mark(gap <= 1e-10)} max |Picard - Euler| = {gap:.3e}")
    return diagnostics.converged and worst <= 0.6 and gap <= 1e-10


def check_martingales(n_paths=100_000):
    print_step(4, TOTAL_STEPS, "Martingale suite")
    chain = RegimeChainSpec(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    jumps = JumpSpec(0.5, (0.5,), (1.0,))
    grid = TimeGrid(0.0, 1.0, 8)
    noise = sample_noise(ExactNoiseSampler(chain, jumps, grid, 0, 2024), n_paths)
    results = []

    print_section("Compensated counts and integrals")
    phi_tilde = noise.compensated_chain_increments().sum(axis=1)
    for j in range(chain.D):
        results.append((f"Phi~_{j}(T)", *mean_and_se(phi_tilde[:, j])))
    jump_integral = (noise.compensated_jump_increments() * np.array(jumps.marks)).sum(axis=(1, 2))
    results.append(("compensated jump integral", *mean_and_se(jump_integral)))

    ensemble = simulate_sdde(SDDECoefficients.zero(chain.D), InitialPath.constant(1.0), DelayFunctions.constant(0.0), grid, noise)
    stream = coefficient_stream(SDDECoefficients.zero(chain.D), ensemble, noise, DelayFunctions.constant(0.0))
    decomposition = ito_decomposition(ItoTestFunction.regime_indicator([1.0, -2.0]), ensemble, stream, noise)
    results.append(("switch martingale of the regime indicator", *mean_and_se(decomposition.terms["switch_martingale"])))

    ok = True
    for name, mean, se in results:
        passed = abs(mean) <= 3 * se
        ok = ok and passed
        print(f"  {mark(passed)} {name}: mean {mean:+.3e}, SE {se:.3e}")
    return ok


def check_delay_oracle():
    print_step(5, TOTAL_STEPS, "Deterministic delay oracle")
    coeffs = SDDECoefficients(lambda t, x, y, r: y, lambda *a: 0.0, lambda *a: 0.0, lambda *a: 0.0, lipschitz_C=1.0)
    chain = RegimeChainSpec(np.array([[0.0]]))
    errors = []
    for K in (64, 128, 256):
        grid = TimeGrid(0.0, 1.0, K, K // 4)
        noise = sample_noise(ExactNoiseSampler(chain, JumpSpec.none(), grid, 0, 0), 1)
        path = simulate_sdde(coeffs, InitialPath.constant(1.0), DelayFunctions.constant(0.25), grid, noise)
        exact = np.array([method_of_steps(t, 0.25) for t in grid.horizon_times()])
        errors.append(float(np.max(np.abs(path.horizon_values()[0] - exact))))
        print(f"  dt = 1/{K}: max node error {errors[-1]:.3e}")
    ratios = [errors[i + 1] / errors[i] for i in range(len(errors) - 1)]
    ok = errors[0] <= 2.0 / 64 and all(0.35 <= r <= 0.65 for r in ratios)
    print(f"  {mark(ok)} ratios {[round(r, 3) for r in ratios]} (expected in [0.35, 0.65])")
    return ok


def method_of_steps(t, delta):
    n_max = int(math.floor(t / delta + 1e-12)) + 1
    return sum((t - (n - 1) * delta) ** n / math.factorial(n) for n in range(n_max + 1))


def check_ito_convergence(mixed):
    print_step(6, TOTAL_STEPS, "Ito and product-rule convergence on the mixed model")
    summaries = []
    worst_difference = 0.0
    for K in mixed.checks.levels:
        grid = mixed.grid.with_steps(K)
        ensemble, stream, noise = simulate_with_stream(mixed, grid, mixed.run.n_paths)
        square = ito_residual(ItoTestFunction.square(), ensemble, stream, noise)
        product = product_rule_residual(ensemble, stream, ensemble, stream, noise)
        worst_difference = max(worst_difference, float(np.max(np.abs(product - square))))
        summaries.append(ResidualSummary.of(square, grid.dt))
        print(f"  dt = {grid.dt:.6g}: |mean residual| {summaries[-1].mean_abs_residual:.3e} (SE {summaries[-1].se:.3e})")
    ratios = convergence_ratios(summaries)
    ratios_ok = all(0.35 <= r <= 0.65 for r in ratios)
    print(f"  {mark(ratios_ok)} ratios {[round(r, 3) for r in ratios]} (expected in [0.35, 0.65])")
    print(f"  {mark(worst_difference <= 1e-12)} max |product - square| = {worst_difference:.3e}")
    return ratios_ok and worst_difference <= 1e-12


def check_statistics():
    print_step(7, TOTAL_STEPS, "Statistical sanity")
    s, n_paths = 0.3, 100_000
    grid = TimeGrid(0.0, 1.0, 16)
    chain = RegimeChainSpec(np.array([[0.0]]))
    noise = sample_noise(ExactNoiseSampler(chain, JumpSpec.none(), grid, 0, 5), n_paths)
    coeffs = SDDECoefficients(lambda *a: 0.0, lambda *a: s, lambda *a: 0.0, lambda *a: 0.0, lipschitz_C=1.0)
    increments = simulate_sdde(coeffs, InitialPath.constant(0.0), DelayFunctions.constant(0.0), grid, noise).terminal()
    variance, variance_se = mean_and_se(increments ** 2 - increments.mean() ** 2)
    variance_ok = abs(variance - s ** 2) <= 3 * variance_se
    print(f"  {mark(variance_ok)} terminal variance {variance:.5f} vs s^2 T = {s ** 2:.5f} (SE {variance_se:.2e})")

    asymmetric = RegimeChainSpec(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    long_grid = TimeGrid(0.0, 200.0, 200)
    occupation = sample_noise(ExactNoiseSampler(asymmetric, JumpSpec.none(), long_grid, 0, 6), 1000).occupation.sum(axis=1) / long_grid.T
    pi = asymmetric.stationary_distribution()
    occupation_ok = True
    for j in range(asymmetric.D):
        mean, se = mean_and_se(occupation[:, j])
        passed = abs(mean - pi[j]) <= 3 * se
        occupation_ok = occupation_ok and passed
        print(f"  {mark(passed)} occupation of e_{j}: {mean:.4f} vs pi = {pi[j]:.4f} (SE {se:.2e})")
    return variance_ok and occupation_ok


def read_outputs(root):
    contents = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as f:
            contents[name] = f.read()
    return contents


def check_reproducibility():
    print_step(8, TOTAL_STEPS, "Reproducibility under 1 and 8 workers")
    runs = [
        ("simulate", os.path.join(SCENARIOS, "mixed_model.yaml"), []),
        ("duality", os.path.join(SCENARIOS, "mixed_model.yaml"), []),
        ("check-product", os.path.join(SCENARIOS, "mixed_model.yaml"), []),
        ("picard", os.path.join(SCENARIOS, "lipschitz_model.yaml"), ["--paths", "1000"]),
        ("oracle-gap", os.path.join(SCENARIOS, "mixed_model.yaml"), ["--grid-k", "4"]),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        for workers in ("1", "8"):
            for command, config, extra in runs:
                status = run_cli([command, "--config", config, "--workers", workers, "--out", os.path.join(tmp, workers), *extra])
                if status != 0:
                    print(f"  X {command} exited with status {status}")
                    return False
        serial, threaded = read_outputs(os.path.join(tmp, "1")), read_outputs(os.path.join(tmp, "8"))
    identical = serial.keys() == threaded.keys() and all(serial[n] == threaded[n] for n in serial)
    print(f"  {mark(identical)} {len(serial)} output files compared byte for byte")
    return identical


def run_acceptance_suite():
    print_header("ACCEPTANCE SUITE")
    mixed = load_config(os.path.join(SCENARIOS, "mixed_model.yaml"))
    zero = load_config(os.path.join(SCENARIOS, "zero_driver.yaml"))
    lipschitz = load_config(os.path.join(SCENARIOS, "lipschitz_model.yaml"))

    results = {
        "duality cross-validation": check_duality_gap(mixed),
        "zero-driver exactness": check_zero_driver(zero),
        "contraction certificate": check_contraction(lipschitz),
        "martingale suite": check_martingales(),
        "deterministic delay oracle": check_delay_oracle(),
        "Ito and product-rule convergence": check_ito_convergence(mixed),
        "statistical sanity": check_statistics(),
        "reproducibility": check_reproducibility(),
    }

    print_header("SUMMARY")
    for name, ok in results.items():
        print(f"  {mark(ok)} {name}")
    if all(results.values()):
        print("\nOK All criteria passed.")
    else:
        print("\nWARNING: Some criteria failed!")
    print("=" * 80)
    return all(results.values())


if __name__ == "__main__":
    try:
        sys.exit(0 if run_acceptance_suite() else 1)
    except Exception as e:
        print(f"\nERROR: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
