import logging

import numpy as np

from src.errors import InvalidArgumentError
from src.noise.jump_measure import JumpSpec
from src.noise.noise_bundle import DEFAULT_BATCH_SIZE, ExactNoiseSampler, NoiseBatch, map_path_batches
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import NODE_TOL, TimeGrid
from src.sdde.path_engine import DelayedPathEnsemble, simulate_linear_sdde
from .linear_data import DualityEstimate, LinearABSDEData, TerminalData, TerminalNodes

logger = logging.getLogger(__name__)


def check_alignment(grid: TimeGrid, delta: float) -> None:
    if grid.m < 1:
        raise InvalidArgumentError(f"the anticipation delay must span at least one step, got m={grid.m}")
    if abs(grid.delta - delta) > NODE_TOL * max(1.0, abs(delta)):
        raise InvalidArgumentError(
            f"delta={delta:g} is not the grid delay m*dt={grid.delta:g} (m={grid.m}, dt={grid.dt:g})"
        )


def terminal_nodes(terminal: TerminalData, grid: TimeGrid, jump_spec: JumpSpec, D: int) -> TerminalNodes:
    """Terminal data on the nodes of [T, T + delta] of the grid on [t, T]."""
    times = grid.T + np.arange(grid.m + 1) * grid.dt
    return terminal.on_nodes(times, jump_spec.marks, D)


def duality_integrand(
    data: LinearABSDEData,
    terminal: TerminalNodes,
    ensemble: DelayedPathEnsemble,
    noise: NoiseBatch,
) -> np.ndarray:
    """Per-path value of the closed formula on the extended grid [t, T + delta].

    X(T) xi(T) + sum_{t_k < T} X_k l_k dt plus, on [T, T + delta), the lagged terms
    (xi b_bar + psi sigma_bar + sum_z zeta eta_bar nu(z) + sum_j vartheta_j gamma_bar_j lambda'_j) X_{k-m} dt
    with the barred coefficients read at (t_{k-m}, alpha(t_{k-m}-)).
    """
    ext = ensemble.grid
    m, K = ext.m, ext.K
    KT = K - m
    dt = ext.dt
    states = noise.states
    marks = noise.jump_spec.marks
    mass = noise.jump_spec.levy_mass

    total = ensemble.values[:, ext.offset(KT)] * terminal.xi[0]
    for k in range(KT):
        x = ensemble.values[:, ext.offset(k)]
        total = total + x * data.scalar("l", ext.time(k), states[:, k]) * dt

    intensity = noise.mean_intensity()
    for k in range(KT, K):
        j = k - KT
        t_lag = ext.time(k - m)
        regime_lag = states[:, max(k - m, 0)]
        x_lag = ensemble.values[:, ext.offset(k - m)]
        bracket = (
            terminal.xi[j] * data.scalar("b_bar", t_lag, regime_lag)
            + terminal.psi[j] * data.scalar("sigma_bar", t_lag, regime_lag)
            + data.per_mark("eta_bar", t_lag, regime_lag, marks) @ (terminal.zeta[j] * mass)
            + np.sum(data.vector("gamma_bar", t_lag, regime_lag) * terminal.vartheta[j] * intensity[:, k], axis=1)
        )
        total = total + bracket * x_lag * dt
    return total


def _default_sampler(chain_spec: RegimeChainSpec, jump_spec: JumpSpec, ext: TimeGrid, initial_regime: int, seed: int):
    return ExactNoiseSampler(chain_spec, jump_spec, ext, initial_regime, seed)


def _check_sampler(sampler, ext: TimeGrid) -> None:
    if not sampler.grid.same_as(ext):
        raise InvalidArgumentError(f"sampler runs on {sampler.grid}; the formula needs the extended grid {ext}")


def evaluate_duality(
    data: LinearABSDEData,
    terminal: TerminalData,
    grid: TimeGrid,
    delta: float,
    initial_regime: int,
    n_paths: int,
    seed: int,
    chain_spec: RegimeChainSpec,
    jump_spec: JumpSpec,
    sampler=None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> DualityEstimate:
    """Monte Carlo estimate of Y(t) at t = grid.t0 with alpha(t) = e_{initial_regime}; grid spans [t, T]."""
    check_alignment(grid, delta)
    if data.n_regimes != chain_spec.D:
        raise InvalidArgumentError(f"linear data know {data.n_regimes} regimes but the chain has {chain_spec.D}")
    ext = grid.extend_horizon()
    sampler = sampler or _default_sampler(chain_spec, jump_spec, ext, initial_regime, seed)
    _check_sampler(sampler, ext)
    nodes = terminal_nodes(terminal, grid, jump_spec, data.n_regimes)

    def run(indices: np.ndarray) -> np.ndarray:
        noise = sampler.sample(indices)
        ensemble = simulate_linear_sdde(data, ext, noise)
        return duality_integrand(data, nodes, ensemble, noise)

    samples = np.concatenate(map_path_batches(run, n_paths, batch_size, workers))
    estimate = DualityEstimate.from_samples(samples, grid, initial_regime, seed)
    logger.info(f"Duality estimate Y(t={grid.t0:g}) = {estimate.y:.8g} (SE {estimate.standard_error:.2e}, {n_paths} paths, K={grid.K}).")
    return estimate


def feynman_kac_integrand(data: LinearABSDEData, terminal: TerminalNodes, noise: NoiseBatch, n_steps: int) -> np.ndarray:
    """X(T) xi(T) + sum X_k l_k dt with X the product of one-step growth factors (delay-free data only)."""
    grid = noise.grid
    dt = grid.dt
    D = data.n_regimes
    regimes = np.arange(D, dtype=np.int64)
    off = noise.chain_spec.off_diagonal
    mass = noise.jump_spec.levy_mass
    marks = noise.jump_spec.marks
    N = noise.n_paths

    x = np.ones(N)
    running = np.zeros(N)
    for k in range(n_steps):
        t = grid.time(k)
        state = noise.states[:, k]
        table = data.vector("gamma", t, regimes)  # (D, D): row i is gamma at e_i
        switch_term = np.einsum("nij,ij->n", noise.switches[:, k], table) - noise.occupation[:, k] @ np.sum(off * table, axis=1)
        eta = data.per_mark("eta", t, state, marks)
        jump_term = np.sum(eta * noise.jump_counts[:, k], axis=1) - eta @ mass * dt
        running = running + x * data.scalar("l", t, state) * dt
        x = x * (
            1.0
            + data.scalar("b", t, state) * dt
            + data.scalar("sigma", t, state) * noise.brownian[:, k]
            + jump_term
            + switch_term
        )

    return x * terminal.xi[0] + running


def evaluate_feynman_kac(
    data: LinearABSDEData,
    terminal: TerminalData,
    grid: TimeGrid,
    initial_regime: int,
    n_paths: int,
    seed: int,
    chain_spec: RegimeChainSpec,
    jump_spec: JumpSpec,
    sampler=None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> DualityEstimate:
    """E[X(T) xi(T) + int_t^T X l ds] for delay-free data; barred coefficients and segment data are ignored.

    Samples the same extended-grid noise as evaluate_duality so both see identical paths.
    """
    ext = grid.extend_horizon()
    sampler = sampler or _default_sampler(chain_spec, jump_spec, ext, initial_regime, seed)
    _check_sampler(sampler, ext)
    nodes = terminal_nodes(terminal, grid, jump_spec, data.n_regimes)

    def run(indices: np.ndarray) -> np.ndarray:
        return feynman_kac_integrand(data, nodes, sampler.sample(indices), grid.K)

    samples = np.concatenate(map_path_batches(run, n_paths, batch_size, workers))
    return DualityEstimate.from_samples(samples, grid, initial_regime, seed)
