from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union
import logging

import numpy as np

from src.duality.linear_data import LinearABSDEData
from src.errors import InvalidArgumentError, NumericalBlowupError
from src.noise.noise_bundle import (
    DEFAULT_BATCH_SIZE,
    ExactNoiseSampler,
    NoiseBatch,
    NoiseBundle,
    map_path_batches,
)
from src.noise.time_grid import TimeGrid
from .coefficients import (
    DelayFunctions,
    InitialPath,
    SDDECoefficients,
    as_batch,
    as_batch_vector,
    regime_resolved,
)

logger = logging.getLogger(__name__)

NoiseInput = Union[NoiseBatch, NoiseBundle]


@dataclass(frozen=True, eq=False)
class DelayedPath:
    """One scalar path on the nodes k = -m..K; lookup(t) returns the value at the greatest node <= t."""
    grid: TimeGrid
    values: np.ndarray
    regimes: np.ndarray

    def value(self, k: int) -> float:
        return float(self.values[self.grid.offset(k)])

    def lookup(self, t: float) -> float:
        return self.value(self.grid.node_at_or_before(t))

    def history(self) -> np.ndarray:
        return self.values[: self.grid.m + 1]

    def horizon(self) -> np.ndarray:
        return self.values[self.grid.m:]

    def csv_rows(self) -> List[Dict]:
        rows = []
        for col, t in enumerate(self.grid.node_times()):
            k = col - self.grid.m
            regime = int(self.regimes[max(k, 0)])
            rows.append({"k": k, "t": float(t), "regime": regime, "X": float(self.values[col])})
        return rows


@dataclass(frozen=True, eq=False)
class DelayedPathEnsemble:
    """N paths on a shared grid: values (N, K + m + 1) including history, regimes (N, K + 1)."""
    grid: TimeGrid
    values: np.ndarray
    regimes: np.ndarray
    path_indices: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    def path(self, n: int) -> DelayedPath:
        return DelayedPath(self.grid, self.values[n], self.regimes[n])

    def horizon_values(self) -> np.ndarray:
        """(N, K + 1) values at nodes k = 0..K."""
        return self.values[:, self.grid.m:]

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def with_values(self, values: np.ndarray) -> "DelayedPathEnsemble":
        return DelayedPathEnsemble(self.grid, values, self.regimes, self.path_indices)

    @classmethod
    def concat(cls, parts: Sequence["DelayedPathEnsemble"]) -> "DelayedPathEnsemble":
        if not parts:
            raise InvalidArgumentError("cannot concatenate an empty list of ensembles")
        return cls(
            parts[0].grid,
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.regimes for p in parts]),
            np.concatenate([p.path_indices for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class CellCoefficients:
    """Left-point coefficients of one cell for N paths.

    switching[n, i, j] is the j-th switching coefficient evaluated as if the chain sat in e_i;
    the realized regime picks row i = alpha(t_k-) when no switch happens inside the cell.
    """
    drift: np.ndarray
    diffusion: np.ndarray
    jump: np.ndarray
    switching: np.ndarray

    def switching_at(self, regime: np.ndarray) -> np.ndarray:
        """(N, D) switching coefficient at the given regimes."""
        return self.switching[np.arange(self.switching.shape[0]), np.asarray(regime, dtype=np.int64)]


@dataclass(frozen=True, eq=False)
class CoefficientStream:
    """Coefficients evaluated along an ensemble at every left point k = 0..K-1."""
    x: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray
    jump: np.ndarray
    switching: np.ndarray

    def cell(self, k: int) -> CellCoefficients:
        return CellCoefficients(self.drift[:, k], self.diffusion[:, k], self.jump[:, k], self.switching[:, k])


def as_noise_batch(noise: NoiseInput) -> NoiseBatch:
    if isinstance(noise, NoiseBatch):
        return noise
    if isinstance(noise, NoiseBundle):
        return NoiseBatch.from_bundles([noise], [0])
    raise InvalidArgumentError(f"expected a NoiseBatch or NoiseBundle, got {type(noise).__name__}")


def evaluate_cell(
    coeffs: SDDECoefficients,
    t: float,
    x: np.ndarray,
    lags: Sequence[np.ndarray],
    regime: np.ndarray,
    marks: Sequence[float],
) -> CellCoefficients:
    """b, sigma, eta, gamma at (t, x, lag_i, regime); lags are the four delayed values in order."""
    n = x.shape[0]
    y_b, y_sigma, y_eta, y_gamma = lags
    drift = as_batch(coeffs.drift(t, x, y_b, regime), n)
    diffusion = as_batch(coeffs.diffusion(t, x, y_sigma, regime), n)
    jump = np.column_stack([as_batch(coeffs.jump(t, x, y_eta, regime, z), n) for z in marks])
    switching = regime_resolved(coeffs.switching, t, x, y_gamma, coeffs.n_regimes)
    return CellCoefficients(drift, diffusion, jump, switching)


def switching_martingale(values: np.ndarray, switches: np.ndarray, occupation: np.ndarray, off_diagonal: np.ndarray) -> np.ndarray:
    """Integral of the switching coefficient against dPhi~ over one cell.

    Each realized i -> j switch contributes values[i, j]; the compensator integrates
    sum_j lambda_ij values[i, j] over the time spent in e_i.
    """
    realized = np.einsum("nij,nij->n", switches, values)
    compensator = np.einsum("ni,ij,nij->n", occupation, off_diagonal, values)
    return realized - compensator


def cell_increment(cell: CellCoefficients, noise: NoiseBatch, k: int) -> np.ndarray:
    dt = noise.grid.dt
    compensated_jumps = noise.jump_counts[:, k] - noise.jump_spec.levy_mass[None, :] * dt
    return (
        cell.drift * dt
        + cell.diffusion * noise.brownian[:, k]
        + np.sum(cell.jump * compensated_jumps, axis=1)
        + switching_martingale(cell.switching, noise.switches[:, k], noise.occupation[:, k], noise.chain_spec.off_diagonal)
    )


def _check_finite(values: np.ndarray, k: int, grid: TimeGrid, noise: NoiseBatch) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        path = int(noise.path_indices[bad[0]])
        raise NumericalBlowupError(f"non-finite value produced at step k={k} (t={grid.time(k + 1):.6g}) on path {path}")


def _check_noise(grid: TimeGrid, noise: NoiseBatch, n_regimes: int) -> None:
    if not grid.same_as(noise.grid):
        raise InvalidArgumentError(f"noise was generated on {noise.grid}, simulation grid is {grid}")
    if n_regimes != noise.chain_spec.D:
        raise InvalidArgumentError(f"coefficients know {n_regimes} regimes but the chain has {noise.chain_spec.D}")


def euler_recursion(
    grid: TimeGrid,
    history: np.ndarray,
    noise: NoiseBatch,
    cell_at: Callable[[int, np.ndarray], CellCoefficients],
) -> np.ndarray:
    """X_{k+1} = X_k + increment(cell_at(k, values)); history (m + 1,) or (N, m + 1) fills nodes -m..0."""
    values = np.empty((noise.n_paths, grid.n_nodes))
    values[:, : grid.m + 1] = history
    for k in range(grid.K):
        col = grid.offset(k)
        nxt = values[:, col] + cell_increment(cell_at(k, values), noise, k)
        _check_finite(nxt, k, grid, noise)
        values[:, col + 1] = nxt
    return values


def integrate_sdde(
    coeffs: SDDECoefficients,
    history: np.ndarray,
    lag_nodes: np.ndarray,
    grid: TimeGrid,
    noise: NoiseBatch,
    frozen: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Explicit Euler for the delayed equation.

    With frozen=None coefficients read the path being built; otherwise they read the given
    (N, n_nodes) array, which is one application of the Picard map.
    """
    marks = noise.jump_spec.marks

    def cell_at(k: int, values: np.ndarray) -> CellCoefficients:
        source = values if frozen is None else frozen
        x = source[:, grid.offset(k)]
        lags = [source[:, grid.offset(int(lag_nodes[i, k]))] for i in range(lag_nodes.shape[0])]
        return evaluate_cell(coeffs, grid.time(k), x, lags, noise.states[:, k], marks)

    return euler_recursion(grid, history, noise, cell_at)


def simulate_sdde(
    coeffs: SDDECoefficients,
    x0: InitialPath,
    delays: DelayFunctions,
    grid: TimeGrid,
    noise: NoiseInput,
) -> DelayedPathEnsemble:
    noise = as_noise_batch(noise)
    _check_noise(grid, noise, coeffs.n_regimes)
    noise.chain_spec.validate()
    values = integrate_sdde(coeffs, x0.values(grid), delays.lag_nodes(grid), grid, noise)
    return DelayedPathEnsemble(grid, values, noise.states, noise.path_indices)


def simulate_sde(coeffs: SDDECoefficients, x0: float, grid: TimeGrid, noise: NoiseInput) -> DelayedPathEnsemble:
    """Delay-free engine: the lagged argument of every coefficient is the current state."""
    noise = as_noise_batch(noise)
    _check_noise(grid, noise, coeffs.n_regimes)
    plain = TimeGrid(grid.t0, grid.T, grid.K)
    marks = noise.jump_spec.marks

    def cell_at(k: int, values: np.ndarray) -> CellCoefficients:
        x = values[:, k]
        return evaluate_cell(coeffs, plain.time(k), x, [x, x, x, x], noise.states[:, k], marks)

    values = euler_recursion(plain, np.array([float(x0)]), noise, cell_at)
    return DelayedPathEnsemble(plain, values, noise.states, noise.path_indices)


def simulate_sdde_batched(
    coeffs: SDDECoefficients,
    x0: InitialPath,
    delays: DelayFunctions,
    grid: TimeGrid,
    sampler: ExactNoiseSampler,
    n_paths: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> DelayedPathEnsemble:
    """simulate_sdde over n_paths sampled noise paths, batch by batch, reassembled in path order."""

    def run(indices: np.ndarray) -> DelayedPathEnsemble:
        return simulate_sdde(coeffs, x0, delays, grid, sampler.sample(indices))

    parts = map_path_batches(run, n_paths, batch_size, workers)
    logger.info(f"Simulated {n_paths} delayed paths on K={grid.K}, m={grid.m} in {len(parts)} batches.")
    return DelayedPathEnsemble.concat(parts)


def coefficient_stream(
    coeffs: SDDECoefficients,
    ensemble: DelayedPathEnsemble,
    noise: NoiseInput,
    delays: Optional[DelayFunctions] = None,
) -> CoefficientStream:
    """Coefficients along the ensemble at left points; delays=None reads the lag as the current state."""
    noise = as_noise_batch(noise)
    grid = ensemble.grid
    lag_nodes = delays.lag_nodes(grid) if delays is not None else None
    marks = noise.jump_spec.marks
    N, K, D = ensemble.n_paths, grid.K, coeffs.n_regimes

    x = np.empty((N, K))
    drift = np.empty((N, K))
    diffusion = np.empty((N, K))
    jump = np.empty((N, K, len(marks)))
    switching = np.empty((N, K, D, D))
    for k in range(K):
        xk = ensemble.values[:, grid.offset(k)]
        if lag_nodes is None:
            lags = [xk] * 4
        else:
            lags = [ensemble.values[:, grid.offset(int(lag_nodes[i, k]))] for i in range(4)]
        cell = evaluate_cell(coeffs, grid.time(k), xk, lags, noise.states[:, k], marks)
        x[:, k] = xk
        drift[:, k] = cell.drift
        diffusion[:, k] = cell.diffusion
        jump[:, k] = cell.jump
        switching[:, k] = cell.switching
    return CoefficientStream(x, drift, diffusion, jump, switching)


def linear_history(grid: TimeGrid) -> np.ndarray:
    """X = 0 on the history nodes before t and X(t) = 1."""
    history = np.zeros(grid.m + 1)
    history[-1] = 1.0
    return history


def simulate_linear_sdde(data: LinearABSDEData, grid: TimeGrid, noise: NoiseInput) -> DelayedPathEnsemble:
    """Auxiliary linear delayed equation on [t, T + delta] (grid spans it, m = delta / dt).

    Current-state terms carry (t_k, alpha(t_k-)); lagged terms carry (t_{k-m}, alpha(t_{k-m}-))
    and X_{k-m}, which is 0 while k < m.
    """
    noise = as_noise_batch(noise)
    _check_noise(grid, noise, data.n_regimes)
    noise.chain_spec.validate()
    m, D = grid.m, data.n_regimes
    marks = noise.jump_spec.marks
    all_regimes = np.arange(D, dtype=np.int64)

    def cell_at(k: int, values: np.ndarray) -> CellCoefficients:
        t = grid.time(k)
        t_lag = grid.time(k - m)
        x = values[:, grid.offset(k)]
        x_lag = values[:, grid.offset(k - m)]
        regime = noise.states[:, k]
        regime_lag = noise.states[:, max(k - m, 0)]

        drift = data.scalar("b", t, regime) * x + data.scalar("b_bar", t_lag, regime_lag) * x_lag
        diffusion = data.scalar("sigma", t, regime) * x + data.scalar("sigma_bar", t_lag, regime_lag) * x_lag
        jump = data.per_mark("eta", t, regime, marks) * x[:, None] + data.per_mark("eta_bar", t_lag, regime_lag, marks) * x_lag[:, None]
        # gamma is resolved per regime inside the cell; the lagged gamma_bar is fixed by alpha(t_{k-m}-).
        gamma_rows = data.vector("gamma", t, all_regimes)
        gamma_bar = data.vector("gamma_bar", t_lag, regime_lag)
        switching = x[:, None, None] * gamma_rows[None, :, :] + (x_lag[:, None] * gamma_bar)[:, None, :]
        return CellCoefficients(drift, diffusion, jump, switching)

    values = euler_recursion(grid, linear_history(grid), noise, cell_at)
    return DelayedPathEnsemble(grid, values, noise.states, noise.path_indices)
