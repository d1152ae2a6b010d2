from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from src.errors import InvalidArgumentError
from src.noise.time_grid import TimeGrid
from src.sdde.coefficients import DelayFunctions, InitialPath, SDDECoefficients
from src.sdde.path_engine import (
    DelayedPath,
    DelayedPathEnsemble,
    NoiseInput,
    as_noise_batch,
    integrate_sdde,
)

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class BetaConfig:
    """Weight beta = 16 C^2 (1 + L) + 1 of the exponentially weighted norm."""
    C: float
    L: float

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise InvalidArgumentError(f"C must be positive, got {self.C}")
        if not self.L >= 0:
            raise InvalidArgumentError(f"L must be nonnegative, got {self.L}")

    @property
    def beta(self) -> float:
        return 16.0 * self.C ** 2 * (1.0 + self.L) + 1.0

    @classmethod
    def for_model(cls, coeffs: SDDECoefficients, delays: DelayFunctions) -> "BetaConfig":
        return cls(coeffs.lipschitz_C, delays.L)


@dataclass
class PicardDiagnostics:
    beta: float
    norms: List[float] = field(default_factory=list)
    ratios: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def to_dict(self) -> Dict:
        return {
            "beta": self.beta,
            "iterations": self.iterations,
            "norms": list(self.norms),
            "ratios": list(self.ratios),
            "converged": self.converged,
        }


def _horizon_matrix(paths: Union[DelayedPathEnsemble, Sequence[DelayedPath]]) -> Tuple[TimeGrid, np.ndarray]:
    if isinstance(paths, DelayedPathEnsemble):
        return paths.grid, paths.horizon_values()
    paths = list(paths)
    if not paths:
        raise InvalidArgumentError("beta norm needs a nonempty ensemble")
    grid = paths[0].grid
    for p in paths[1:]:
        if not p.grid.same_as(grid):
            raise InvalidArgumentError(f"ensemble mixes grids {grid} and {p.grid}")
    return grid, np.stack([p.horizon() for p in paths])


def beta_norm(paths: Union[DelayedPathEnsemble, Sequence[DelayedPath]], beta: float) -> float:
    """Monte Carlo E[int_{t0}^T e^{-beta (s - t0)} |h(s)|^2 ds] by left rectangles."""
    grid, h = _horizon_matrix(paths)
    if h.shape[0] == 0:
        raise InvalidArgumentError("beta norm needs a nonempty ensemble")
    weights = np.exp(-beta * (grid.horizon_times()[:-1] - grid.t0)) * grid.dt
    per_path = (h[:, :-1] ** 2) @ weights
    return float(per_path.mean())


def ensemble_difference(a: DelayedPathEnsemble, b: DelayedPathEnsemble) -> DelayedPathEnsemble:
    if not a.grid.same_as(b.grid) or a.values.shape != b.values.shape:
        raise InvalidArgumentError("cannot subtract ensembles on different grids or of different sizes")
    return a.with_values(a.values - b.values)


def constant_extension(x0: InitialPath, grid: TimeGrid, regimes: np.ndarray, path_indices: np.ndarray) -> DelayedPathEnsemble:
    """Initial iterate: x0 on the history, x0(t0) on the horizon."""
    history = x0.values(grid)
    row = np.concatenate([history, np.full(grid.K, history[-1])])
    values = np.tile(row, (len(path_indices), 1))
    return DelayedPathEnsemble(grid, values, regimes, path_indices)


def picard_step(
    x: DelayedPathEnsemble,
    coeffs: SDDECoefficients,
    x0: InitialPath,
    delays: DelayFunctions,
    grid: TimeGrid,
    noise: NoiseInput,
) -> DelayedPathEnsemble:
    """h(x): Euler solution whose coefficient arguments are frozen from x; history forced to x0."""
    noise = as_noise_batch(noise)
    if not x.grid.same_as(grid) or x.n_paths != noise.n_paths:
        raise InvalidArgumentError("input paths must share the grid and path count of the noise")
    history = x0.values(grid)
    frozen = x.values.copy()
    frozen[:, : grid.m + 1] = history
    values = integrate_sdde(coeffs, history, delays.lag_nodes(grid), grid, noise, frozen=frozen)
    return DelayedPathEnsemble(grid, values, noise.states, noise.path_indices)


def picard_solve(
    coeffs: SDDECoefficients,
    x0: InitialPath,
    delays: DelayFunctions,
    grid: TimeGrid,
    noise: NoiseInput,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
    initial: Optional[DelayedPathEnsemble] = None,
) -> Tuple[DelayedPathEnsemble, PicardDiagnostics]:
    """Iterate x^{n+1} = h(x^n) until the beta norm of successive differences drops below tol."""
    if not tol > 0:
        raise InvalidArgumentError(f"tolerance must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidArgumentError(f"max_iter must be at least 1, got {max_iter}")

    noise = as_noise_batch(noise)
    noise.chain_spec.validate()
    beta = BetaConfig.for_model(coeffs, delays).beta
    diagnostics = PicardDiagnostics(beta=beta)
    x = initial if initial is not None else constant_extension(x0, grid, noise.states, noise.path_indices)

    for n in range(1, max_iter + 1):
        x_next = picard_step(x, coeffs, x0, delays, grid, noise)
        norm = beta_norm(ensemble_difference(x_next, x), beta)
        diagnostics.norms.append(norm)
        x = x_next
        logger.debug(f"Picard iteration {n}: beta-norm of the update {norm:.3e}")
        if norm < tol:
            diagnostics.converged = True
            break

    norms = diagnostics.norms
    diagnostics.iterations = len(norms)
    diagnostics.ratios = [norms[i + 1] / norms[i] if norms[i] > 0 else 0.0 for i in range(len(norms) - 1)]
    if diagnostics.converged:
        logger.info(f"Picard iteration converged after {diagnostics.iterations} iterations (beta={beta:g}).")
    else:
        logger.warning(f"Picard iteration stopped at max_iter={max_iter} with update norm {norms[-1]:.3e} >= {tol:g}")
    return x, diagnostics
