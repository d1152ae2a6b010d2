from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from src.errors import InvalidArgumentError
from src.noise.time_grid import TimeGrid

# Coefficient callbacks are vectorized over paths: t is a scalar time, x/y/regime are (N,) arrays.
ScalarCoefficient = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
MarkCoefficient = Callable[[float, np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]
DelayFunction = Callable[[float], float]

N_DELAYS = 4


def as_batch(value, n: int) -> np.ndarray:
    """Broadcast a callback result (scalar or (N,)) to a float (N,) array."""
    return np.broadcast_to(np.asarray(value, dtype=float), (n,))


def as_batch_vector(value, n: int, D: int) -> np.ndarray:
    """Broadcast a D-vector callback result (scalar, (D,), (N, 1) or (N, D)) to a float (N, D) array."""
    return np.broadcast_to(np.asarray(value, dtype=float), (n, D))


def _zero(*args) -> float:
    return 0.0


@dataclass(frozen=True)
class SDDECoefficients:
    """b, sigma, eta, gamma of the delayed equation together with the declared Lipschitz constant C.

    drift/diffusion/switching take (t, x, y, regime); jump takes (t, x, y, regime, z).
    switching returns one component per regime (shape (N, D) or broadcastable).
    """
    drift: ScalarCoefficient
    diffusion: ScalarCoefficient
    jump: MarkCoefficient
    switching: ScalarCoefficient
    lipschitz_C: float
    n_regimes: int = 1

    def __post_init__(self) -> None:
        if not self.lipschitz_C > 0:
            raise InvalidArgumentError(f"Lipschitz constant C must be positive, got {self.lipschitz_C}")
        if self.n_regimes < 1:
            raise InvalidArgumentError(f"need at least one regime, got {self.n_regimes}")

    @classmethod
    def zero(cls, n_regimes: int = 1, lipschitz_C: float = 1.0) -> "SDDECoefficients":
        return cls(_zero, _zero, _zero, _zero, lipschitz_C, n_regimes)


@dataclass(frozen=True)
class DelayFunctions:
    """The four delays delta_1..delta_4 (for b, sigma, eta, gamma), declared bound delta and constant L."""
    delays: Tuple[DelayFunction, DelayFunction, DelayFunction, DelayFunction]
    bound: float
    L: float = 1.0

    def __post_init__(self) -> None:
        if len(self.delays) != N_DELAYS:
            raise InvalidArgumentError(f"expected {N_DELAYS} delay functions, got {len(self.delays)}")
        if not self.bound >= 0:
            raise InvalidArgumentError(f"delay bound must be nonnegative, got {self.bound}")
        if not self.L > 0:
            raise InvalidArgumentError(f"delay constant L must be positive, got {self.L}")

    @classmethod
    def uniform(cls, delay: DelayFunction, bound: float, L: float = 1.0) -> "DelayFunctions":
        return cls((delay,) * N_DELAYS, bound, L)

    @classmethod
    def constant(cls, delta: float, L: float = 1.0) -> "DelayFunctions":
        return cls.uniform(lambda t: delta, delta, L)

    @classmethod
    def sinusoidal(cls, delta: float, L: float = 2.0) -> "DelayFunctions":
        """delta(t) = delta * (1 + sin t) / 2."""
        return cls.uniform(lambda t: 0.5 * delta * (1.0 + np.sin(t)), delta, L)

    def values(self, grid: TimeGrid) -> np.ndarray:
        """(4, K + 1) delays evaluated at the horizon nodes."""
        times = grid.horizon_times()
        return np.array([[float(delay(t)) for t in times] for delay in self.delays])

    def lag_nodes(self, grid: TimeGrid) -> np.ndarray:
        """(4, K) node index of X(t_k - delta_i(t_k)) for k = 0..K-1.

        Left-point lookup; a delay shorter than dt reads node k itself.
        """
        if self.bound > grid.delta + 1e-9:
            raise InvalidArgumentError(
                f"declared delay bound {self.bound} exceeds the history segment delta = {grid.delta} of the grid"
            )
        delays = self.values(grid)[:, :-1]
        lags = np.empty((N_DELAYS, grid.K), dtype=np.int64)
        for i in range(N_DELAYS):
            for k in range(grid.K):
                lags[i, k] = min(grid.node_at_or_before(grid.time(k) - delays[i, k]), k)
        return lags


@dataclass(frozen=True)
class InitialPath:
    """Pre-history x0 on [t0 - delta, t0], read at the history nodes."""
    x0: Callable[[float], float]

    @classmethod
    def constant(cls, value: float) -> "InitialPath":
        return cls(lambda t: value)

    def values(self, grid: TimeGrid) -> np.ndarray:
        """x0 at nodes k = -m..0."""
        vals = np.array([float(self.x0(t)) for t in grid.node_times()[: grid.m + 1]])
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0]) - grid.m
            raise InvalidArgumentError(f"initial path is not finite at history node k={bad}")
        return vals

    def sup_norm(self, grid: TimeGrid) -> float:
        return float(np.max(np.abs(self.values(grid))))

    def at_start(self, grid: TimeGrid) -> float:
        return float(self.values(grid)[-1])


def regime_resolved(switching: ScalarCoefficient, t: float, x: np.ndarray, y: np.ndarray, D: int) -> np.ndarray:
    """(N, D, D) array whose [n, i, :] is gamma(t, x_n, y_n, e_i)."""
    n = x.shape[0]
    out = np.empty((n, D, D))
    for i in range(D):
        out[:, i, :] = as_batch_vector(switching(t, x, y, np.full(n, i, dtype=np.int64)), n, D)
    return out
