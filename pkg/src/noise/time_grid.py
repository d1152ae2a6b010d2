from dataclasses import dataclass
import math

import numpy as np

from src.errors import InvalidArgumentError


# Tolerance used when snapping times onto grid nodes.
NODE_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, T] with K cells and m history cells (delta = m * dt) before t0.

    Node k sits at t0 + k*dt for k = -m..K. Cell k is the interval (t_k, t_{k+1}].
    """
    t0: float
    T: float
    K: int
    m: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t0) and math.isfinite(self.T)) or self.t0 >= self.T:
            raise InvalidArgumentError(f"time grid needs t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidArgumentError(f"time grid needs a positive integer step count, got K={self.K}")
        if int(self.m) != self.m or self.m < 0:
            raise InvalidArgumentError(f"time grid needs a nonnegative integer delay step count, got m={self.m}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.K

    @property
    def delta(self) -> float:
        return self.m * self.dt

    @property
    def n_nodes(self) -> int:
        return self.K + self.m + 1

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    def node_times(self) -> np.ndarray:
        """Times of nodes k = -m..K (history included)."""
        return self.t0 + np.arange(-self.m, self.K + 1) * self.dt

    def horizon_times(self) -> np.ndarray:
        """Times of nodes k = 0..K."""
        return self.t0 + np.arange(self.K + 1) * self.dt

    def offset(self, k: int) -> int:
        """Column of node k in arrays that store the history segment first."""
        return k + self.m

    def node_at_or_before(self, t: float) -> int:
        """Greatest node index k with t_k <= t (cadlag left-point lookup)."""
        if t < self.t0 - self.delta - NODE_TOL:
            raise InvalidArgumentError(f"time {t} lies before the history segment starting at {self.t0 - self.delta}")
        k = math.floor((t - self.t0) / self.dt + NODE_TOL)
        return int(min(max(k, -self.m), self.K))

    def cells_of(self, times: np.ndarray) -> np.ndarray:
        """Cell index of each event time in (t0, T]; cell k covers (t_k, t_{k+1}]."""
        cells = np.ceil((np.asarray(times, dtype=float) - self.t0) / self.dt - NODE_TOL).astype(np.int64) - 1
        return np.clip(cells, 0, self.K - 1)

    def extend_horizon(self) -> "TimeGrid":
        """Same step and delay, horizon pushed from T to T + delta."""
        return TimeGrid(self.t0, self.T + self.m * self.dt, self.K + self.m, self.m)

    def with_steps(self, K: int) -> "TimeGrid":
        """Refined (or coarsened) grid keeping delta fixed; m is rescaled with K."""
        scaled = self.m * K / self.K
        if abs(scaled - round(scaled)) > NODE_TOL:
            raise InvalidArgumentError(
                f"cannot rescale the grid to K={K}: delay steps m={self.m} would become {scaled:g}"
            )
        return TimeGrid(self.t0, self.T, int(K), int(round(scaled)))

    def same_as(self, other: "TimeGrid") -> bool:
        return (
            self.K == other.K
            and self.m == other.m
            and abs(self.t0 - other.t0) <= NODE_TOL
            and abs(self.T - other.T) <= NODE_TOL
        )
