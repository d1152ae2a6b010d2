from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple
import logging

import numpy as np

from src.errors import InvalidArgumentError, InvalidSpecError
from .time_grid import TimeGrid

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RegimeChainSpec:
    """Generator of a continuous-time Markov chain on the canonical states e_0..e_{D-1}."""
    generator: np.ndarray

    def __post_init__(self) -> None:
        lam = np.array(self.generator, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1] or lam.shape[0] < 1:
            raise InvalidSpecError(f"generator must be a non-empty square matrix, got shape {lam.shape}")
        if not np.all(np.isfinite(lam)):
            raise InvalidSpecError("generator contains non-finite entries")

        D = lam.shape[0]
        for i in range(D):
            row_sum = float(lam[i].sum())
            if abs(row_sum) > ROW_SUM_TOL:
                raise InvalidSpecError(f"generator row {i} sums to {row_sum:.6g}, expected 0")
            for j in range(D):
                if i != j and not lam[i, j] > 0:
                    raise InvalidSpecError(
                        f"generator entry ({i},{j}) = {lam[i, j]:.6g}; off-diagonal intensities must be positive"
                    )

        # Diagonal is rebuilt from the off-diagonal entries so every row sums to 0 exactly.
        off = lam.copy()
        np.fill_diagonal(off, 0.0)
        np.fill_diagonal(lam, -off.sum(axis=1))
        lam.setflags(write=False)
        object.__setattr__(self, "generator", lam)

    @property
    def D(self) -> int:
        return self.generator.shape[0]

    @cached_property
    def off_diagonal(self) -> np.ndarray:
        """lambda_ij for i != j and 0 on the diagonal (intensity of switching i -> j)."""
        off = self.generator.copy()
        np.fill_diagonal(off, 0.0)
        off.setflags(write=False)
        return off

    @cached_property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.generator)

    @cached_property
    def _jump_chain_cdf(self) -> np.ndarray:
        rates = np.where(self.exit_rates > 0, self.exit_rates, 1.0)
        return np.cumsum(self.off_diagonal / rates[:, None], axis=1)

    def validate(self) -> None:
        """Re-assert the row-sum invariant before a simulation run."""
        sums = self.generator.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums) > 1e-12)
        if bad.size:
            raise InvalidSpecError(f"generator row {int(bad[0])} sums to {sums[bad[0]]:.6g}, expected 0")

    def intensity_into(self, states: np.ndarray) -> np.ndarray:
        """Instantaneous intensities lambda'_j = sum_{i != j} lambda_ij 1{alpha = e_i}, one row per state."""
        return self.off_diagonal[np.asarray(states, dtype=np.int64)]

    def stationary_distribution(self) -> np.ndarray:
        """pi with pi Lambda = 0 and sum(pi) = 1."""
        A = np.vstack([self.generator.T, np.ones(self.D)])
        b = np.zeros(self.D + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        return pi

    def next_state(self, state: int, u: float) -> int:
        cdf = self._jump_chain_cdf[state]
        return int(np.searchsorted(cdf, u * cdf[-1], side="right"))


@dataclass(frozen=True)
class ChainPath:
    """Cadlag chain trajectory on a grid: initial state plus exact (time, from, to) transitions."""
    grid: TimeGrid
    initial_state: int
    transitions: Tuple[Tuple[float, int, int], ...] = field(default_factory=tuple)
    D: int = 1

    @cached_property
    def transition_times(self) -> np.ndarray:
        return np.array([tr[0] for tr in self.transitions], dtype=float)

    @cached_property
    def from_states(self) -> np.ndarray:
        return np.array([tr[1] for tr in self.transitions], dtype=np.int64)

    @cached_property
    def to_states(self) -> np.ndarray:
        return np.array([tr[2] for tr in self.transitions], dtype=np.int64)

    @cached_property
    def _state_sequence(self) -> np.ndarray:
        return np.concatenate([[self.initial_state], self.to_states]).astype(np.int64)

    @cached_property
    def states(self) -> np.ndarray:
        """alpha(t_k-) at nodes k = 0..K."""
        return self.left_limits(self.grid.horizon_times())

    def left_limits(self, times: np.ndarray) -> np.ndarray:
        """alpha(t-) for each t; times before t0 return the initial state."""
        idx = np.searchsorted(self.transition_times, np.asarray(times, dtype=float), side="left")
        return self._state_sequence[idx]

    def _check_time(self, t: float) -> None:
        if t < self.grid.t0 - 1e-12 or t > self.grid.T + 1e-12:
            raise InvalidArgumentError(f"time {t} outside the grid span [{self.grid.t0}, {self.grid.T}]")

    def jump_counts(self, i: int, j: int, t: float) -> int:
        """J^ij(t): number of e_i -> e_j switches in (t0, t]."""
        if i == j:
            raise InvalidArgumentError(f"jump counts need distinct states, got i = j = {i}")
        self._check_time(t)
        mask = (self.transition_times <= t) & (self.from_states == i) & (self.to_states == j)
        return int(np.count_nonzero(mask))

    def counting_process(self, j: int, t: float) -> int:
        """Phi_j(t): number of switches into e_j in (t0, t]."""
        self._check_time(t)
        return int(np.count_nonzero((self.transition_times <= t) & (self.to_states == j)))

    @cached_property
    def _occupation_knots(self) -> Tuple[np.ndarray, np.ndarray]:
        knots = np.concatenate([[self.grid.t0], self.transition_times, [self.grid.T]])
        seg_len = np.diff(knots)
        in_state = self._state_sequence[:, None] == np.arange(self.D)[None, :]
        cumulative = np.zeros((knots.size, self.D))
        cumulative[1:] = np.cumsum(seg_len[:, None] * in_state, axis=0)
        return knots, cumulative

    def occupation_until(self, t: float) -> np.ndarray:
        """Time spent in each state during [t0, t]."""
        self._check_time(t)
        knots, cumulative = self._occupation_knots
        return np.array([np.interp(t, knots, cumulative[:, i]) for i in range(self.D)])

    def cumulative_intensity(self, spec: RegimeChainSpec, j: int, t: float) -> float:
        """lambda_j(t) = sum_{i != j} lambda_ij * int_{t0}^t 1{alpha(s-) = e_i} ds."""
        return float(self.occupation_until(t) @ spec.off_diagonal[:, j])

    def compensated(self, spec: RegimeChainSpec, j: int, t: float) -> float:
        """Phi~_j(t) = Phi_j(t) - lambda_j(t)."""
        return self.counting_process(j, t) - self.cumulative_intensity(spec, j, t)

    def basic_martingale(self, spec: RegimeChainSpec, i: int, j: int, t: float) -> float:
        """m_ij(t) = J^ij(t) - lambda_ij * int_{t0}^t 1{alpha(s-) = e_i} ds."""
        return self.jump_counts(i, j, t) - spec.off_diagonal[i, j] * float(self.occupation_until(t)[i])

    @cached_property
    def cell_occupation(self) -> np.ndarray:
        """(K, D) occupation time of each state inside each cell, from exact transition times."""
        knots, cumulative = self._occupation_knots
        nodes = self.grid.horizon_times()
        at_nodes = np.column_stack([np.interp(nodes, knots, cumulative[:, i]) for i in range(self.D)])
        return np.diff(at_nodes, axis=0)

    @cached_property
    def cell_switches(self) -> np.ndarray:
        """(K, D, D) number of i -> j switches inside each cell."""
        counts = np.zeros((self.grid.K, self.D, self.D), dtype=np.int64)
        if self.transitions:
            cells = self.grid.cells_of(self.transition_times)
            np.add.at(counts, (cells, self.from_states, self.to_states), 1)
        return counts


def sample_chain_path(spec: RegimeChainSpec, grid: TimeGrid, initial_state: int, rng: np.random.Generator) -> ChainPath:
    """Exact (Gillespie) sampling: exponential holding times, next state from the jump chain."""
    if not 0 <= initial_state < spec.D:
        raise InvalidArgumentError(f"initial state {initial_state} outside 0..{spec.D - 1}")
    spec.validate()

    transitions = []
    if spec.D > 1:
        t = grid.t0
        state = int(initial_state)
        while True:
            rate = spec.exit_rates[state]
            if rate <= 0:
                raise InvalidSpecError(f"generator row {state} has zero exit rate")
            t += rng.exponential(1.0 / rate)
            if t > grid.T:
                break
            nxt = spec.next_state(state, rng.random())
            transitions.append((t, state, nxt))
            state = nxt

    return ChainPath(grid=grid, initial_state=int(initial_state), transitions=tuple(transitions), D=spec.D)


def compensated_chain_increments(path: ChainPath, spec: RegimeChainSpec) -> np.ndarray:
    """(K, D) increments of Phi~_j over each cell: switches into e_j minus integrated intensity."""
    if path.D != spec.D:
        raise InvalidArgumentError(f"chain path has {path.D} states but the generator has {spec.D}")
    arrivals = path.cell_switches.sum(axis=1)
    return arrivals - path.cell_occupation @ spec.off_diagonal


def switching_norm(spec: RegimeChainSpec, regime: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """||phi||_S at the given regimes: (sum_j |phi_j|^2 lambda'_j)^(1/2), one value per row of phi."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[-1] != spec.D:
        raise InvalidArgumentError(f"switching integrand needs {spec.D} components, got {phi.shape[-1]}")
    weights = spec.intensity_into(np.atleast_1d(regime))
    return np.sqrt(np.sum(phi ** 2 * weights, axis=-1))
