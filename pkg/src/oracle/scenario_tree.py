from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence
import logging

import numpy as np

from src.errors import DtTooLargeError, InvalidArgumentError, ResourceLimitError
from src.noise.jump_measure import JumpSpec
from src.noise.noise_bundle import NoiseBatch, path_rng
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid

logger = logging.getLogger(__name__)

MAX_DEPTH = 8
MAX_PATHS = 30_000_000
NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Exhaustive discrete carrier of (W, N, alpha) on a grid.

    Each step branches on the Brownian sign (prob 1/2 each), on a jump of the single mark
    (prob lambda_N dt, only when lambda_N > 0) and on the next chain state (prob lambda_ic dt,
    staying with the rest). Branch b of a node encodes (w, n, c) as b = (w * n_jump + n) * D + c.
    Node p of level k has children p * B + b on level k + 1. Levels 0..K-1 are stored.
    """
    grid: TimeGrid
    chain_spec: RegimeChainSpec
    jump_spec: JumpSpec
    initial_state: int
    level_states: List[np.ndarray]
    level_probs: List[np.ndarray]

    @property
    def D(self) -> int:
        return self.chain_spec.D

    @property
    def n_jump(self) -> int:
        return 2 if self.jump_spec.rate > 0 else 1

    @property
    def branch_factor(self) -> int:
        return 2 * self.n_jump * self.D

    @property
    def depth(self) -> int:
        return self.grid.K

    @property
    def n_paths(self) -> int:
        return self.branch_factor ** self.depth

    @property
    def jump_probability(self) -> float:
        return self.jump_spec.rate * self.grid.dt

    @cached_property
    def chain_step(self) -> np.ndarray:
        """One-step transition matrix I + Lambda dt of the tree chain."""
        return np.eye(self.D) + self.chain_spec.generator * self.grid.dt

    @cached_property
    def branch_codes(self) -> np.ndarray:
        """(B, 3) rows (w, n, c) for every branch."""
        B, D = self.branch_factor, self.D
        b = np.arange(B)
        return np.column_stack([b // (self.n_jump * D), (b // D) % self.n_jump, b % D])

    @cached_property
    def dW(self) -> np.ndarray:
        """(B,) Brownian increment of each branch: +sqrt(dt) for w = 0, -sqrt(dt) for w = 1."""
        return np.where(self.branch_codes[:, 0] == 0, 1.0, -1.0) * np.sqrt(self.grid.dt)

    @cached_property
    def jump_counts(self) -> np.ndarray:
        """(B,) number of jumps in the step."""
        return self.branch_codes[:, 1].astype(float)

    @cached_property
    def dN_tilde(self) -> np.ndarray:
        return self.jump_counts - self.jump_probability

    @cached_property
    def next_state(self) -> np.ndarray:
        return self.branch_codes[:, 2]

    @cached_property
    def branch_probs(self) -> np.ndarray:
        """(D, B): probability of each branch from a node in state i."""
        p = self.jump_probability
        jump_factor = np.where(self.branch_codes[:, 1] == 1, p, 1.0 - p) if self.n_jump == 2 else np.ones(self.branch_factor)
        chain_factor = self.chain_step[:, self.next_state]
        return 0.5 * jump_factor[None, :] * chain_factor

    @cached_property
    def dPhi_tilde(self) -> np.ndarray:
        """(D, B, D): increment of Phi~_j on branch b from state i, 1{c = j != i} - lambda_ij dt."""
        D = self.D
        into = (self.next_state[None, :, None] == np.arange(D)[None, None, :]) & (self.next_state[None, :, None] != np.arange(D)[:, None, None])
        return into.astype(float) - self.chain_spec.off_diagonal[:, None, :] * self.grid.dt

    def children_probs(self, k: int) -> np.ndarray:
        """(n_k, B) conditional branch probabilities of the nodes of level k."""
        return self.branch_probs[self.level_states[k]]

    def expand(self, values: np.ndarray, levels: int = 1) -> np.ndarray:
        """Repeat node values onto their descendants `levels` levels below."""
        return np.repeat(values, self.branch_factor ** levels, axis=0)

    def conditional_mean(self, values: np.ndarray, level: int, up: int = 1) -> np.ndarray:
        """E[values at level `level` | node at level `level - up`] by iterated child sums.

        Level K (below the stored levels) is accepted as the children of level K - 1.
        """
        out = values
        for lvl in range(level - 1, level - up - 1, -1):
            probs = self.children_probs(lvl)
            out = np.einsum("nb,nb...->n...", probs, out.reshape((probs.shape[0], self.branch_factor) + out.shape[1:]))
        return out

    def path_probabilities(self) -> np.ndarray:
        """Probabilities of all B^K complete paths."""
        return (self.level_probs[-1][:, None] * self.children_probs(self.depth - 1)).ravel()


def build_tree(spec: RegimeChainSpec, jump: JumpSpec, grid: TimeGrid, initial_state: int = 0) -> ScenarioTree:
    spec.validate()
    if not 0 <= initial_state < spec.D:
        raise InvalidArgumentError(f"initial state {initial_state} outside 0..{spec.D - 1}")
    if jump.rate > 0 and jump.n_marks != 1:
        raise InvalidArgumentError(f"tree mode supports a single jump mark, got {jump.n_marks}")
    if grid.K > MAX_DEPTH:
        raise ResourceLimitError(f"tree depth K={grid.K} exceeds the maximum of {MAX_DEPTH}")

    branch_factor = 2 * (2 if jump.rate > 0 else 1) * spec.D
    n_paths = branch_factor ** grid.K
    if n_paths > MAX_PATHS:
        raise ResourceLimitError(f"tree would enumerate {n_paths} paths (branching {branch_factor}, depth {grid.K}); limit is {MAX_PATHS}")

    dt = grid.dt
    if jump.rate > 0 and not 0 < jump.rate * dt < 1:
        raise DtTooLargeError(f"jump branch probability lambda_N*dt = {jump.rate * dt:.6g} is not in (0, 1)")
    if spec.D > 1:
        stay = 1.0 - spec.exit_rates * dt
        bad = np.flatnonzero(~(stay > 0))
        if bad.size:
            i = int(bad[0])
            raise DtTooLargeError(f"chain in state {i} leaves with probability {spec.exit_rates[i] * dt:.6g} >= 1 per step")

    tree = ScenarioTree(grid, spec, jump, int(initial_state), [np.array([initial_state], dtype=np.int64)], [np.ones(1)])
    sums = tree.branch_probs.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > NORMALIZATION_TOL:
        raise DtTooLargeError(f"branch probabilities sum to {sums.tolist()}, expected 1")

    for k in range(grid.K - 1):
        probs = tree.children_probs(k)
        tree.level_probs.append((tree.level_probs[k][:, None] * probs).ravel())
        tree.level_states.append(np.tile(tree.next_state, tree.level_states[k].size))

    total = float(tree.level_probs[-1].sum())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise DtTooLargeError(f"tree probabilities sum to {total!r}, expected 1")
    logger.info(f"Built scenario tree: depth {grid.K}, branching {branch_factor}, {n_paths} paths (dt={dt:.6g}).")
    return tree


class TreeNoiseSampler:
    """Monte Carlo sampling of the tree's one-step dynamics, in the NoiseBatch layout."""

    def __init__(self, tree: ScenarioTree, seed: int) -> None:
        self.tree = tree
        self.grid = tree.grid
        self.seed = int(seed)

    def sample(self, path_indices: Sequence[int]) -> NoiseBatch:
        tree = self.tree
        K, D, dt = self.grid.K, tree.D, self.grid.dt
        indices = np.asarray(path_indices, dtype=np.int64)
        N = indices.size
        u = np.stack([path_rng(self.seed, int(i)).random((K, 3)) for i in indices]) if N else np.empty((0, K, 3))

        brownian = np.where(u[:, :, 0] < 0.5, 1.0, -1.0) * np.sqrt(dt)
        jump_counts = np.zeros((N, K, tree.jump_spec.n_marks), dtype=np.int64)
        jump_counts[:, :, 0] = u[:, :, 1] < tree.jump_probability
        chain_cdf = np.cumsum(tree.chain_step, axis=1)

        states = np.empty((N, K + 1), dtype=np.int64)
        states[:, 0] = tree.initial_state
        occupation = np.zeros((N, K, D))
        switches = np.zeros((N, K, D, D), dtype=np.int64)
        rows = np.arange(N)
        for k in range(K):
            current = states[:, k]
            nxt = np.minimum(np.sum(u[:, k, 2][:, None] >= chain_cdf[current], axis=1), D - 1)
            occupation[rows, k, current] = dt
            moved = nxt != current
            switches[rows[moved], k, current[moved], nxt[moved]] = 1
            states[:, k + 1] = nxt

        return NoiseBatch(
            grid=self.grid,
            chain_spec=tree.chain_spec,
            jump_spec=tree.jump_spec,
            brownian=brownian,
            occupation=occupation,
            switches=switches,
            jump_counts=jump_counts,
            states=states,
            path_indices=indices,
        )
