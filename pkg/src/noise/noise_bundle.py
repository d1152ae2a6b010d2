from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Generator, List, Sequence, TypeVar
import logging

import numpy as np

from src.errors import InvalidArgumentError
from .jump_measure import JumpPath, JumpSpec, sample_jump_path
from .regime_chain import ChainPath, RegimeChainSpec, sample_chain_path
from .time_grid import TimeGrid

logger = logging.getLogger(__name__)

R = TypeVar("R")

DEFAULT_BATCH_SIZE = 4096


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, path_index); independent of scheduling."""
    if seed < 0 or path_index < 0:
        raise InvalidArgumentError(f"seed and path index must be nonnegative, got ({seed}, {path_index})")
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Chain path, jump path and Brownian increments of one sample path on a shared grid."""
    grid: TimeGrid
    chain_spec: RegimeChainSpec
    jump_spec: JumpSpec
    chain: ChainPath
    jumps: JumpPath
    brownian_increments: np.ndarray


def generate_noise_bundle(
    chain_spec: RegimeChainSpec,
    jump_spec: JumpSpec,
    grid: TimeGrid,
    initial_state: int,
    seed: int,
    path_index: int,
) -> NoiseBundle:
    rng = path_rng(seed, path_index)
    # Draw order is fixed: chain, jumps, Brownian.
    chain = sample_chain_path(chain_spec, grid, initial_state, rng)
    jumps = sample_jump_path(jump_spec, grid, rng)
    dW = rng.standard_normal(grid.K) * np.sqrt(grid.dt)
    return NoiseBundle(grid, chain_spec, jump_spec, chain, jumps, dW)


@dataclass(frozen=True, eq=False)
class NoiseBatch:
    """Cell-level noise of N paths, stacked for vectorized stepping.

    brownian (N, K); occupation (N, K, D) time in each state per cell; switches (N, K, D, D)
    i -> j counts per cell; jump_counts (N, K, n_marks); states (N, K + 1) regime at nodes
    (left limits).
    """
    grid: TimeGrid
    chain_spec: RegimeChainSpec
    jump_spec: JumpSpec
    brownian: np.ndarray
    occupation: np.ndarray
    switches: np.ndarray
    jump_counts: np.ndarray
    states: np.ndarray
    path_indices: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.brownian.shape[0])

    @classmethod
    def from_bundles(cls, bundles: Sequence[NoiseBundle], path_indices: Sequence[int]) -> "NoiseBatch":
        if not bundles:
            raise InvalidArgumentError("cannot stack an empty list of noise bundles")
        first = bundles[0]
        return cls(
            grid=first.grid,
            chain_spec=first.chain_spec,
            jump_spec=first.jump_spec,
            brownian=np.stack([b.brownian_increments for b in bundles]),
            occupation=np.stack([b.chain.cell_occupation for b in bundles]),
            switches=np.stack([b.chain.cell_switches for b in bundles]),
            jump_counts=np.stack([b.jumps.cell_counts for b in bundles]),
            states=np.stack([b.chain.states for b in bundles]),
            path_indices=np.asarray(path_indices, dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts: Sequence["NoiseBatch"]) -> "NoiseBatch":
        if not parts:
            raise InvalidArgumentError("cannot concatenate an empty list of noise batches")
        first = parts[0]
        return cls(
            grid=first.grid,
            chain_spec=first.chain_spec,
            jump_spec=first.jump_spec,
            brownian=np.concatenate([p.brownian for p in parts]),
            occupation=np.concatenate([p.occupation for p in parts]),
            switches=np.concatenate([p.switches for p in parts]),
            jump_counts=np.concatenate([p.jump_counts for p in parts]),
            states=np.concatenate([p.states for p in parts]),
            path_indices=np.concatenate([p.path_indices for p in parts]),
        )

    def compensated_chain_increments(self) -> np.ndarray:
        """(N, K, D) increments of Phi~."""
        return self.switches.sum(axis=2) - self.occupation @ self.chain_spec.off_diagonal

    def compensated_jump_increments(self) -> np.ndarray:
        """(N, K, n_marks) counts minus nu({z}) dt."""
        return self.jump_counts - self.jump_spec.levy_mass[None, None, :] * self.grid.dt

    def mean_intensity(self) -> np.ndarray:
        """(N, K, D) cell average of lambda'_j, i.e. (sum_i lambda_ij occ_i) / dt."""
        return (self.occupation @ self.chain_spec.off_diagonal) / self.grid.dt


class ExactNoiseSampler:
    """Samples NoiseBatches with exact continuous-time chain and jump times."""

    def __init__(self, chain_spec: RegimeChainSpec, jump_spec: JumpSpec, grid: TimeGrid, initial_state: int, seed: int) -> None:
        if not 0 <= initial_state < chain_spec.D:
            raise InvalidArgumentError(f"initial state {initial_state} outside 0..{chain_spec.D - 1}")
        self.chain_spec = chain_spec
        self.jump_spec = jump_spec
        self.grid = grid
        self.initial_state = int(initial_state)
        self.seed = int(seed)

    def bundle(self, path_index: int) -> NoiseBundle:
        return generate_noise_bundle(self.chain_spec, self.jump_spec, self.grid, self.initial_state, self.seed, path_index)

    def sample(self, path_indices: Sequence[int]) -> NoiseBatch:
        self.chain_spec.validate()
        bundles = [self.bundle(int(i)) for i in path_indices]
        return NoiseBatch.from_bundles(bundles, path_indices)


def batch_path_indices(n_paths: int, batch_size: int = DEFAULT_BATCH_SIZE) -> Generator[np.ndarray, None, None]:
    if n_paths < 1:
        raise InvalidArgumentError(f"need at least one path, got {n_paths}")
    if batch_size < 1:
        raise InvalidArgumentError(f"batch size must be positive, got {batch_size}")
    for start in range(0, n_paths, batch_size):
        yield np.arange(start, min(start + batch_size, n_paths), dtype=np.int64)


def map_path_batches(
    work: Callable[[np.ndarray], R],
    n_paths: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int = 1,
) -> List[R]:
    """Run work(batch_indices) over fixed index batches; results come back in path-index order."""
    batches = list(batch_path_indices(n_paths, batch_size))
    if workers <= 1 or len(batches) == 1:
        results = []
        for done, indices in enumerate(batches, start=1):
            results.append(work(indices))
            logger.debug(f"Finished batch {done}/{len(batches)} ({indices[-1] + 1} of {n_paths} paths).")
        return results

    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(work, batches))
    logger.debug(f"Finished {len(batches)} batches of {n_paths} paths on {workers} workers.")
    return results


def sample_noise(sampler, n_paths: int, batch_size: int = DEFAULT_BATCH_SIZE, workers: int = 1) -> NoiseBatch:
    """Sample paths 0..n_paths-1 in batches and stack them in path-index order."""
    batch = NoiseBatch.concat(map_path_batches(sampler.sample, n_paths, batch_size, workers))
    logger.info(f"Sampled noise for {n_paths} paths on K={batch.grid.K} (dt={batch.grid.dt:.6g}).")
    return batch
