from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Tuple, Union

import numpy as np

from src.errors import InvalidSpecError
from .time_grid import TimeGrid

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class JumpSpec:
    """Finite-activity Levy measure nu = rate * (mark law on finitely many nonzero marks)."""
    rate: float
    marks: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self) -> None:
        marks = tuple(float(z) for z in self.marks)
        weights = tuple(float(w) for w in self.weights)
        if not np.isfinite(self.rate) or self.rate < 0:
            raise InvalidSpecError(f"jump rate must be finite and nonnegative, got {self.rate}")
        if not marks:
            raise InvalidSpecError("jump spec needs at least one mark")
        if len(marks) != len(weights):
            raise InvalidSpecError(f"{len(marks)} marks but {len(weights)} weights")
        if any(z == 0.0 or not np.isfinite(z) for z in marks):
            raise InvalidSpecError(f"marks must be finite and nonzero (nu({{0}}) = 0), got {marks}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidSpecError(f"mark weights must be nonnegative and sum to 1, got {weights}")
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def none(cls) -> "JumpSpec":
        return cls(rate=0.0, marks=(1.0,), weights=(1.0,))

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @cached_property
    def levy_mass(self) -> np.ndarray:
        """nu({z}) for each mark."""
        mass = self.rate * np.array(self.weights)
        mass.setflags(write=False)
        return mass

    @cached_property
    def _mark_cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)


def jump_compensator_integral(spec: JumpSpec, f: Callable[[float], float]) -> float:
    """int f(z) nu(dz) as the exact finite sum rate * sum_z weight(z) f(z)."""
    return float(sum(mass * f(z) for z, mass in zip(spec.marks, spec.levy_mass)))


def jump_norm(spec: JumpSpec, phi: Callable[[float], Union[float, np.ndarray]]) -> Union[float, np.ndarray]:
    """||phi||_J = (int |phi(z)|^2 nu(dz))^(1/2); phi may return one value per path."""
    total = sum(mass * np.square(phi(z)) for z, mass in zip(spec.marks, spec.levy_mass))
    return np.sqrt(total) if np.ndim(total) else float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Realized events of the Poisson random measure: times in (t0, T] and mark indices."""
    grid: TimeGrid
    times: np.ndarray
    mark_indices: np.ndarray
    marks: Tuple[float, ...]

    @property
    def events(self) -> Tuple[Tuple[float, float], ...]:
        return tuple((float(t), self.marks[int(i)]) for t, i in zip(self.times, self.mark_indices))

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def compensated_integral(self, spec: JumpSpec, f: Callable[[float], float]) -> float:
        """sum_events f(z) - (T - t0) * int f(z) nu(dz)."""
        realized = sum(f(self.marks[int(i)]) for i in self.mark_indices)
        return float(realized - (self.grid.T - self.grid.t0) * jump_compensator_integral(spec, f))

    @cached_property
    def cell_counts(self) -> np.ndarray:
        """(K, n_marks) number of events of each mark inside each cell."""
        counts = np.zeros((self.grid.K, len(self.marks)), dtype=np.int64)
        if self.times.size:
            np.add.at(counts, (self.grid.cells_of(self.times), self.mark_indices), 1)
        return counts


def sample_jump_path(spec: JumpSpec, grid: TimeGrid, rng: np.random.Generator) -> JumpPath:
    """Poisson(rate * (T - t0)) events, uniform times on (t0, T], i.i.d. marks."""
    horizon = grid.T - grid.t0
    n = int(rng.poisson(spec.rate * horizon)) if spec.rate > 0 else 0
    times = np.sort(grid.t0 + horizon * (1.0 - rng.random(n)))
    u = rng.random(n)
    mark_indices = np.searchsorted(spec._mark_cdf, u * spec._mark_cdf[-1], side="right").astype(np.int64)
    return JumpPath(grid=grid, times=times, mark_indices=mark_indices, marks=spec.marks)
