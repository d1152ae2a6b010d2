from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence
import logging

import numpy as np

from src.errors import AssumptionViolation, InvalidArgumentError
from src.noise.time_grid import TimeGrid
from src.sdde.coefficients import as_batch, as_batch_vector

logger = logging.getLogger(__name__)

# Linear driver callbacks take a scalar time and an (N,) array of regimes.
RegimeCoefficient = Callable[[float, np.ndarray], np.ndarray]
RegimeMarkCoefficient = Callable[[float, np.ndarray, float], np.ndarray]


def _zero(*args) -> float:
    return 0.0


@dataclass(frozen=True)
class LinearABSDEData:
    """Coefficients of the linear anticipated driver and of the auxiliary delayed equation.

    b, b_bar, sigma, sigma_bar and l map (t, regime) to (N,); eta and eta_bar map (t, regime, z)
    to (N,); gamma and gamma_bar map (t, regime) to (N, D) or anything broadcastable to it.
    bound is the declared uniform bound B.
    """
    b: RegimeCoefficient = _zero
    b_bar: RegimeCoefficient = _zero
    sigma: RegimeCoefficient = _zero
    sigma_bar: RegimeCoefficient = _zero
    eta: RegimeMarkCoefficient = _zero
    eta_bar: RegimeMarkCoefficient = _zero
    gamma: RegimeCoefficient = _zero
    gamma_bar: RegimeCoefficient = _zero
    l: RegimeCoefficient = _zero
    bound: float = 1.0
    n_regimes: int = 1

    def __post_init__(self) -> None:
        if not self.bound > 0:
            raise InvalidArgumentError(f"uniform bound B must be positive, got {self.bound}")
        if self.n_regimes < 1:
            raise InvalidArgumentError(f"need at least one regime, got {self.n_regimes}")

    def scalar(self, name: str, t: float, regime: np.ndarray) -> np.ndarray:
        regime = np.asarray(regime, dtype=np.int64)
        return as_batch(getattr(self, name)(t, regime), regime.shape[0])

    def per_mark(self, name: str, t: float, regime: np.ndarray, marks: Sequence[float]) -> np.ndarray:
        """(N, n_marks) values of eta or eta_bar."""
        regime = np.asarray(regime, dtype=np.int64)
        fn = getattr(self, name)
        return np.column_stack([as_batch(fn(t, regime, z), regime.shape[0]) for z in marks])

    def vector(self, name: str, t: float, regime: np.ndarray) -> np.ndarray:
        """(N, D) values of gamma or gamma_bar."""
        regime = np.asarray(regime, dtype=np.int64)
        return as_batch_vector(getattr(self, name)(t, regime), regime.shape[0], self.n_regimes)

    def check_bounds(self, grid: TimeGrid, marks: Sequence[float]) -> Dict[str, float]:
        """Largest |value| of every callback over all grid nodes and regimes; raises when B is exceeded."""
        regimes = np.arange(self.n_regimes, dtype=np.int64)
        largest: Dict[str, float] = {}
        for t in grid.node_times():
            for name in ("b", "b_bar", "sigma", "sigma_bar", "l"):
                largest[name] = max(largest.get(name, 0.0), _sup(self.scalar(name, t, regimes), name, t))
            for name in ("eta", "eta_bar"):
                largest[name] = max(largest.get(name, 0.0), _sup(self.per_mark(name, t, regimes, marks), name, t))
            for name in ("gamma", "gamma_bar"):
                largest[name] = max(largest.get(name, 0.0), _sup(self.vector(name, t, regimes), name, t))

        over = {name: value for name, value in largest.items() if value > self.bound}
        if over:
            name, value = next(iter(over.items()))
            raise AssumptionViolation(f"linear coefficient '{name}' reaches {value:.6g}, above the declared bound B={self.bound}")
        return largest


def _sup(values: np.ndarray, name: str, t: float) -> float:
    if not np.all(np.isfinite(values)):
        raise AssumptionViolation(f"linear coefficient '{name}' is not finite at t={t:.6g}")
    return float(np.max(np.abs(values))) if values.size else 0.0


@dataclass(frozen=True)
class TerminalData:
    """Deterministic terminal processes xi, psi, zeta, vartheta on [T, T + delta]."""
    xi: Callable[[float], float]
    psi: Callable[[float], float] = _zero
    zeta: Callable[[float, float], float] = _zero
    vartheta: Callable[[float], np.ndarray] = _zero

    @classmethod
    def constant(cls, xi: float, psi: float = 0.0, zeta: float = 0.0, vartheta=0.0) -> "TerminalData":
        return cls(lambda t: xi, lambda t: psi, lambda t, z: zeta, lambda t: vartheta)

    def scaled_sum(self, a: float, other: "TerminalData", b: float) -> "TerminalData":
        """a * self + b * other, component by component."""
        return TerminalData(
            xi=lambda t: a * self.xi(t) + b * other.xi(t),
            psi=lambda t: a * self.psi(t) + b * other.psi(t),
            zeta=lambda t, z: a * self.zeta(t, z) + b * other.zeta(t, z),
            vartheta=lambda t: a * np.asarray(self.vartheta(t), dtype=float) + b * np.asarray(other.vartheta(t), dtype=float),
        )

    def on_nodes(self, times: np.ndarray, marks: Sequence[float], D: int) -> "TerminalNodes":
        times = np.asarray(times, dtype=float)
        nodes = TerminalNodes(
            xi=np.array([float(self.xi(t)) for t in times]),
            psi=np.array([float(self.psi(t)) for t in times]),
            zeta=np.array([[float(self.zeta(t, z)) for z in marks] for t in times]).reshape(times.size, len(marks)),
            vartheta=np.array([np.broadcast_to(np.asarray(self.vartheta(t), dtype=float), (D,)) for t in times]),
        )
        for name in ("xi", "psi", "zeta", "vartheta"):
            values = getattr(nodes, name)
            if not np.all(np.isfinite(values)):
                raise InvalidArgumentError(f"terminal data '{name}' is not finite on the nodes of [T, T+delta]")
        return nodes


@dataclass(frozen=True, eq=False)
class TerminalNodes:
    """Terminal data tabulated at the nodes K_T..K_T+m."""
    xi: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    vartheta: np.ndarray


@dataclass(frozen=True)
class DualityEstimate:
    y: float
    standard_error: float
    n_paths: int
    grid: TimeGrid
    initial_regime: int = 0
    seed: Optional[int] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples: np.ndarray, grid: TimeGrid, initial_regime: int, seed: Optional[int]) -> "DualityEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n == 0:
            raise InvalidArgumentError("cannot summarize an empty sample")
        if np.all(samples == samples[0]):
            # Degenerate ensemble: report the common value itself, not a rounded mean.
            return cls(float(samples[0]), 0.0, n, grid, int(initial_regime), seed, samples)
        se = float(samples.std(ddof=1) / np.sqrt(n))
        return cls(float(samples.mean()), se, n, grid, int(initial_regime), seed, samples)

    def to_dict(self) -> Dict:
        return {
            "y": self.y,
            "se": self.standard_error,
            "n_paths": self.n_paths,
            "dt": self.grid.dt,
            "initial_regime": self.initial_regime,
            "seed": self.seed,
        }
