from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence
import logging

import numpy as np

from src.errors import InvalidArgumentError
from src.noise.noise_bundle import NoiseBatch
from src.sdde.path_engine import CoefficientStream, DelayedPathEnsemble, NoiseInput, as_noise_batch

logger = logging.getLogger(__name__)

# phi and its partials take (t, y, regime) with y and regime (N,) arrays.
PhiCallback = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

DERIVATIVE_STEP = 1e-5
DERIVATIVE_RTOL = 1e-6

ITO_TERMS = (
    "time_drift",
    "space_drift",
    "diffusion_correction",
    "jump_compensator",
    "switch_compensator",
    "brownian_integral",
    "jump_martingale",
    "switch_martingale",
)

PRODUCT_TERMS = (
    "x1_dx2",
    "x2_dx1",
    "diffusion_covariation",
    "jump_compensator",
    "jump_martingale",
    "switch_compensator",
    "switch_martingale",
)


def _zero(t, y, regime):
    return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ItoTestFunction:
    """phi(t, y, e_i) with analytic partials d/dt, d/dy and d2/dy2."""
    phi: PhiCallback
    dt: PhiCallback = _zero
    dy: PhiCallback = _zero
    dyy: PhiCallback = _zero
    name: str = "phi"

    def __call__(self, t, y, regime) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.phi(t, y, regime), dtype=float), y.shape)

    def partial(self, which: str, t, y, regime) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(getattr(self, which)(t, y, regime), dtype=float), y.shape)

    @classmethod
    def identity(cls) -> "ItoTestFunction":
        return cls(lambda t, y, r: y, dy=lambda t, y, r: np.ones_like(y), name="identity")

    @classmethod
    def square(cls) -> "ItoTestFunction":
        return cls(
            lambda t, y, r: y ** 2,
            dy=lambda t, y, r: 2.0 * y,
            dyy=lambda t, y, r: np.full_like(y, 2.0),
            name="square",
        )

    @classmethod
    def regime_indicator(cls, values: Sequence[float]) -> "ItoTestFunction":
        """phi(t, y, e_j) = values[j]."""
        table = np.asarray(values, dtype=float)
        return cls(lambda t, y, r: table[np.asarray(r, dtype=np.int64)] + 0.0 * y, name="regime-indicator")

    def combine(self, a: float, other: "ItoTestFunction", b: float) -> "ItoTestFunction":
        """a * self + b * other."""

        def mix(which: str) -> PhiCallback:
            return lambda t, y, r: a * self.partial(which, t, y, r) + b * other.partial(which, t, y, r)

        return ItoTestFunction(
            lambda t, y, r: a * self(t, y, r) + b * other(t, y, r),
            dt=mix("dt"),
            dy=mix("dy"),
            dyy=mix("dyy"),
            name=f"{a:g}*{self.name}+{b:g}*{other.name}",
        )

    def verify_derivatives(self, n_regimes: int, n_samples: int = 50, seed: int = 0, radius: float = 2.0) -> Dict[str, float]:
        """Compare the analytic partials with centered differences; raises on a mismatch.

        d/dt and d/dy difference phi itself; d2/dy2 differences the analytic d/dy.
        """
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, 1.0, size=n_samples)
        y = rng.uniform(-radius, radius, size=n_samples)
        regime = rng.integers(0, n_regimes, size=n_samples)
        h = DERIVATIVE_STEP

        worst = {"dt": 0.0, "dy": 0.0, "dyy": 0.0}
        for n in range(n_samples):
            tn, yn, rn = t[n], y[n:n + 1], regime[n:n + 1]
            numeric = {
                "dt": (self(tn + h, yn, rn) - self(tn - h, yn, rn)) / (2 * h),
                "dy": (self(tn, yn + h, rn) - self(tn, yn - h, rn)) / (2 * h),
                "dyy": (self.partial("dy", tn, yn + h, rn) - self.partial("dy", tn, yn - h, rn)) / (2 * h),
            }
            for which, fd in numeric.items():
                analytic = self.partial(which, tn, yn, rn)
                rel = float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(analytic))))
                worst[which] = max(worst[which], rel)

        bad = {k: v for k, v in worst.items() if v > DERIVATIVE_RTOL}
        if bad:
            which, rel = next(iter(bad.items()))
            raise InvalidArgumentError(f"test function '{self.name}': partial {which} disagrees with finite differences (relative error {rel:.3g})")
        return worst


@dataclass
class ItoDecomposition:
    """phi(T, X_T, alpha_T) - phi(t0, X_0, alpha_0) against each right-hand-side term, per path."""
    lhs: np.ndarray
    terms: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def rhs(self) -> np.ndarray:
        return sum(self.terms.values(), np.zeros_like(self.lhs))

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs


ProductRuleDecomposition = ItoDecomposition


def _check_inputs(ensemble: DelayedPathEnsemble, stream: CoefficientStream, noise: NoiseBatch) -> None:
    if ensemble.grid.K != noise.grid.K or abs(ensemble.grid.dt - noise.grid.dt) > 1e-12:
        raise InvalidArgumentError("path ensemble and noise live on different grids")
    if stream.x.shape != (ensemble.n_paths, ensemble.grid.K) or noise.n_paths != ensemble.n_paths:
        raise InvalidArgumentError("coefficient stream, paths and noise disagree on path count or steps")


def ito_decomposition(phi: ItoTestFunction, ensemble: DelayedPathEnsemble, stream: CoefficientStream, noise: NoiseInput) -> ItoDecomposition:
    """All right-hand-side terms of the regime-switching Ito formula at left points.

    Switching terms are resolved per regime inside each cell: realized i -> j switches count
    phi(X + gamma_j(e_i), e_j) - phi(X, e_i), compensators integrate over the occupation of e_i.
    """
    noise = as_noise_batch(noise)
    _check_inputs(ensemble, stream, noise)
    grid = ensemble.grid
    dt = grid.dt
    D = noise.chain_spec.D
    off = noise.chain_spec.off_diagonal
    mass = noise.jump_spec.levy_mass
    N = ensemble.n_paths
    X = ensemble.horizon_values()
    states = noise.states

    terms = {name: np.zeros(N) for name in ITO_TERMS}
    for k in range(grid.K):
        t = grid.time(k)
        x, regime = X[:, k], states[:, k]
        phi_x = phi(t, x, regime)
        phi_y = phi.partial("dy", t, x, regime)
        sigma = stream.diffusion[:, k]

        terms["time_drift"] += phi.partial("dt", t, x, regime) * dt
        terms["space_drift"] += phi_y * stream.drift[:, k] * dt
        terms["diffusion_correction"] += 0.5 * phi.partial("dyy", t, x, regime) * sigma ** 2 * dt
        terms["brownian_integral"] += phi_y * sigma * noise.brownian[:, k]

        for z in range(mass.size):
            eta = stream.jump[:, k, z]
            jump_diff = phi(t, x + eta, regime) - phi_x
            terms["jump_compensator"] += mass[z] * dt * (jump_diff - phi_y * eta)
            terms["jump_martingale"] += jump_diff * (noise.jump_counts[:, k, z] - mass[z] * dt)

        for i in range(D):
            from_i = np.full(N, i, dtype=np.int64)
            phi_i = phi(t, x, from_i)
            dphi_i = phi.partial("dy", t, x, from_i)
            occ = noise.occupation[:, k, i]
            for j in range(D):
                if i == j:
                    continue
                gamma = stream.switching[:, k, i, j]
                switch_diff = phi(t, x + gamma, np.full(N, j, dtype=np.int64)) - phi_i
                terms["switch_compensator"] += occ * off[i, j] * (switch_diff - dphi_i * gamma)
                terms["switch_martingale"] += switch_diff * (noise.switches[:, k, i, j] - occ * off[i, j])

    lhs = phi(grid.T, X[:, -1], states[:, -1]) - phi(grid.t0, X[:, 0], states[:, 0])
    return ItoDecomposition(lhs, terms)


def ito_residual(phi: ItoTestFunction, ensemble: DelayedPathEnsemble, stream: CoefficientStream, noise: NoiseInput) -> np.ndarray:
    """Per-path residual of the Ito formula."""
    return ito_decomposition(phi, ensemble, stream, noise).residual


def product_rule_decomposition(
    first: DelayedPathEnsemble,
    first_stream: CoefficientStream,
    second: DelayedPathEnsemble,
    second_stream: CoefficientStream,
    noise: NoiseInput,
) -> ProductRuleDecomposition:
    """X1_T X2_T - X1_0 X2_0 against the product-rule bracket terms; covariations are realized products
    split into compensator and martingale parts."""
    noise = as_noise_batch(noise)
    _check_inputs(first, first_stream, noise)
    _check_inputs(second, second_stream, noise)
    if first.grid.K != second.grid.K:
        raise InvalidArgumentError("product rule needs both paths on the same grid")
    dt = first.grid.dt
    D = noise.chain_spec.D
    off = noise.chain_spec.off_diagonal
    mass = noise.jump_spec.levy_mass
    X1, X2 = first.horizon_values(), second.horizon_values()
    N = first.n_paths

    terms = {name: np.zeros(N) for name in PRODUCT_TERMS}
    for k in range(first.grid.K):
        terms["x1_dx2"] += X1[:, k] * (X2[:, k + 1] - X2[:, k])
        terms["x2_dx1"] += X2[:, k] * (X1[:, k + 1] - X1[:, k])
        terms["diffusion_covariation"] += first_stream.diffusion[:, k] * second_stream.diffusion[:, k] * dt
        for z in range(mass.size):
            product = first_stream.jump[:, k, z] * second_stream.jump[:, k, z]
            terms["jump_compensator"] += product * mass[z] * dt
            terms["jump_martingale"] += product * (noise.jump_counts[:, k, z] - mass[z] * dt)
        for i in range(D):
            occ = noise.occupation[:, k, i]
            for j in range(D):
                if i == j:
                    continue
                product = first_stream.switching[:, k, i, j] * second_stream.switching[:, k, i, j]
                terms["switch_compensator"] += product * occ * off[i, j]
                terms["switch_martingale"] += product * (noise.switches[:, k, i, j] - occ * off[i, j])

    lhs = X1[:, -1] * X2[:, -1] - X1[:, 0] * X2[:, 0]
    return ProductRuleDecomposition(lhs, terms)


def product_rule_residual(
    first: DelayedPathEnsemble,
    first_stream: CoefficientStream,
    second: DelayedPathEnsemble,
    second_stream: CoefficientStream,
    noise: NoiseInput,
) -> np.ndarray:
    return product_rule_decomposition(first, first_stream, second, second_stream, noise).residual


@dataclass(frozen=True)
class ResidualSummary:
    dt: float
    mean_abs_residual: float
    se: float
    n_paths: int

    @classmethod
    def of(cls, residuals: np.ndarray, dt: float) -> "ResidualSummary":
        residuals = np.asarray(residuals, dtype=float)
        n = residuals.size
        se = float(residuals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(float(dt), float(abs(residuals.mean())), se, n)

    def to_dict(self) -> Dict:
        return {"dt": self.dt, "mean_abs_residual": self.mean_abs_residual, "se": self.se, "n_paths": self.n_paths}


def residual_table(summaries: Sequence[ResidualSummary]) -> List[Dict]:
    """Rows for the residual CSV, finest grid last."""
    return [s.to_dict() for s in sorted(summaries, key=lambda s: -s.dt)]


def convergence_ratios(summaries: Sequence[ResidualSummary]) -> List[float]:
    """mean_abs_residual(dt / 2) / mean_abs_residual(dt) along the table."""
    rows = sorted(summaries, key=lambda s: -s.dt)
    return [
        rows[i + 1].mean_abs_residual / rows[i].mean_abs_residual if rows[i].mean_abs_residual > 0 else 0.0
        for i in range(len(rows) - 1)
    ]
