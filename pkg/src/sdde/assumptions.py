from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional
import logging

import numpy as np

from src.errors import AssumptionViolation
from src.noise.jump_measure import JumpSpec, jump_norm
from src.noise.regime_chain import RegimeChainSpec, switching_norm
from src.noise.time_grid import TimeGrid
from .coefficients import N_DELAYS, DelayFunctions, SDDECoefficients, as_batch, as_batch_vector

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-12
# Largest adjacent-node change of a delay, per unit dt, still accepted as continuous.
MAX_DELAY_SLOPE = 10.0
LIPSCHITZ_SLACK = 0.01


@dataclass
class DelayReport:
    a1_holds: bool
    max_delay: List[float]
    max_slope: List[float]
    continuity_flagged: List[int]
    declared_L: float
    empirical_L: float
    L_flagged: bool
    n_test_functions: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class LipschitzReport:
    declared_C: float
    max_quotient: Dict[str, float]
    flagged: List[str]
    n_samples: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ZeroGrowthReport:
    non_finite: List[Dict] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.non_finite)

    def to_dict(self) -> Dict:
        return {"non_finite": self.non_finite, "flagged": self.flagged}


def _random_step_functions(n_cells: int, n_functions: int, rng: np.random.Generator) -> np.ndarray:
    """Nonnegative step functions on the cells: half random heights, half random-interval indicators."""
    g = rng.random((n_functions, n_cells))
    for row in range(n_functions // 2, n_functions):
        a, b = np.sort(rng.integers(0, n_cells + 1, size=2))
        if a == b:
            b = min(a + 1, n_cells)
            a = b - 1
        g[row] = 0.0
        g[row, a:b] = rng.random() + 0.5
    return g


def validate_assumptions(
    delays: DelayFunctions,
    grid: TimeGrid,
    n_functions: int = 100,
    seed: int = 0,
) -> DelayReport:
    """Delay range at every node (hard error), continuity of each delay, and an empirical delay-integral constant L."""
    values = delays.values(grid)
    times = grid.horizon_times()
    room = times - grid.t0 + delays.bound

    for i in range(N_DELAYS):
        below = np.flatnonzero(values[i] < -RANGE_TOL)
        above = np.flatnonzero(values[i] > room + RANGE_TOL)
        if below.size or above.size:
            k = int(np.concatenate([below, above]).min())
            msg = (
                f"delay {i + 1} leaves its admissible range at node k={k} (t={times[k]:.6g}): "
                f"delta={values[i, k]:.6g} must lie in [0, {room[k]:.6g}]"
            )
            logger.error(msg)
            raise AssumptionViolation(msg)

    slopes = np.abs(np.diff(values, axis=1)).max(axis=1) / grid.dt if grid.K > 0 else np.zeros(N_DELAYS)
    continuity_flagged = [i + 1 for i in range(N_DELAYS) if slopes[i] > MAX_DELAY_SLOPE]
    for i in continuity_flagged:
        logger.warning(f"delay {i} changes by {slopes[i - 1] * grid.dt:.6g} between adjacent nodes; continuity is doubtful")

    # Delay-integral bound: sum_k g(t_k - delta_i(t_k)) dt <= L * sum over history and horizon of g dt.
    lags = delays.lag_nodes(grid)
    rng = np.random.default_rng(seed)
    g = _random_step_functions(grid.K + grid.m, n_functions, rng)
    total = g.sum(axis=1)
    ratios = []
    for i in range(N_DELAYS):
        lagged = g[:, lags[i] + grid.m].sum(axis=1)
        ok = total > 0
        ratios.append(float(np.max(lagged[ok] / total[ok])))
    empirical_L = max(ratios)
    L_flagged = empirical_L > delays.L * (1.0 + 1e-9)
    if L_flagged:
        logger.warning(f"empirical delay constant {empirical_L:.4f} exceeds the declared L={delays.L}")

    return DelayReport(
        a1_holds=True,
        max_delay=[float(v) for v in values.max(axis=1)],
        max_slope=[float(s) for s in slopes],
        continuity_flagged=continuity_flagged,
        declared_L=float(delays.L),
        empirical_L=empirical_L,
        L_flagged=bool(L_flagged),
        n_test_functions=n_functions,
    )


def check_lipschitz(
    coeffs: SDDECoefficients,
    grid: TimeGrid,
    chain_spec: RegimeChainSpec,
    jump_spec: JumpSpec,
    n_samples: int = 200,
    radius: float = 10.0,
    seed: int = 0,
) -> LipschitzReport:
    """Lipschitz spot check: quotients of b, sigma, eta (in ||.||_J) and gamma (in ||.||_S) against C."""
    rng = np.random.default_rng(seed)
    n = n_samples
    nodes = grid.horizon_times()
    quotients = {"drift": 0.0, "diffusion": 0.0, "jump": 0.0, "switching": 0.0}

    for t in nodes[rng.integers(0, nodes.size, size=min(8, nodes.size))]:
        regime = rng.integers(0, coeffs.n_regimes, size=n)
        x1, y1, x2, y2 = rng.uniform(-radius, radius, size=(4, n))
        dist = np.abs(x1 - x2) + np.abs(y1 - y2)

        for name in ("drift", "diffusion"):
            fn = getattr(coeffs, name)
            diff = np.abs(as_batch(fn(t, x1, y1, regime), n) - as_batch(fn(t, x2, y2, regime), n))
            quotients[name] = max(quotients[name], float(np.max(diff / dist)))

        if jump_spec.rate > 0:
            norm = jump_norm(
                jump_spec,
                lambda z: as_batch(coeffs.jump(t, x1, y1, regime, z), n) - as_batch(coeffs.jump(t, x2, y2, regime, z), n),
            )
            quotients["jump"] = max(quotients["jump"], float(np.max(norm / dist)))

        D = coeffs.n_regimes
        d = as_batch_vector(coeffs.switching(t, x1, y1, regime), n, D) - as_batch_vector(coeffs.switching(t, x2, y2, regime), n, D)
        quotients["switching"] = max(quotients["switching"], float(np.max(switching_norm(chain_spec, regime, d) / dist)))

    limit = coeffs.lipschitz_C * (1.0 + LIPSCHITZ_SLACK)
    flagged = [name for name, q in quotients.items() if q > limit]
    for name in flagged:
        logger.warning(f"{name} Lipschitz quotient {quotients[name]:.4g} exceeds C={coeffs.lipschitz_C}")
    return LipschitzReport(float(coeffs.lipschitz_C), quotients, flagged, n_samples)


def check_zero_growth(coeffs: SDDECoefficients, grid: TimeGrid, jump_spec: JumpSpec) -> ZeroGrowthReport:
    """Zero-growth spot check: coefficients at (t_k, 0, 0, e_i) are finite for every node and regime."""
    D = coeffs.n_regimes
    regimes = np.arange(D, dtype=np.int64)
    zeros = np.zeros(D)
    report = ZeroGrowthReport()
    for k, t in enumerate(grid.horizon_times()):
        evaluated = {
            "drift": as_batch(coeffs.drift(t, zeros, zeros, regimes), D),
            "diffusion": as_batch(coeffs.diffusion(t, zeros, zeros, regimes), D),
            "switching": as_batch_vector(coeffs.switching(t, zeros, zeros, regimes), D, D),
        }
        for z in jump_spec.marks:
            evaluated[f"jump(z={z:g})"] = as_batch(coeffs.jump(t, zeros, zeros, regimes, z), D)
        for name, values in evaluated.items():
            if not np.all(np.isfinite(values)):
                report.non_finite.append({"coefficient": name, "k": k, "t": float(t)})
    if report.flagged:
        logger.warning(f"{len(report.non_finite)} coefficient evaluations at zero are not finite")
    return report


def validate_model(
    coeffs: SDDECoefficients,
    delays: DelayFunctions,
    grid: TimeGrid,
    chain_spec: RegimeChainSpec,
    jump_spec: JumpSpec,
    seed: int = 0,
    strict: bool = False,
) -> Dict:
    """All four checks together; strict=True turns flagged delay-integral, Lipschitz and zero-growth results into AssumptionViolation."""
    delay_report = validate_assumptions(delays, grid, seed=seed)
    lipschitz = check_lipschitz(coeffs, grid, chain_spec, jump_spec, seed=seed)
    zero_growth = check_zero_growth(coeffs, grid, jump_spec)

    problems: List[str] = []
    if delay_report.L_flagged:
        problems.append(f"empirical L={delay_report.empirical_L:.4f} exceeds declared L={delays.L}")
    if lipschitz.flagged:
        problems.append(f"Lipschitz quotient above C for {', '.join(lipschitz.flagged)}")
    if zero_growth.flagged:
        first: Optional[Dict] = zero_growth.non_finite[0]
        problems.append(f"{first['coefficient']} is not finite at zero (k={first['k']})")
    if strict and problems:
        raise AssumptionViolation("; ".join(problems))

    return {
        "delays": delay_report.to_dict(),
        "lipschitz": lipschitz.to_dict(),
        "zero_growth": zero_growth.to_dict(),
        "problems": problems,
    }
