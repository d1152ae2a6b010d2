import os
import sys
import unittest
import logging
import json
import math

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.duality.duality_estimator import check_alignment, evaluate_duality, evaluate_feynman_kac
from src.duality.linear_data import DualityEstimate, LinearABSDEData, TerminalData
from src.errors import AssumptionViolation, InvalidArgumentError
from src.noise.jump_measure import JumpSpec
from src.noise.noise_bundle import ExactNoiseSampler, sample_noise
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid
from src.oracle.duality_gap import evaluate_duality_on_tree
from src.oracle.scenario_tree import TreeNoiseSampler, build_tree
from src.sdde.path_engine import simulate_linear_sdde


ASYMMETRIC = RegimeChainSpec(np.array([[-1.0, 1.0], [2.0, -2.0]]))
ONE_MARK = JumpSpec(0.5, (0.5,), (1.0,))
MIXED_TERMINAL = TerminalData.constant(1.0, 0.1, 0.1, np.array([0.1, 0.1]))


def constant(value):
    return lambda t, r: np.full(np.shape(r), value)


def mixed_data(l: float = 0.5) -> LinearABSDEData:
    return LinearABSDEData(
        b=constant(0.2),
        b_bar=constant(-0.1),
        sigma=constant(0.3),
        sigma_bar=constant(0.1),
        eta=lambda t, r, z: np.where(r == 0, 0.2, -0.3),
        eta_bar=lambda t, r, z: np.full(np.shape(r), -0.2),
        gamma=lambda t, r: np.full((np.size(r), 1), 0.1),
        gamma_bar=lambda t, r: np.full((np.size(r), 1), 0.2),
        l=constant(l),
        n_regimes=2,
    )


def stepped_linear_path(b, b_bar, grid: TimeGrid) -> dict:
    """Deterministic delayed Euler recursion, X = 0 before t and X(t) = 1, keyed by node index."""
    m, dt = grid.m, grid.dt
    x = {k: 0.0 for k in range(-m, 0)}
    x[0] = 1.0
    for k in range(grid.K):
        x[k + 1] = x[k] + (b(grid.time(k)) * x[k] + b_bar(grid.time(k - m)) * x[k - m]) * dt
    return x


class TestDualityEstimator(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_duality")
        cls.grid = TimeGrid(0.0, 0.75, 3, 1)


    def _log_estimate(self, estimate: DualityEstimate, test_name, **extra):
        payload = {**estimate.to_dict(), **extra}
        self.logger.info(f"[{test_name}]\n{json.dumps(payload, ensure_ascii=False, indent=2)}")


    def test_zero_driver_returns_terminal_value_exactly(self):
        data = LinearABSDEData(n_regimes=2)
        estimate = evaluate_duality(data, MIXED_TERMINAL, self.grid, 0.25, 0, 500, 7, ASYMMETRIC, ONE_MARK)
        self._log_estimate(estimate, "Zero driver")

        self.assertEqual(estimate.y, 1.0)
        self.assertEqual(estimate.standard_error, 0.0)
        self.assertEqual(estimate.to_dict()["n_paths"], 500)
        self.assertEqual(sorted(estimate.to_dict()), ["dt", "initial_regime", "n_paths", "se", "seed", "y"])


    def test_running_term_only(self):
        data = LinearABSDEData(l=constant(0.5), n_regimes=2)
        estimate = evaluate_duality(data, TerminalData.constant(2.0), self.grid, 0.25, 1, 50, 3, ASYMMETRIC, ONE_MARK)

        # X = 1 on [t, T + delta]: Y = xi + l (T - t).
        self.assertAlmostEqual(estimate.y, 2.0 + 0.5 * 0.75, places=12)


    def test_matches_the_feynman_kac_accumulator_on_delay_free_data(self):
        data = LinearABSDEData(
            b=constant(0.2),
            sigma=constant(0.3),
            eta=lambda t, r, z: np.where(r == 0, 0.2, -0.3),
            gamma=lambda t, r: np.where(np.asarray(r)[:, None] == 0, 0.1, 0.3) * np.ones((1, 2)),
            l=constant(0.5),
            n_regimes=2,
        )
        grid = TimeGrid(0.0, 0.75, 12, 4)
        args = (grid, 0, 400, 21, ASYMMETRIC, ONE_MARK)

        duality = evaluate_duality(data, MIXED_TERMINAL, grid, grid.delta, *args[1:])
        feynman_kac = evaluate_feynman_kac(data, MIXED_TERMINAL, *args)
        self._log_estimate(duality, "Delay-free data", feynman_kac=feynman_kac.y)

        np.testing.assert_allclose(duality.samples, feynman_kac.samples, rtol=1e-12, atol=1e-12)


    def test_monte_carlo_on_tree_dynamics_matches_the_exact_tree_sum(self):
        tree = build_tree(ASYMMETRIC, ONE_MARK, self.grid.extend_horizon(), 0)
        data = mixed_data()
        exact = evaluate_duality_on_tree(data, MIXED_TERMINAL, tree)
        estimate = evaluate_duality(
            data, MIXED_TERMINAL, self.grid, 0.25, 0, 20000, 5, ASYMMETRIC, ONE_MARK,
            sampler=TreeNoiseSampler(tree, 5), batch_size=5000,
        )
        self._log_estimate(estimate, "Tree dynamics", exact=exact)

        self.assertLessEqual(abs(estimate.y - exact), 4 * estimate.standard_error)


    def test_results_do_not_depend_on_workers(self):
        data = mixed_data()
        serial = evaluate_duality(data, MIXED_TERMINAL, self.grid, 0.25, 0, 64, 9, ASYMMETRIC, ONE_MARK, batch_size=64, workers=1)
        threaded = evaluate_duality(data, MIXED_TERMINAL, self.grid, 0.25, 0, 64, 9, ASYMMETRIC, ONE_MARK, batch_size=8, workers=8)

        self.assertEqual(serial.to_dict(), threaded.to_dict())


    def test_constant_rate_is_explicit_euler_growth(self):
        r = 0.3
        grid = TimeGrid(0.0, 1.0, 16, 4)
        estimate = evaluate_duality(LinearABSDEData(b=constant(r), n_regimes=2), TerminalData.constant(1.0), grid, 0.25, 0, 200, 4, ASYMMETRIC, ONE_MARK)
        self._log_estimate(estimate, "Constant rate", exact=math.exp(r))

        self.assertAlmostEqual(estimate.y, (1.0 + r * grid.dt) ** 16, places=12)
        self.assertEqual(estimate.standard_error, 0.0)
        self.assertLessEqual(abs(estimate.y - math.exp(r)) / math.exp(r), r ** 2 * grid.dt)


    def test_deterministic_delay_matches_method_of_steps(self):
        grid = TimeGrid(0.0, 0.75, 6, 2)
        ext = grid.extend_horizon()
        b = lambda t: 0.2 + 0.1 * t
        b_bar = lambda t: -0.5 + t
        data = LinearABSDEData(
            b=lambda t, r: np.full(np.shape(r), b(t)),
            b_bar=lambda t, r: np.full(np.shape(r), b_bar(t)),
            l=constant(0.1),
            n_regimes=2,
        )
        terminal = TerminalData(xi=lambda t: 1.0 + t)

        x = stepped_linear_path(b, b_bar, ext)
        KT, dt = grid.K, grid.dt
        expected = (
            x[KT] * terminal.xi(grid.T)
            + sum(x[k] * 0.1 * dt for k in range(KT))
            # On [T, T + delta) the anticipated term reads the lagged path.
            + sum(terminal.xi(ext.time(k)) * b_bar(ext.time(k - ext.m)) * x[k - ext.m] * dt for k in range(KT, ext.K))
        )
        estimate = evaluate_duality(data, terminal, grid, 0.25, 1, 40, 8, ASYMMETRIC, ONE_MARK)
        self._log_estimate(estimate, "Deterministic delay", expected=expected)

        self.assertAlmostEqual(estimate.y, expected, places=12)
        self.assertEqual(estimate.standard_error, 0.0)


    def test_estimate_is_linear_in_terminal_data(self):
        data = mixed_data(l=0.0)
        second = TerminalData(xi=lambda t: 1.0 + t, psi=lambda t: -0.2, zeta=lambda t, z: 0.3, vartheta=lambda t: np.array([0.0, 0.4]))
        args = (self.grid, 0.25, 0, 300, 17, ASYMMETRIC, ONE_MARK)

        combined = evaluate_duality(data, MIXED_TERMINAL.scaled_sum(2.0, second, -0.5), *args)
        first_only = evaluate_duality(data, MIXED_TERMINAL, *args)
        second_only = evaluate_duality(data, second, *args)

        np.testing.assert_allclose(combined.samples, 2.0 * first_only.samples - 0.5 * second_only.samples, rtol=1e-12, atol=1e-12)
        self.assertAlmostEqual(combined.y, 2.0 * first_only.y - 0.5 * second_only.y, places=12)


    def test_misaligned_delta_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            check_alignment(self.grid, 0.3)
        with self.assertRaises(InvalidArgumentError):
            check_alignment(TimeGrid(0.0, 0.75, 3, 0), 0.0)
        with self.assertRaises(InvalidArgumentError):
            evaluate_duality(LinearABSDEData(n_regimes=2), MIXED_TERMINAL, self.grid, 0.5, 0, 10, 1, ASYMMETRIC, ONE_MARK)


    def test_sampler_on_the_wrong_grid_is_rejected(self):
        tree = build_tree(ASYMMETRIC, ONE_MARK, TimeGrid(0.0, 0.75, 3, 1), 0)

        with self.assertRaises(InvalidArgumentError):
            evaluate_duality(mixed_data(), MIXED_TERMINAL, self.grid, 0.25, 0, 10, 1, ASYMMETRIC, ONE_MARK, sampler=TreeNoiseSampler(tree, 1))


class TestLinearSDDE(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_duality")


    def _noise(self, grid, seed):
        return sample_noise(ExactNoiseSampler(ASYMMETRIC, ONE_MARK, grid, 0, seed=seed), 50)


    def test_constant_rate_stays_within_the_euler_bound(self):
        r = 0.3
        ext = TimeGrid(0.0, 1.0, 16, 4).extend_horizon()
        ensemble = simulate_linear_sdde(LinearABSDEData(b=constant(r), n_regimes=2), ext, self._noise(ext, 2))
        times = ext.horizon_times()
        expected = (1.0 + r * ext.dt) ** np.arange(ext.K + 1)

        np.testing.assert_array_equal(ensemble.values[:, : ext.m], 0.0)
        np.testing.assert_allclose(ensemble.horizon_values(), np.tile(expected, (50, 1)), rtol=1e-12)
        relative = np.abs(expected - np.exp(r * times)) / np.exp(r * times)
        self.assertTrue(np.all(relative <= r ** 2 * (times - ext.t0) * ext.dt + 1e-15))


    def test_lagged_drift_follows_the_method_of_steps(self):
        # Three segments: zero history, lag still zero on [t, t + delta), lag active afterwards.
        ext = TimeGrid(0.0, 0.75, 6, 2).extend_horizon()
        b = lambda t: 0.2 + 0.1 * t
        b_bar = lambda t: -0.5 + t
        data = LinearABSDEData(
            b=lambda t, r: np.full(np.shape(r), b(t)),
            b_bar=lambda t, r: np.full(np.shape(r), b_bar(t)),
            n_regimes=2,
        )
        ensemble = simulate_linear_sdde(data, ext, self._noise(ext, 3))
        x = stepped_linear_path(b, b_bar, ext)
        expected = np.array([x[k] for k in range(-ext.m, ext.K + 1)])
        self.logger.info(f"[Method of steps]\n{json.dumps(expected.tolist(), indent=2)}")

        np.testing.assert_allclose(ensemble.values, np.tile(expected, (50, 1)), rtol=1e-12, atol=1e-15)


class TestLinearData(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_duality")


    def test_bounds_are_checked(self):
        grid = TimeGrid(0.0, 1.0, 4, 1)
        largest = mixed_data().check_bounds(grid, ONE_MARK.marks)
        self.logger.info(f"[Coefficient bounds]\n{json.dumps(largest, ensure_ascii=False, indent=2)}")

        self.assertAlmostEqual(largest["l"], 0.5)
        self.assertAlmostEqual(largest["eta"], 0.3)
        with self.assertRaises(AssumptionViolation):
            LinearABSDEData(b=constant(2.0), n_regimes=2).check_bounds(grid, ONE_MARK.marks)


    def test_terminal_nodes_and_scaled_sum(self):
        first = TerminalData(xi=lambda t: t, psi=lambda t: 1.0)
        mixed = first.scaled_sum(2.0, TerminalData.constant(1.0, 0.5, 0.0, 0.0), -1.0)
        nodes = mixed.on_nodes(np.array([0.75, 1.0]), (0.5,), 2)

        np.testing.assert_allclose(nodes.xi, [0.5, 1.0])
        np.testing.assert_allclose(nodes.psi, [1.5, 1.5])
        self.assertEqual(nodes.zeta.shape, (2, 1))
        self.assertEqual(nodes.vartheta.shape, (2, 2))


    def test_non_finite_terminal_data_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            TerminalData.constant(float("nan")).on_nodes(np.array([1.0]), (0.5,), 1)


if __name__ == "__main__":
    unittest.main()
