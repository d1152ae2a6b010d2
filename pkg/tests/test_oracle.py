import os
import sys
import unittest
import logging
import json
import math

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config.scenario_config import load_config
from src.duality.linear_data import LinearABSDEData, TerminalData
from src.errors import DtTooLargeError, InvalidArgumentError, ResourceLimitError
from src.main import tree_grid
from src.noise.jump_measure import JumpSpec
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid
from src.oracle.backward_solver import solve_absde_backward
from src.oracle.duality_gap import duality_gap, evaluate_duality_on_tree
from src.oracle.scenario_tree import MAX_DEPTH, TreeNoiseSampler, build_tree


SCENARIOS = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'config', 'scenarios'))

ASYMMETRIC = RegimeChainSpec(np.array([[-1.0, 1.0], [2.0, -2.0]]))
ONE_MARK = JumpSpec(0.5, (0.5,), (1.0,))
MIXED_TERMINAL = TerminalData.constant(1.0, 0.1, 0.1, np.array([0.1, 0.1]))
# Depth-4 tree over [0, T + delta] = [0, 1] with delta = 0.25.
DEPTH_4 = TimeGrid(0.0, 1.0, 4, 1)


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


class TestScenarioTree(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_oracle")
        cls.tree = build_tree(ASYMMETRIC, ONE_MARK, DEPTH_4, 0)


    def test_shape_and_probabilities(self):
        tree = self.tree

        self.assertEqual(tree.branch_factor, 8)
        self.assertEqual(tree.n_paths, 8 ** 4)
        self.assertEqual(len(tree.level_states), 4)
        self.assertEqual(tree.level_states[3].size, 8 ** 3)
        self.assertAlmostEqual(float(tree.path_probabilities().sum()), 1.0, places=12)
        np.testing.assert_allclose(tree.branch_probs.sum(axis=1), 1.0, atol=1e-14)


    def test_increments_have_zero_conditional_mean(self):
        tree = self.tree
        for i in range(tree.D):
            probs = tree.branch_probs[i]
            self.assertAlmostEqual(float(probs @ tree.dW), 0.0, places=14)
            self.assertAlmostEqual(float(probs @ tree.dN_tilde), 0.0, places=14)
            np.testing.assert_allclose(probs @ tree.dPhi_tilde[i], 0.0, atol=1e-14)
        self.assertAlmostEqual(float(tree.branch_probs[0] @ tree.dW ** 2), tree.grid.dt, places=14)


    def test_conditional_mean_is_the_tower_property(self):
        tree = self.tree
        leaves = np.arange(8 ** 3, dtype=float)

        two_up = tree.conditional_mean(leaves, 3, 2)
        step_by_step = tree.conditional_mean(tree.conditional_mean(leaves, 3, 1), 2, 1)
        np.testing.assert_allclose(two_up, step_by_step, rtol=1e-14)
        np.testing.assert_allclose(tree.conditional_mean(np.ones(8 ** 3), 3, 3), [1.0], rtol=1e-14)


    def test_limits(self):
        with self.assertRaises(ResourceLimitError):
            build_tree(ASYMMETRIC, ONE_MARK, TimeGrid(0.0, 1.0, MAX_DEPTH + 1, 1), 0)
        with self.assertRaises(DtTooLargeError):
            build_tree(ASYMMETRIC, ONE_MARK, TimeGrid(0.0, 1.0, 2, 1), 0)
        with self.assertRaises(InvalidArgumentError):
            build_tree(ASYMMETRIC, JumpSpec(0.5, (0.5, 1.0), (0.5, 0.5)), DEPTH_4, 0)


    def test_sampler_draws_tree_branches(self):
        batch = TreeNoiseSampler(self.tree, 3).sample(range(200))
        dt = DEPTH_4.dt

        np.testing.assert_allclose(np.abs(batch.brownian), np.sqrt(dt))
        self.assertTrue(set(np.unique(batch.jump_counts)).issubset({0, 1}))
        self.assertLessEqual(int(batch.switches.sum(axis=(2, 3)).max()), 1)
        np.testing.assert_allclose(batch.occupation.sum(axis=2), dt)
        again = TreeNoiseSampler(self.tree, 3).sample(range(200))
        np.testing.assert_array_equal(batch.states, again.states)


class TestBackwardOracle(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_oracle")
        cls.tree = build_tree(ASYMMETRIC, ONE_MARK, DEPTH_4, 0)


    def _log_report(self, report, test_name):
        self.logger.info(f"[{test_name}]\n{json.dumps(report.to_dict(), ensure_ascii=False, indent=2)}")


    def test_zero_driver_gap_vanishes(self):
        report = duality_gap(self.tree, LinearABSDEData(n_regimes=2), MIXED_TERMINAL)
        self._log_report(report, "Zero driver gap")

        self.assertLessEqual(report.gap, 1e-12)
        self.assertAlmostEqual(report.y_backward, 1.0, places=12)
        self.assertEqual(sorted(report.to_dict()), ["K", "dt", "gap", "paths", "y_backward", "y_forward"])


    def test_mixed_model_gap_is_finite(self):
        report = duality_gap(self.tree, mixed_data(), MIXED_TERMINAL)
        self._log_report(report, "Mixed model gap, depth 4")

        self.assertTrue(math.isfinite(report.gap))
        self.assertEqual(report.K, 4)
        self.assertEqual(report.paths, 8 ** 4)
        self.assertAlmostEqual(report.dt, 0.25)
        for y in (report.y_forward, report.y_backward):
            self.assertGreater(y, 0.5)
            self.assertLess(y, 3.0)


    def test_running_term_is_exact_on_both_sides(self):
        data = LinearABSDEData(l=constant(0.5), n_regimes=2)
        report = duality_gap(self.tree, data, TerminalData.constant(2.0))

        self.assertAlmostEqual(report.y_forward, 2.0 + 0.5 * 0.75, places=12)
        self.assertAlmostEqual(report.y_backward, 2.0 + 0.5 * 0.75, places=12)


    def test_projection_residuals_vanish(self):
        solution = solve_absde_backward(self.tree, mixed_data(), MIXED_TERMINAL)

        self.assertEqual(solution.terminal_level, 3)
        for residual in solution.orthogonality_residuals():
            self.assertLessEqual(residual, 1e-12)


    def test_forward_sum_is_linear_in_terminal_data(self):
        data = mixed_data(l=0.0)
        first = MIXED_TERMINAL
        second = TerminalData(xi=lambda t: 1.0 + t, psi=lambda t: -0.2, zeta=lambda t, z: 0.3, vartheta=lambda t: np.array([0.0, 0.4]))

        combined = evaluate_duality_on_tree(data, first.scaled_sum(2.0, second, -0.5), self.tree)
        separate = 2.0 * evaluate_duality_on_tree(data, first, self.tree) - 0.5 * evaluate_duality_on_tree(data, second, self.tree)
        self.assertAlmostEqual(combined, separate, places=12)


    def test_constant_rate_matches_implicit_euler(self):
        r = 0.4
        data = LinearABSDEData(b=constant(r), n_regimes=2)
        solution = solve_absde_backward(self.tree, data, TerminalData.constant(1.0))
        forward = evaluate_duality_on_tree(data, TerminalData.constant(1.0), self.tree)

        self.assertAlmostEqual(solution.y0, (1.0 - r * 0.25) ** -3, places=12)
        self.assertAlmostEqual(forward, (1.0 + r * 0.25) ** 3, places=10)
        for level in solution.Y:
            np.testing.assert_allclose(level, level[0], rtol=1e-13)


    def test_volatility_alone_leaves_z_at_zero(self):
        data = LinearABSDEData(sigma=constant(0.3), n_regimes=2)
        solution = solve_absde_backward(self.tree, data, TerminalData.constant(1.0))

        self.assertAlmostEqual(solution.y0, 1.0, places=12)
        for k, z in enumerate(solution.Z):
            self.assertLessEqual(float(np.max(np.abs(z))), 1e-13, f"level {k}")


    def test_without_anticipation_reduces_to_a_plain_backward_step(self):
        anticipated = LinearABSDEData(b=constant(0.2), b_bar=constant(0.3), n_regimes=2)
        plain = LinearABSDEData(b=constant(0.5), n_regimes=2)
        solution = solve_absde_backward(self.tree, anticipated, TerminalData.constant(1.0), m=0)
        reference = solve_absde_backward(self.tree, plain, TerminalData.constant(1.0), m=0)

        self.assertEqual(solution.terminal_level, 4)
        self.assertAlmostEqual(solution.y0, (1.0 - 0.5 * 0.25) ** -4, places=12)
        self.assertAlmostEqual(solution.y0, reference.y0, places=14)
        for residual in solution.orthogonality_residuals():
            self.assertLessEqual(residual, 1e-12)


    def test_mixed_scenario_gap_shrinks_at_first_order(self):
        config = load_config(os.path.join(SCENARIOS, "mixed_model.yaml"))
        reports = []
        for depth in (4, 8):
            tree = build_tree(config.chain_spec, config.jump_spec, tree_grid(config, depth), config.initial_state)
            reports.append(duality_gap(tree, config.linear, config.terminal))
        ratio = reports[1].gap / reports[0].gap
        self.logger.info(f"[Mixed scenario gap ratio]\n{json.dumps({'reports': [r.to_dict() for r in reports], 'ratio': ratio}, ensure_ascii=False, indent=2)}")

        self.assertGreater(reports[1].gap, 0.0)
        self.assertGreaterEqual(ratio, 0.3)
        self.assertLessEqual(ratio, 0.7)


    def test_anticipation_must_leave_a_horizon(self):
        with self.assertRaises(InvalidArgumentError):
            evaluate_duality_on_tree(mixed_data(), MIXED_TERMINAL, self.tree, m=0)
        with self.assertRaises(InvalidArgumentError):
            solve_absde_backward(self.tree, mixed_data(), MIXED_TERMINAL, m=4)


if __name__ == "__main__":
    unittest.main()
