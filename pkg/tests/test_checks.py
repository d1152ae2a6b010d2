import os
import sys
import unittest
import logging
import json

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.checks.ito_checks import (
    ITO_TERMS,
    ResidualSummary,
    ItoTestFunction,
    convergence_ratios,
    ito_decomposition,
    ito_residual,
    product_rule_residual,
    residual_table,
)
from src.errors import InvalidArgumentError
from src.noise.jump_measure import JumpSpec
from src.noise.noise_bundle import ExactNoiseSampler, sample_noise
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid
from src.sdde.coefficients import DelayFunctions, InitialPath, SDDECoefficients
from src.sdde.path_engine import coefficient_stream, simulate_sdde


SINGLE = RegimeChainSpec(np.array([[0.0]]))
ASYMMETRIC = RegimeChainSpec(np.array([[-1.0, 1.0], [2.0, -2.0]]))
ONE_MARK = JumpSpec(0.5, (0.5,), (1.0,))


def zero(*args):
    return 0.0


def mixed_coefficients() -> SDDECoefficients:
    return SDDECoefficients(
        drift=lambda t, x, y, r: 0.3 * x - 0.2 * y,
        diffusion=lambda t, x, y, r: np.where(r == 0, 0.2, 0.4) * x,
        jump=lambda t, x, y, r, z: 0.1 * x,
        switching=lambda t, x, y, r: (np.where(r == 0, 0.1, -0.2) * x)[:, None],
        lipschitz_C=1.0,
        n_regimes=2,
    )


def simulate_with_stream(coeffs, chain, jumps, grid, n_paths, seed, x0=1.0, delta=0.0):
    noise = sample_noise(ExactNoiseSampler(chain, jumps, grid, 0, seed), n_paths)
    delays = DelayFunctions.constant(delta)
    ensemble = simulate_sdde(coeffs, InitialPath.constant(x0), delays, grid, noise)
    return ensemble, coefficient_stream(coeffs, ensemble, noise, delays), noise


class TestItoTestFunctions(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_checks")


    def test_builtin_derivatives_pass(self):
        for phi in (ItoTestFunction.identity(), ItoTestFunction.square(), ItoTestFunction.regime_indicator([1.0, -2.0])):
            worst = phi.verify_derivatives(2)
            self.logger.info(f"[{phi.name}] {json.dumps(worst)}")
            self.assertLessEqual(max(worst.values()), 1e-6)


    def test_wrong_derivative_is_rejected(self):
        cube = ItoTestFunction(lambda t, y, r: y ** 3, dy=lambda t, y, r: 2.0 * y ** 2, name="bad-cube")

        with self.assertRaises(InvalidArgumentError):
            cube.verify_derivatives(1)


class TestItoResidual(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_checks")
        cls.grid = TimeGrid(0.0, 0.75, 24, 8)
        cls.ensemble, cls.stream, cls.noise = simulate_with_stream(
            mixed_coefficients(), ASYMMETRIC, ONE_MARK, cls.grid, 300, seed=13, delta=0.25
        )


    def _log_summary(self, summaries, test_name):
        payload = {"table": residual_table(summaries), "ratios": convergence_ratios(summaries)}
        self.logger.info(f"[{test_name}]\n{json.dumps(payload, ensure_ascii=False, indent=2)}")


    def test_identity_collapses_to_the_scheme(self):
        residual = ito_residual(ItoTestFunction.identity(), self.ensemble, self.stream, self.noise)

        np.testing.assert_allclose(residual, 0.0, atol=1e-12)


    def test_decomposition_lists_every_term(self):
        decomposition = ito_decomposition(ItoTestFunction.square(), self.ensemble, self.stream, self.noise)

        self.assertEqual(sorted(decomposition.terms), sorted(ITO_TERMS))
        np.testing.assert_allclose(decomposition.residual, decomposition.lhs - decomposition.rhs)


    def test_residual_is_linear_in_phi(self):
        square, identity = ItoTestFunction.square(), ItoTestFunction.identity()
        mixed = square.combine(2.0, identity, -3.0)

        combined = ito_residual(mixed, self.ensemble, self.stream, self.noise)
        separate = 2.0 * ito_residual(square, self.ensemble, self.stream, self.noise) - 3.0 * ito_residual(identity, self.ensemble, self.stream, self.noise)
        np.testing.assert_allclose(combined, separate, atol=1e-12)


    def test_product_rule_with_itself_equals_square_residual(self):
        product = product_rule_residual(self.ensemble, self.stream, self.ensemble, self.stream, self.noise)
        square = ito_residual(ItoTestFunction.square(), self.ensemble, self.stream, self.noise)

        np.testing.assert_allclose(product, square, rtol=0, atol=1e-12)


    def test_product_with_the_unit_path_telescopes(self):
        unit_coeffs = SDDECoefficients.zero(2)
        delays = DelayFunctions.constant(0.25)
        unit = simulate_sdde(unit_coeffs, InitialPath.constant(1.0), delays, self.grid, self.noise)
        unit_stream = coefficient_stream(unit_coeffs, unit, self.noise, delays)

        residual = product_rule_residual(self.ensemble, self.stream, unit, unit_stream, self.noise)
        np.testing.assert_allclose(residual, 0.0, atol=1e-12)


    def test_switch_terms_isolated_by_a_regime_indicator(self):
        grid = TimeGrid(0.0, 1.0, 8)
        ensemble, stream, noise = simulate_with_stream(SDDECoefficients.zero(2), ASYMMETRIC, JumpSpec.none(), grid, 4000, seed=31)
        decomposition = ito_decomposition(ItoTestFunction.regime_indicator([1.0, -2.0]), ensemble, stream, noise)

        for name in ITO_TERMS:
            if name not in ("switch_compensator", "switch_martingale"):
                np.testing.assert_array_equal(decomposition.terms[name], 0.0)
        np.testing.assert_allclose(decomposition.residual, 0.0, atol=1e-12)

        martingale = decomposition.terms["switch_martingale"]
        summary = ResidualSummary.of(martingale, grid.dt)
        self._log_summary([summary], "Switch martingale term")
        self.assertLessEqual(summary.mean_abs_residual, 3 * summary.se)


    def test_square_residual_converges_at_first_order(self):
        coeffs = SDDECoefficients(lambda t, x, y, r: 1.0 * x, lambda t, x, y, r: 0.3 * x, zero, zero, lipschitz_C=1.0)
        summaries = []
        for K in (32, 64, 128):
            grid = TimeGrid(0.0, 1.0, K)
            ensemble, stream, noise = simulate_with_stream(coeffs, SINGLE, JumpSpec.none(), grid, 2000, seed=K)
            summaries.append(ResidualSummary.of(ito_residual(ItoTestFunction.square(), ensemble, stream, noise), grid.dt))
        self._log_summary(summaries, "Square residual, pure diffusion")

        for ratio in convergence_ratios(summaries):
            self.assertGreaterEqual(ratio, 0.35)
            self.assertLessEqual(ratio, 0.65)


    def test_deterministic_product_residual_halves(self):
        coeffs = SDDECoefficients(lambda t, x, y, r: 1.0, zero, zero, zero, lipschitz_C=1.0)
        residuals = []
        for K in (16, 32):
            grid = TimeGrid(0.0, 1.0, K)
            ensemble, stream, noise = simulate_with_stream(coeffs, SINGLE, JumpSpec.none(), grid, 1, seed=0)
            residuals.append(float(product_rule_residual(ensemble, stream, ensemble, stream, noise)[0]))

        # Sum of (dt)^2 over K cells.
        self.assertAlmostEqual(residuals[0], 1.0 / 16, places=12)
        self.assertAlmostEqual(residuals[1] / residuals[0], 0.5, places=10)


    def test_summary_rows(self):
        summary = ResidualSummary.of(np.array([1.0, -3.0, 2.0, 4.0]), 0.125)

        self.assertEqual(summary.mean_abs_residual, 1.0)
        self.assertEqual(summary.n_paths, 4)
        self.assertEqual(list(summary.to_dict()), ["dt", "mean_abs_residual", "se", "n_paths"])


if __name__ == "__main__":
    unittest.main()
