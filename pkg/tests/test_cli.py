import os
import sys
import unittest
import logging
import json
import tempfile

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config.scenario_config import load_config
from src.main import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_RESOURCE,
    EXIT_VALIDATION,
    main,
    run_command,
    tree_grid,
)


SCENARIOS = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'config', 'scenarios'))
MIXED = os.path.join(SCENARIOS, "mixed_model.yaml")
ZERO_DRIVER = os.path.join(SCENARIOS, "zero_driver.yaml")

EXPLODING = """
chain:
  generator: [[0.0]]
grid:
  T: 1.0
  K: 8
model:
  sdde:
    x0: 1.0
    b: {preset: linear-in-x, slope: 1.0e+300}
run:
  n_paths: 4
  seed: 0
"""


class TestCommandLine(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        logging.basicConfig(level=logging.INFO)
        cls.logger = logging.getLogger("tests.test_cli")


    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()


    def tearDown(self):
        self.tmp.cleanup()


    def _out(self, name):
        return os.path.join(self.tmp.name, name)


    def _load_json(self, path):
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
        self.logger.info(f"[{os.path.basename(path)}]\n{json.dumps(document, ensure_ascii=False, indent=2)}")
        return document


    def _tree(self, root):
        contents = {}
        for name in sorted(os.listdir(root)):
            with open(os.path.join(root, name), "rb") as f:
                contents[name] = f.read()
        return contents


    def test_invalid_generator_exits_with_validation_status(self):
        status = main(["validate", "--config", os.path.join(SCENARIOS, "invalid_generator.yaml"), "--out", self._out("v")])

        self.assertEqual(status, EXIT_VALIDATION)
        self.assertFalse(os.path.exists(self._out("v")))


    def test_zero_driver_duality(self):
        status = main(["duality", "--config", ZERO_DRIVER, "--out", self._out("d")])
        document = self._load_json(os.path.join(self._out("d"), "zero_duality.json"))

        self.assertEqual(status, EXIT_OK)
        self.assertEqual(document["y"], 1.0)
        self.assertEqual(document["se"], 0.0)
        self.assertEqual(document["n_paths"], 1000)
        self.assertEqual(document["config_digest"], load_config(ZERO_DRIVER).digest)


    def test_oracle_gap_at_depth_four(self):
        status = main(["oracle-gap", "--config", MIXED, "--grid-k", "4", "--out", self._out("o")])
        document = self._load_json(os.path.join(self._out("o"), "mixed_oracle_gap_K4.json"))

        self.assertEqual(status, EXIT_OK)
        self.assertEqual(document["K"], 4)
        self.assertEqual(document["paths"], 8 ** 4)
        self.assertGreaterEqual(document["gap"], 0.0)


    def test_tree_depth_must_place_delta_on_a_node(self):
        config = load_config(MIXED)

        self.assertEqual((tree_grid(config).K, tree_grid(config).m), (4, 1))
        self.assertEqual(tree_grid(config, 8).m, 2)
        self.assertEqual(main(["oracle-gap", "--config", MIXED, "--grid-k", "6", "--out", self._out("o6")]), EXIT_VALIDATION)


    def test_outputs_do_not_depend_on_workers(self):
        for workers in ("1", "8"):
            out = self._out(f"w{workers}")
            for command in ("simulate", "check-ito", "duality"):
                status = main([command, "--config", MIXED, "--paths", "64", "--workers", workers, "--out", out])
                self.assertEqual(status, EXIT_OK)

        serial, threaded = self._tree(self._out("w1")), self._tree(self._out("w8"))
        self.assertEqual(sorted(serial), sorted(threaded))
        self.assertIn("mixed_ito_residuals.csv", serial)
        for name in serial:
            self.assertEqual(serial[name], threaded[name], name)


    def test_seed_override_changes_results(self):
        main(["simulate", "--config", MIXED, "--paths", "32", "--seed", "1", "--out", self._out("s1")])
        main(["simulate", "--config", MIXED, "--paths", "32", "--seed", "2", "--out", self._out("s2")])

        first = self._load_json(os.path.join(self._out("s1"), "mixed_simulate.json"))
        second = self._load_json(os.path.join(self._out("s2"), "mixed_simulate.json"))
        self.assertEqual(first["seed"], 1)
        self.assertNotEqual(first["terminal_mean"], second["terminal_mean"])


    def test_exit_status_mapping(self):
        path = self._out("exploding.yaml")
        with open(path, "w") as f:
            f.write(EXPLODING)
        exploding = load_config(path).with_overrides(out=self._out("e"))
        mixed = load_config(MIXED).with_overrides(out=self._out("m"))

        self.assertEqual(run_command("simulate", exploding), EXIT_NUMERICAL)
        self.assertEqual(run_command("oracle-gap", mixed, tree_depth=12), EXIT_RESOURCE)
        self.assertEqual(run_command("unknown", mixed), EXIT_VALIDATION)
        self.assertEqual(main(["simulate", "--config", MIXED, "--paths", "0"]), EXIT_VALIDATION)


if __name__ == "__main__":
    unittest.main()
