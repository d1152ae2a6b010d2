from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional
import copy
import hashlib
import logging
import numbers
import os

import numpy as np
import yaml

from src.duality.linear_data import LinearABSDEData, TerminalData
from src.errors import ConfigError
from src.noise.jump_measure import JumpSpec
from src.noise.regime_chain import RegimeChainSpec
from src.noise.time_grid import TimeGrid
from src.sdde.coefficients import DelayFunctions, InitialPath, SDDECoefficients
from .presets import MARK, SCALAR, VECTOR, linear_coefficient, sdde_coefficient, vector_value

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "..", "..", "config", "schema.yaml")


def _is_number(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _type_ok(value, expected: str) -> bool:
    if expected == "number":
        return _is_number(value)
    if expected == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if expected == "string":
        return isinstance(value, str)
    if expected == "list":
        return isinstance(value, list)
    if expected == "mapping":
        return isinstance(value, dict)
    if expected == "matrix":
        return isinstance(value, list) and bool(value) and all(isinstance(row, list) and all(_is_number(v) for v in row) for row in value)
    if expected == "vector":
        return _is_number(value) or (isinstance(value, list) and all(_is_number(v) for v in value))
    if expected in ("coefficient", "linear-coefficient"):
        return _is_number(value) or isinstance(value, dict) or (isinstance(value, list) and all(isinstance(v, dict) for v in value))
    raise ConfigError(f"schema uses unknown type '{expected}'")


def validate_against_schema(node: Dict, schema: Dict, path: str = "") -> Dict:
    """Check a mapping against its schema section and fill defaults; errors name the key path."""
    if not isinstance(node, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(node).__name__}")
    result = {}
    for key in node:
        if key not in schema:
            raise ConfigError(f"unknown key '{path}{key}'")
    for key, rules in schema.items():
        key_path = f"{path}{key}"
        if key not in node or node[key] is None:
            if rules.get("required", False):
                raise ConfigError(f"missing required key '{key_path}'")
            value = copy.deepcopy(rules.get("default"))
        else:
            value = node[key]
            if not _type_ok(value, rules["type"]):
                raise ConfigError(f"'{key_path}' must be of type {rules['type']}, got {value!r}")
            if "choices" in rules and value not in rules["choices"]:
                raise ConfigError(f"'{key_path}' must be one of {rules['choices']}, got {value!r}")
        if rules["type"] == "mapping" and "keys" in rules:
            value = validate_against_schema(value or {}, rules["keys"], f"{key_path}.")
        result[key] = value
    return result


def load_schema(schema_path: str = DEFAULT_SCHEMA_PATH) -> Dict:
    if not os.path.exists(schema_path):
        raise FileNotFoundError(f"Schema file not found: {schema_path}")
    with open(schema_path, "r") as f:
        return yaml.safe_load(f)


@dataclass(frozen=True)
class RunSettings:
    n_paths: int
    seed: int
    workers: int = 1
    batch_size: int = 4096
    tolerance: float = 1e-8
    max_iter: int = 50


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "output"
    prefix: str = "run"
    formats: List[str] = field(default_factory=lambda: ["json", "csv"])
    path_files: int = 5


@dataclass(frozen=True)
class CheckSettings:
    phi: str = "square"
    phi_values: List[float] = field(default_factory=list)
    levels: List[int] = field(default_factory=list)
    product_with: str = "self"


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Validated scenario: model objects built from the raw YAML, plus the digest of the file bytes."""
    raw: Dict[str, Any]
    digest: str
    source: str
    chain_spec: RegimeChainSpec
    initial_state: int
    jump_spec: JumpSpec
    grid: TimeGrid
    sdde: SDDECoefficients
    delays: DelayFunctions
    x0: InitialPath
    linear: LinearABSDEData
    terminal: TerminalData
    run: RunSettings
    output: OutputSettings
    checks: CheckSettings

    @property
    def D(self) -> int:
        return self.chain_spec.D

    def with_overrides(
        self,
        seed: Optional[int] = None,
        n_paths: Optional[int] = None,
        grid_k: Optional[int] = None,
        out: Optional[str] = None,
        workers: Optional[int] = None,
    ) -> "ScenarioConfig":
        """Command-line overrides; --grid-k rescales m so that delta stays fixed."""
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if n_paths is not None:
            run = replace(run, n_paths=int(n_paths))
        if workers is not None:
            run = replace(run, workers=int(workers))
        config = replace(self, run=run)
        if out is not None:
            config = replace(config, output=replace(config.output, dir=out))
        if grid_k is not None:
            grid = self.grid.with_steps(int(grid_k))
            config = replace(config, grid=grid, delays=_build_delays(config.raw["model"]["sdde"], grid))
        _check_run(config.run)
        return config


def _check_run(run: RunSettings) -> None:
    if run.n_paths < 1:
        raise ConfigError(f"'run.n_paths' must be positive, got {run.n_paths}")
    if run.seed < 0:
        raise ConfigError(f"'run.seed' must be nonnegative, got {run.seed}")
    if run.workers < 1 or run.batch_size < 1 or run.max_iter < 1:
        raise ConfigError("'run.workers', 'run.batch_size' and 'run.max_iter' must be positive")
    if not run.tolerance > 0:
        raise ConfigError(f"'run.tolerance' must be positive, got {run.tolerance}")


def _build_delays(sdde: Dict, grid: TimeGrid) -> DelayFunctions:
    if sdde["delay"] == "sinusoidal":
        return DelayFunctions.sinusoidal(grid.delta, L=sdde["delay_L"])
    return DelayFunctions.constant(grid.delta, L=sdde["delay_L"])


def _build_sdde(sdde: Dict, D: int) -> SDDECoefficients:
    return SDDECoefficients(
        drift=sdde_coefficient(sdde["b"], D, SCALAR, "model.sdde.b"),
        diffusion=sdde_coefficient(sdde["sigma"], D, SCALAR, "model.sdde.sigma"),
        jump=sdde_coefficient(sdde["eta"], D, MARK, "model.sdde.eta"),
        switching=sdde_coefficient(sdde["gamma"], D, VECTOR, "model.sdde.gamma"),
        lipschitz_C=sdde["lipschitz_C"],
        n_regimes=D,
    )


def _build_linear(linear: Dict, D: int) -> LinearABSDEData:
    kinds = {
        "b": SCALAR, "b_bar": SCALAR, "sigma": SCALAR, "sigma_bar": SCALAR,
        "eta": MARK, "eta_bar": MARK, "gamma": VECTOR, "gamma_bar": VECTOR, "l": SCALAR,
    }
    slots = {name: linear_coefficient(linear[name], D, kind, f"model.linear.{name}") for name, kind in kinds.items()}
    return LinearABSDEData(**slots, bound=linear["bound"], n_regimes=D)


def _build_terminal(terminal: Dict, D: int) -> TerminalData:
    vartheta = vector_value(terminal["vartheta"], D, "model.terminal.vartheta")
    return TerminalData.constant(terminal["xi"], terminal["psi"], terminal["zeta"], vartheta)


def _read_yaml(path: str) -> bytes:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        return f.read()


def load_config(path: str, schema_path: str = DEFAULT_SCHEMA_PATH) -> ScenarioConfig:
    content = _read_yaml(path)
    try:
        raw = yaml.safe_load(content)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else path
        problem = getattr(e, "problem", None) or str(e)
        logger.error(f"Could not parse {where}: {problem}")
        raise ConfigError(f"{where}: YAML parse error: {problem}") from e

    schema = load_schema(schema_path)
    raw = validate_against_schema(raw if raw is not None else {}, schema)
    chain_spec = RegimeChainSpec(np.array(raw["chain"]["generator"], dtype=float))
    D = chain_spec.D
    initial_state = raw["chain"]["initial_state"]
    if not 0 <= initial_state < D:
        raise ConfigError(f"'chain.initial_state' must lie in 0..{D - 1}, got {initial_state}")
    jumps = raw["jumps"]
    jump_spec = JumpSpec(jumps["rate"], tuple(jumps["marks"]), tuple(jumps["weights"]))
    grid = TimeGrid(float(raw["grid"]["t0"]), float(raw["grid"]["T"]), raw["grid"]["K"], raw["grid"]["m"])

    model = raw["model"]
    run = RunSettings(**raw["run"])
    _check_run(run)
    output = OutputSettings(**raw["output"])
    unknown_formats = sorted(set(output.formats) - {"json", "csv"})
    if unknown_formats:
        raise ConfigError(f"'output.formats' contains unknown format '{unknown_formats[0]}'")

    config = ScenarioConfig(
        raw=raw,
        digest=hashlib.sha256(content).hexdigest(),
        source=path,
        chain_spec=chain_spec,
        initial_state=initial_state,
        jump_spec=jump_spec,
        grid=grid,
        sdde=_build_sdde(model["sdde"], D),
        delays=_build_delays(model["sdde"], grid),
        x0=InitialPath.constant(float(model["sdde"]["x0"])),
        linear=_build_linear(model["linear"], D),
        terminal=_build_terminal(model["terminal"], D),
        run=run,
        output=output,
        checks=CheckSettings(**raw["checks"]),
    )
    logger.info(f"Loaded scenario {path}: D={D}, K={grid.K}, m={grid.m}, {run.n_paths} paths, seed {run.seed}.")
    return config
