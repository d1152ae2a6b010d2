from typing import Callable, Dict, List, Union
import numbers

import numpy as np

from src.errors import ConfigError

SDDE_PRESETS = ("constant", "linear-in-x", "linear-in-lag", "regime-table")
LINEAR_PRESETS = ("constant", "regime-table")

# Slot kinds: scalar b/sigma, mark eta (also receives z), vector gamma (one component per regime).
SCALAR, MARK, VECTOR = "scalar", "mark", "vector"


def _is_number(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def per_regime(value, D: int, key_path: str) -> np.ndarray:
    """A number (same in every regime) or a list with one number per regime."""
    if _is_number(value):
        return np.full(D, float(value))
    if isinstance(value, list) and all(_is_number(v) for v in value):
        if len(value) != D:
            raise ConfigError(f"{key_path}: expected {D} per-regime values, got {len(value)}")
        return np.array(value, dtype=float)
    raise ConfigError(f"{key_path}: expected a number or a list of {D} numbers, got {value!r}")


def _terms(spec, key_path: str) -> List[Dict]:
    if _is_number(spec):
        return [{"preset": "constant", "value": spec}]
    if isinstance(spec, dict):
        return [spec]
    if isinstance(spec, list) and spec and all(isinstance(s, dict) for s in spec):
        return spec
    raise ConfigError(f"{key_path}: a coefficient is a number, a preset mapping or a list of preset mappings, got {spec!r}")


def _parameter(term: Dict, name: str, key_path: str):
    if name not in term:
        raise ConfigError(f"{key_path}: preset '{term['preset']}' needs '{name}'")
    return term[name]


def _check_keys(term: Dict, allowed, key_path: str) -> None:
    unknown = sorted(set(term) - set(allowed) - {"preset"})
    if unknown:
        raise ConfigError(f"{key_path}: unknown key '{unknown[0]}' for preset '{term['preset']}'")


def _sdde_term(term: Dict, D: int, key_path: str) -> Callable:
    """(t, x, y, regime) -> (N,) for one preset term."""
    name = term.get("preset")
    if name == "constant":
        _check_keys(term, ("value",), key_path)
        table = per_regime(_parameter(term, "value", key_path), D, f"{key_path}.value")
        return lambda t, x, y, regime: table[regime]
    if name == "linear-in-x":
        _check_keys(term, ("slope",), key_path)
        table = per_regime(_parameter(term, "slope", key_path), D, f"{key_path}.slope")
        return lambda t, x, y, regime: table[regime] * x
    if name == "linear-in-lag":
        _check_keys(term, ("slope",), key_path)
        table = per_regime(_parameter(term, "slope", key_path), D, f"{key_path}.slope")
        return lambda t, x, y, regime: table[regime] * y
    if name == "regime-table":
        _check_keys(term, ("values",), key_path)
        values = _parameter(term, "values", key_path)
        if not isinstance(values, list):
            raise ConfigError(f"{key_path}.values: regime-table needs a list of {D} numbers")
        table = per_regime(values, D, f"{key_path}.values")
        return lambda t, x, y, regime: table[regime]
    raise ConfigError(f"{key_path}: unknown preset '{name}' (known: {', '.join(SDDE_PRESETS)})")


def sdde_coefficient(spec, D: int, kind: str, key_path: str) -> Callable:
    """Resolve a coefficient slot of the delayed equation to a vectorized callback."""
    parts = [_sdde_term(term, D, f"{key_path}[{n}]" if isinstance(spec, list) else key_path) for n, term in enumerate(_terms(spec, key_path))]

    def scalar(t, x, y, regime):
        regime = np.asarray(regime, dtype=np.int64)
        return sum(part(t, x, y, regime) for part in parts)

    if kind == SCALAR:
        return scalar
    if kind == MARK:
        return lambda t, x, y, regime, z: scalar(t, x, y, regime)
    if kind == VECTOR:
        # Same value in every component j.
        return lambda t, x, y, regime: np.asarray(scalar(t, x, y, regime), dtype=float)[:, None]
    raise ValueError(f"unknown coefficient kind {kind}")


def _linear_term(term: Dict, D: int, key_path: str) -> np.ndarray:
    name = term.get("preset")
    if name == "constant":
        _check_keys(term, ("value",), key_path)
        return per_regime(_parameter(term, "value", key_path), D, f"{key_path}.value")
    if name == "regime-table":
        _check_keys(term, ("values",), key_path)
        values = _parameter(term, "values", key_path)
        if not isinstance(values, list):
            raise ConfigError(f"{key_path}.values: regime-table needs a list of {D} numbers")
        return per_regime(values, D, f"{key_path}.values")
    raise ConfigError(f"{key_path}: linear data accept only the presets {', '.join(LINEAR_PRESETS)}, got '{name}'")


def linear_coefficient(spec, D: int, kind: str, key_path: str) -> Callable:
    """Resolve a linear driver slot to a (t, regime[, z]) callback; the value depends on the regime only."""
    table = sum(
        (_linear_term(term, D, f"{key_path}[{n}]" if isinstance(spec, list) else key_path) for n, term in enumerate(_terms(spec, key_path))),
        np.zeros(D),
    )
    if kind == SCALAR:
        return lambda t, regime: table[np.asarray(regime, dtype=np.int64)]
    if kind == MARK:
        return lambda t, regime, z: table[np.asarray(regime, dtype=np.int64)]
    if kind == VECTOR:
        return lambda t, regime: table[np.asarray(regime, dtype=np.int64)][:, None]
    raise ValueError(f"unknown coefficient kind {kind}")


def vector_value(value: Union[float, List[float]], D: int, key_path: str) -> np.ndarray:
    """A number broadcast to D components, or an explicit list of D numbers."""
    return per_regime(value, D, key_path)
