import json
from typing import Any, Dict, List

import numpy as np
from aws_lambda_powertools import Logger
from numpy.typing import NDArray
from utils.errors import ConfigError

logger = Logger()

FOURIER_MODES = 8


def format_number(value: float) -> str:
    """All numeric output uses 17 significant digits."""
    return f"{float(value):.17g}"


def get_nested_value(obj: Dict[str, Any], path: List[str], default: Any = None) -> Any:
    try:
        current: Any = obj
        for key in path:
            if current is None:
                return default
            if isinstance(current, list):
                current = current[int(key)]
            else:
                current = current.get(key)
        return current if current is not None else default
    except (KeyError, TypeError, AttributeError, IndexError, ValueError):
        return default


def set_nested_value(obj: Dict[str, Any], path: List[str], value: Any) -> None:
    current: Any = obj
    for depth, key in enumerate(path):
        last = depth == len(path) - 1
        if isinstance(current, list):
            try:
                index = int(key)
                if last:
                    current[index] = value
                else:
                    current = current[index]
            except (ValueError, IndexError):
                raise ConfigError("Invalid list index", key=".".join(path[: depth + 1])) from None
            continue
        if not isinstance(current, dict):
            raise ConfigError("Cannot descend into a scalar value", key=".".join(path[:depth]))
        if last:
            current[key] = value
        else:
            current = current.setdefault(key, {})


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_dotted_config(text: str) -> Dict[str, Any]:
    """Parse ``dotted.key = value`` lines into a nested mapping.

    Blank lines and ``#`` comments are skipped; values are JSON when they parse as JSON, bare strings otherwise.
    """
    nested: Dict[str, Any] = {}
    seen: Dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("Expected 'key = value'", line=number)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError("Empty key segment", line=number)
        if key in seen:
            raise ConfigError(f"Duplicate key, first set on line {seen[key]}", line=number, key=key)
        seen[key] = number
        try:
            set_nested_value(nested, key.split("."), parse_value(raw))
        except ConfigError as e:
            raise ConfigError(str(e), line=number, key=key) from e
    if not nested:
        raise ConfigError("Configuration is empty")
    logger.debug(f"Parsed {len(seen)} configuration keys")
    return nested


def random_fourier_trace(
    loop_parameter: NDArray[np.float64],
    perimeter: float,
    rng: np.random.Generator,
    modes: int = FOURIER_MODES,
) -> NDArray[np.float64]:
    """Smooth random boundary data: truncated Fourier series in the loop parameter, coefficients ~ N(0,1)/(1+k^2)."""
    theta = 2.0 * np.pi * loop_parameter / perimeter
    values = np.full_like(theta, rng.standard_normal())
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2) / (1.0 + k * k)
        values += a * np.cos(k * theta) + b * np.sin(k * theta)
    return values
