# leaptt/utils.py

import hashlib
import json
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from leaptt.errors import ConfigError

Number = Union[int, float]


def validate_positive(name: str, value: Number, allow_zero: bool = False) -> Number:
    """
    Validates that a numeric config value is positive.

    Args:
        name: Field name, used in the error message
        value: The value to check
        allow_zero: Accept 0 as well

    Returns:
        The validated value

    Raises:
        ConfigError: If the value is not a number or not positive
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"must be a number, got: {type(value).__name__}")

    if allow_zero and value < 0:
        raise ConfigError(name, f"must be >= 0, got: {value}")
    if not allow_zero and value <= 0:
        raise ConfigError(name, f"must be > 0, got: {value}")

    return value


def validate_int(name: str, value: Any, minimum: Optional[int] = None) -> int:
    """
    Validates an integer config value with an optional lower bound.

    Raises:
        ConfigError: If the value is not an int or below the minimum
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(name, f"must be an integer, got: {type(value).__name__}")

    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got: {value}")

    return int(value)


def validate_probability(name: str, value: Number) -> float:
    """
    Validates that a value lies in the closed interval [0, 1].

    Raises:
        ConfigError: If the value is outside [0, 1]
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"must be a number, got: {type(value).__name__}")

    if not 0.0 <= value <= 1.0:
        raise ConfigError(name, f"must be in [0, 1], got: {value}")

    return float(value)


def validate_range(name: str, value: Sequence[int], low: int, high: int) -> tuple:
    """
    Validates an inclusive integer range given as a two-element sequence.

    Args:
        name: Field name
        value: (min, max) pair
        low: Smallest allowed min
        high: Largest allowed max

    Raises:
        ConfigError: If the pair is malformed or out of bounds
    """
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(name, f"must be a [min, max] pair, got: {value!r}")

    first, second = (validate_int(name, v) for v in value)
    if first > second:
        raise ConfigError(name, f"min exceeds max: {value!r}")
    if first < low or second > high:
        raise ConfigError(name, f"must lie within [{low}, {high}], got: {value!r}")

    return (first, second)


# ============================================================================
# Seeds and hashing
# ============================================================================


def derive_seed(global_seed: int, stage: str) -> int:
    """
    Derives an independent seed for one stochastic component.

    The result depends only on the global seed and the stage name, so changing
    one stage's settings never shifts another stage's random stream.

    Examples:
        >>> derive_seed(0, "ssl") == derive_seed(0, "ssl")
        True
        >>> derive_seed(0, "ssl") == derive_seed(0, "leap")
        False
    """
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(global_seed: int, stage: str) -> np.random.Generator:
    """Creates the numpy Generator for a stage."""
    return np.random.default_rng(derive_seed(global_seed, stage))


def canonical_json(data: Any) -> str:
    """Serializes data to a canonical JSON string (sorted keys, no whitespace)."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(payload: Union[bytes, str]) -> str:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def config_hash(config_dict: Dict[str, Any]) -> str:
    """Hash of a resolved configuration dictionary."""
    return sha256_hex(canonical_json(config_dict))


def dtype_for_profile(profile: str) -> np.dtype:
    """
    Maps a numeric profile name to its dtype.

    "test" profile runs in float64 (oracle tolerances need it), "fast" in float32.
    """
    if profile == "test":
        return np.dtype(np.float64)
    if profile == "fast":
        return np.dtype(np.float32)
    raise ConfigError("profile", f"must be 'test' or 'fast', got: {profile!r}")
