"""Handy utility functions"""

import json
import logging
import os
import os.path
from pathlib import Path
from typing import Any, Optional

import numpy as np

logger = logging.getLogger(__package__)

THREADS_ENV_VAR = "GRASPGEN_THREADS"

# Flag so application code can detect if within a pytest run - only use if really needed
# See: https://pytest.org/en/7.4.x/example/simple.html#detect-if-running-from-within-a-pytest-run
called_from_test = False  # pylint: disable=invalid-name


def load_dict_from_json(filename: str | Path) -> Optional[dict[str, Any]]:
    """If file exists, attempt to load into dict.

    Args:
        filename: Name of JSON file to load.

    Returns:
        Dictionary if loaded successfully, or None.
    """
    if os.path.isfile(filename):
        with open(filename, "r", encoding="utf-8") as fp:
            try:
                loaded = json.load(fp)
            except json.decoder.JSONDecodeError as exc:
                logger.error(
                    f"Unable to load {filename} -- not valid JSON format\n" + str(exc)
                )
                return None
        if isinstance(loaded, dict):
            return loaded
        logger.error(f"Unable to load {filename} -- top level is not an object")
    return None


def dumps_stable(data: Any) -> str:
    """Serialize to JSON text that is byte-stable for equal data.

    Keys are sorted and the layout fixed, so that two runs producing the
    same values produce identical files.

    Args:
        data: JSON-compatible data.

    Returns:
        JSON text, terminated by a newline.
    """
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def save_dict_to_json(filename: str | Path, data: Any) -> None:
    """Save data to a JSON file using the byte-stable layout.

    Args:
        filename: Name of file to write; parent directories are created.
        data: JSON-compatible data.
    """
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(dumps_stable(data))


def sing_plur(count: int, singular: str, plural: str = "") -> str:
    """Return singular/plural phrase depending on count.

    Args:
        count: Number of items.
        singular: Singular version of item name.
        plural: Plural version of item name (default - add `s` to singular).

    Examples:
        sing_plur(1, "finger") -> "1 finger"
        sing_plur(2, "design") -> "2 designs"
        sing_plur(3, "phalanx", "phalanges") -> "3 phalanges"
    """
    if count == 1:
        word = singular
    elif plural == "":
        word = singular + "s"
    else:
        word = plural
    return f"{count} {word}"


def worker_count() -> int:
    """Return the number of worker processes available for evaluation.

    Capped by the `GRASPGEN_THREADS` environment variable, defaulting to the
    hardware parallelism. Always 1 when running under pytest.
    """
    if called_from_test:
        return 1
    default = os.cpu_count() or 1
    value = os.environ.get(THREADS_ENV_VAR, "")
    if not value:
        return default
    try:
        requested = int(value)
    except ValueError:
        logger.warning(f"{THREADS_ENV_VAR}='{value}' is not an integer - ignored")
        return default
    return max(1, requested)


def new_rng(seed: int) -> np.random.Generator:
    """Return a seeded generator using the PCG64 bit generator.

    PCG64 is fully specified by its seed, so streams are identical across
    platforms and numpy versions that keep the algorithm.

    Args:
        seed: Non-negative seed.
    """
    return np.random.Generator(np.random.PCG64(seed))


def fmt_float(value: float, digits: int = 9) -> str:
    """Format a float for CSV output so that equal values print identically.

    Args:
        value: Value to format.
        digits: Significant digits kept.
    """
    return f"{value:.{digits}g}"


class ConfigError(Exception):
    """Raised when a configuration value is invalid.

    Attributes:
        field: Dotted path of the offending key, e.g. `sim.step_s`.
        message: What is wrong with it.
    """

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)
