"""
Key = value file utility.

This module reads and writes the plain-text `key = value` format used for
run configurations, model headers and artifact sidecars, and reads
boolean flags from the environment.
"""

import os
from pathlib import Path
from typing import Dict, Mapping, Optional, Union


def parse_kv_text(text: str, source: str = "<text>") -> Dict[str, str]:
    """
    Parse `key = value` lines.

    Blank lines and lines starting with '#' are skipped; a trailing
    ' #' comment is stripped. Surrounding quotes on values are removed.

    Args:
        text: The file contents.
        source: Name used in error messages.

    Returns:
        Ordered mapping of keys to raw string values.

    Raises:
        ValueError: On a line without '=' or a repeated key.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " #" in line:
            line = line.split(" #", 1)[0].rstrip()
        if "=" not in line:
            raise ValueError(f"{source}:{number}: expected 'key = value', got '{raw}'")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if (value.startswith('"') and value.endswith('"')) or (
            value.startswith("'") and value.endswith("'")
        ):
            value = value[1:-1]
        if not key:
            raise ValueError(f"{source}:{number}: empty key")
        if key in values:
            raise ValueError(f"{source}:{number}: duplicate key '{key}'")
        values[key] = value
    return values


def load_kv_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Load a `key = value` file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the file is malformed.
    """
    path = Path(path)
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def dump_kv(values: Mapping[str, object]) -> str:
    """Render a mapping as `key = value` lines in the given order."""
    return "".join(f"{key} = {value}\n" for key, value in values.items())


def get_env_flag(key: str, default: bool = False) -> bool:
    """
    Read a boolean flag from the environment.

    Args:
        key: Environment variable name.
        default: Value when the variable is unset.

    Returns:
        True for "1", "true", "yes" or "on" (any case).
    """
    value: Optional[str] = os.environ.get(key)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")
