"""
CSV output utility.

This module writes the CSV traces and tables of reactive_avatar. Every
file starts with `# key = value` provenance lines followed by a header row.
"""

import csv
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from ..core.errors import ArtifactIOError


def format_value(value: Any) -> str:
    """Render floats with a fixed repr so files are byte-stable across runs."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(
    path: Union[str, Path],
    fieldnames: Sequence[str],
    rows: Sequence[Mapping[str, Any]],
    provenance: Optional[Mapping[str, object]] = None,
) -> None:
    """
    Write rows as CSV with leading provenance comments.

    Raises:
        ArtifactIOError: If the file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            for key, value in (provenance or {}).items():
                f.write(f"# {key} = {value}\n")
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: format_value(row.get(k, "")) for k in fieldnames})
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}") from e


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a CSV written by `write_csv`, skipping provenance lines."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as f:
            lines = [line for line in f if not line.startswith("#")]
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}") from e
    return list(csv.DictReader(lines))


def read_provenance(path: Union[str, Path]) -> Dict[str, str]:
    """Return the `# key = value` lines at the top of a CSV file."""
    values: Dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(" = ")
            values[key] = value
    return values
