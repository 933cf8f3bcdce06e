"""
Metric report output.

Writes MetricReports as CSV (one row per labelled report) and as an
aligned text table with the metric columns in fixed order.
"""

import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

from ..core.errors import ArtifactIOError
from ..core.schema import MetricReport
from ..utils.csv_out import write_csv

PathLike = Union[str, Path]


def _cell(value: Optional[float], digits: int = 3) -> str:
    if value is None:
        return "-"
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{value:.{digits}f}"


def report_rows(
    reports: Mapping[str, Optional[MetricReport]], extra: Optional[Mapping[str, Mapping[str, float]]] = None
) -> List[Dict[str, object]]:
    """Flatten labelled reports into CSV rows; a None report becomes an absent row."""
    rows = []
    for label, report in reports.items():
        row: Dict[str, object] = {"label": label, "status": "ok" if report is not None else "absent"}
        if report is not None:
            row.update(report.values)
            row.update({"clips": report.clips, "failed_clips": report.failed_clips})
        if extra and label in extra:
            row.update(extra[label])
        rows.append(row)
    return rows


def write_report_csv(
    path: PathLike,
    reports: Mapping[str, Optional[MetricReport]],
    provenance: Optional[Mapping[str, object]] = None,
    extra_columns: Sequence[str] = (),
    extra: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> None:
    columns = ["label", "status", *MetricReport.COLUMNS, *extra_columns, "clips", "failed_clips"]
    write_csv(path, columns, report_rows(reports, extra), provenance)


def format_table(
    reports: Mapping[str, Optional[MetricReport]],
    extra_columns: Sequence[str] = (),
    extra: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> str:
    """Render labelled reports as an aligned text table."""
    columns = [*MetricReport.COLUMNS, *extra_columns]
    body = []
    for label, report in reports.items():
        cells = [label]
        for column in columns:
            value = None
            if report is not None and column in report.values:
                value = report.values[column]
            if extra and label in extra and column in extra[label]:
                value = extra[label][column]
            cells.append(_cell(value) if report is not None or value is not None else "absent")
        body.append(cells)
    header = ["", *columns]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [header, *body]]
    return "\n".join(lines) + "\n"


def write_report_text(
    path: PathLike,
    reports: Mapping[str, Optional[MetricReport]],
    provenance: Optional[Mapping[str, object]] = None,
    extra_columns: Sequence[str] = (),
    extra: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> None:
    path = Path(path)
    lines = "".join(f"# {key} = {value}\n" for key, value in (provenance or {}).items())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(lines + format_table(reports, extra_columns, extra), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write report {path}: {e}") from e
