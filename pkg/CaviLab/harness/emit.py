"""
CSV and JSON writers.

Floats are written with 17 significant digits, enough to read back the exact double, and
every layout is a pure function of its input so repeated runs produce identical bytes.
"""

import csv
import io
import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO

import numpy as np

from CaviLab.config import Config
from CaviLab.core.analysis import ContractionReport
from CaviLab.core.scheduler import Trajectory

FLOAT_FORMAT = f".{Config.FLOAT_DIGITS}g"


def format_float(value: Optional[float]) -> str:
    """17-digit text of ``value``; empty for None."""
    if value is None:
        return ""
    return format(float(value), FLOAT_FORMAT)


def trajectory_header(block_count: int) -> List[str]:
    return (
        ["iter", "d_half_total"]
        + [f"d_half_block_{j}" for j in range(block_count)]
        + ["ratio", "objective_gap"]
    )


def write_trajectory_csv(trajectory: Trajectory, stream: TextIO) -> None:
    """One row per iterate; ``ratio`` is empty where it is undefined."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(trajectory_header(trajectory.block_count))
    for row in trajectory.rows:
        writer.writerow(
            [str(row.iteration), format_float(row.total)]
            + [format_float(value) for value in row.block_divergences]
            + [format_float(row.ratio), format_float(row.objective_gap)]
        )


def trajectory_csv(trajectory: Trajectory) -> str:
    buffer = io.StringIO()
    write_trajectory_csv(trajectory, buffer)
    return buffer.getvalue()


def write_rows_csv(header: Sequence[str], rows: Iterable[Sequence[Any]], stream: TextIO) -> None:
    """Generic table; floats go through ``format_float``, None becomes an empty cell."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([_cell(value) for value in row])


def rows_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    write_rows_csv(header, rows, buffer)
    return buffer.getvalue()


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def jsonable(value: Any) -> Any:
    """Plain JSON values: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def dumps(data: Dict[str, Any]) -> str:
    """Sorted keys, two-space indent; Python's float repr reads back the exact double."""
    return json.dumps(jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_json(report: ContractionReport) -> str:
    return dumps(report.to_dict())


def write_text(directory: str, name: str, text: str) -> str:
    """
    Write ``text`` to ``directory/name``, creating the directory.

    Raises:
        OSError: the file cannot be written
    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    return path


__all__ = [
    'FLOAT_FORMAT',
    'dumps',
    'format_float',
    'jsonable',
    'report_json',
    'rows_csv',
    'trajectory_csv',
    'trajectory_header',
    'write_rows_csv',
    'write_text',
    'write_trajectory_csv',
]
