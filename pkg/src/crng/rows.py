"""Per-trial result rows: the one flat table every metric is computed from."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields

from .errors import ValidationError

ROWS_VERSION = "crng-rows v1"

_FLOAT_FIELDS = ("d_true", "d_est", "x_true", "y_true", "x_est", "y_est", "loc_err")


@dataclass
class Row:
    scheme: str
    position_id: int
    trial: int
    responder: int
    d_true: float | None
    d_est: float | None
    valid: bool
    reason: str
    x_true: float | None
    y_true: float | None
    x_est: float | None
    y_est: float | None
    loc_err: float | None


ROW_FIELDS = tuple(f.name for f in fields(Row))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(name: str, text: str):
    if name in _FLOAT_FIELDS:
        return float(text) if text else None
    if name == "valid":
        return text == "true"
    if name in ("position_id", "trial", "responder"):
        return int(text)
    return text


def write_rows_csv(path, rows: list[Row]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ROWS_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for row in rows:
            writer.writerow([_cell(getattr(row, f)) for f in ROW_FIELDS])


def read_rows_csv(path) -> list[Row]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {ROWS_VERSION}":
            raise ValidationError(f"unknown rows schema {first!r}, expected '# {ROWS_VERSION}'")
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ROW_FIELDS:
            raise ValidationError("rows header does not match the v1 schema")
        out = []
        for raw in reader:
            out.append(Row(**{n: _parse_cell(n, v) for n, v in zip(ROW_FIELDS, raw)}))
        return out


def write_rows_jsonl(path, rows: list[Row]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            obj = {f: getattr(row, f) for f in ROW_FIELDS}
            fh.write(json.dumps(obj) + "\n")


def rows_to_csv_bytes(rows: list[Row]) -> bytes:
    buf = io.StringIO()
    buf.write(f"# {ROWS_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for row in rows:
        writer.writerow([_cell(getattr(row, f)) for f in ROW_FIELDS])
    return buf.getvalue().encode()
