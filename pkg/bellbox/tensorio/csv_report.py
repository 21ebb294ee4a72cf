import csv
import io
from collections.abc import Mapping, Sequence
from typing import Any, Optional

from bellbox.errors import CsvSchemaError
from bellbox.tensorio.tensor_file import FilePath

Row = Mapping[str, Any]


def _resolve_header(rows: Sequence[Row], header: Optional[Sequence[str]]) -> list[str]:
    if header is None:
        if not rows:
            raise CsvSchemaError("a header is required when there are no rows")
        header = list(rows[0].keys())
    header = list(header)
    for i, row in enumerate(rows):
        if set(row.keys()) != set(header):
            raise CsvSchemaError(f"row {i} keys {sorted(row)} do not match header {header}")
    return header


def format_csv(rows: Sequence[Row], header: Optional[Sequence[str]] = None) -> str:
    """
    Renders records as CSV text with a header row, one record per line.

    :param rows: records sharing one schema.
    :param header: column order; defaults to the first row's key order.
    """
    columns = _resolve_header(rows, header)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row[c] for c in columns])
    return buf.getvalue()


def emit_csv(
    rows: Sequence[Row], path: FilePath, header: Optional[Sequence[str]] = None
) -> None:
    text = format_csv(rows, header)
    with open(path, "w", newline="") as fh:
        fh.write(text)
