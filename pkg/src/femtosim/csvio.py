"""Small helpers shared by every CSV writer/reader in the package.

All emitted files start with a version comment so downstream scripts can
refuse schemas they do not understand.
"""

import csv
import io

CSV_VERSION_LINE = "# femtosim-csv v1"


class CsvSchemaError(ValueError):
    pass


def fmt(x, digits=9):
    """Fixed-point float formatting used by every writer."""
    return f"{x:.{digits}f}"


def write_table(fh, header, rows, version=True):
    if version:
        fh.write(CSV_VERSION_LINE + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise CsvSchemaError(f"row {row!r} does not match header {header!r}")
        w.writerow(row)


def read_table(fh, header):
    """Strict reader: version line, exact header, no ragged rows."""
    text = fh.read() if hasattr(fh, "read") else fh
    lines = text.splitlines()
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise CsvSchemaError("missing femtosim-csv version line")
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    got = next(reader, None)
    if got != list(header):
        raise CsvSchemaError(f"expected header {list(header)}, got {got}")
    rows = []
    for row in reader:
        if len(row) != len(header):
            raise CsvSchemaError(f"ragged row {row!r}")
        rows.append(row)
    return rows
