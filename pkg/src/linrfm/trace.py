"""Per-iteration traces and the CSV conventions shared by solvers and the CLI."""

import csv
import io
import math


def fmt_value(value):
    """Render a CSV cell: floats with 17 significant digits, ``None`` as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    try:
        return f"{float(value):.17g}"
    except (TypeError, ValueError):
        return str(value)


def write_csv(rows, columns, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_value(row.get(c)) for c in columns])


class Trace(list):
    """A list of row dicts with a fixed column order."""

    def __init__(self, columns, rows=()):
        super().__init__(rows)
        self.columns = list(columns)
        self.info = {}

    def column(self, name):
        return [row.get(name) for row in self]

    def to_csv(self, fh=None):
        """Write to an open file handle, or return the CSV text when ``fh`` is None."""
        if fh is None:
            buf = io.StringIO()
            write_csv(self, self.columns, buf)
            return buf.getvalue()
        write_csv(self, self.columns, fh)
        return None
