"""Training logs and CSV output shared by all experiments."""

import csv
import io

import numpy as np


def fmt(value):
    """CSV cell: reals with 17 significant digits, everything else via str."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path_or_buf, columns, rows):
    """Comma-separated, header row, '\\n' line ends, UTF-8.

    Returns the path for a file target, or the buffer's text for a StringIO.
    """
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([fmt(v) for v in values])
    finally:
        if own:
            fh.close()
    return path_or_buf if own else (fh.getvalue() if hasattr(fh, "getvalue") else None)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


class TrainRecord:
    """Per-step log; steps must be strictly increasing."""

    def __init__(self, columns=("step", "loss", "y0", "seconds", "seed")):
        self.columns = tuple(columns)
        self.rows = []
        self.aborted = None

    def __len__(self):
        return len(self.rows)

    def append(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"record row missing {sorted(missing)}")
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("record steps must be strictly increasing")
        self.rows.append(row)

    def abort(self, message):
        self.aborted = message

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    @property
    def last(self):
        return self.rows[-1] if self.rows else None

    def to_csv(self, path=None, exclude=()):
        cols = [c for c in self.columns if c not in exclude]
        if path is None:
            buf = io.StringIO()
            write_csv(buf, cols, self.rows)
            return buf.getvalue()
        write_csv(path, cols, self.rows)
        return path
