"""CSV and JSON writers for branch tables, phase diagrams and radial profiles.

Floats are written with `repr`, the shortest string that round-trips, so a
replayed run reproduces its tables byte for byte.
"""
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from h2xlda.continuation import BRANCH_COLUMNS

log = logging.getLogger(__name__)


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    log.info(f"Wrote {len(rows)} rows to {path}")
    return path


def read_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path, data):
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        json.dump(_plain(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_branch_csv(path, points):
    return write_csv(path, BRANCH_COLUMNS, [p.as_row() for p in points])


def write_phase(csv_path, json_path, diagram):
    rows = diagram.as_rows()
    columns = ["alpha", f"critical_{diagram.grid_units}", "status", "detector"]
    write_csv(csv_path, columns, rows)
    write_json(json_path, diagram.as_dict())


def write_profile_csv(path, profile):
    """Two columns: r and phi(r)."""
    rows = [{"r": r, "phi": v} for r, v in zip(profile.r.tolist(), profile.values.tolist())]
    return write_csv(path, ["r", "phi"], rows)
