"""Deterministic CSV/JSON report writers.

Re-running a study with the same config and seed reproduces every payload
byte for byte; the JSON timestamp is the single excluded field.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])
    return path


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_json(path, payload: dict, stamp: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(payload)
    if stamp:
        doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def payload_without_timestamp(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    doc.pop("timestamp", None)
    return doc
