"""CSV and JSON-lines persistence for runs.

Every CSV written here starts with ``#``-prefixed header lines carrying the
resolved config and the seeds, so a file is enough to replay its run.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError

SUMMARY_LOG = "runs.jsonl"


def provenance_lines(config_dict: dict, seeds: dict) -> list:
    return ["config: " + json.dumps(config_dict, sort_keys=True, separators=(",", ":")),
            "seeds: " + json.dumps(seeds, sort_keys=True, separators=(",", ":"))]


def read_provenance(path) -> dict:
    """Parse the ``# config:`` / ``# seeds:`` header of a file written by this module."""
    found = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, payload = line[1:].strip().partition(": ")
            found[key] = json.loads(payload)
    return found


def write_rows(path, header, rows, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_rows(path) -> list:
    with open(path, encoding="utf-8") as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(body))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_control_csv(path, u: np.ndarray, dt: float, header_lines=()) -> None:
    n, M, d = u.shape
    rows = ([round(k * dt, 12), j] + list(u[k, j]) for k in range(n) for j in range(M))
    write_rows(path, ["t", "driver"] + [f"u{c}" for c in range(d)], rows, header_lines)


def read_control_csv(path, M: int, d: int) -> np.ndarray:
    try:
        rows = read_rows(path)
    except OSError as exc:
        raise ConfigError(f"cannot read control file {path}: {exc}",
                          fields=("control.path",)) from exc
    steps = sorted({float(r["t"]) for r in rows})
    index = {t: k for k, t in enumerate(steps)}
    u = np.zeros((len(steps), M, d))
    for r in rows:
        j = int(r["driver"])
        if j >= M:
            raise ConfigError(f"control file lists driver {j} but model.M={M}",
                              fields=("control.path", "model.M"))
        u[index[float(r["t"])], j] = [float(r[f"u{c}"]) for c in range(d)]
    return u


def append_summary(out_dir, record: dict) -> None:
    path = Path(out_dir) / SUMMARY_LOG
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
