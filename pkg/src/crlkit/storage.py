"""Checkpoint container and CSV files.

Checkpoint layout, all integers little-endian::

    b"CRLKCKPT" | version u32 | header length u64 | header (UTF-8 JSON) | array bytes | sha256

The header holds the payload tree with every ndarray replaced by a
reference into the array section, so floats survive bit-exactly. The
trailing digest covers everything before it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .metrics import POSITIVE_BACKWARD, POSITIVE_FORWARD, UNDEFINED, MetricRow, MetricsTable

MAGIC = b"CRLKCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


# ---------------------------------------------------------------- checkpoint

def _encode(node, arrays: list, path: str):
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            if not isinstance(k, str):
                raise CheckpointError(f"{path}: keys must be strings, got {k!r}")
            out[k] = _encode(v, arrays, f"{path}/{k}")
        return out
    if isinstance(node, np.ndarray):
        if node.dtype.hasobject:
            raise CheckpointError(f"{path}: object arrays cannot be stored")
        arrays.append(np.array(node, order="C", copy=True))
        return {"__array__": len(arrays) - 1}
    if isinstance(node, (list, tuple)):
        return [_encode(v, arrays, f"{path}[{i}]") for i, v in enumerate(node)]
    if isinstance(node, np.integer):
        return int(node)
    if isinstance(node, (bool, int, str)) or node is None:
        return node
    if isinstance(node, (float, np.floating)):
        if not math.isfinite(node):
            raise CheckpointError(f"{path}: non-finite scalars must be stored inside arrays")
        return float(node)
    raise CheckpointError(f"{path}: cannot store value of type {type(node).__name__}")


def _decode(node, arrays):
    if isinstance(node, dict):
        if set(node) == {"__array__"}:
            return arrays[node["__array__"]]
        return {k: _decode(v, arrays) for k, v in node.items()}
    if isinstance(node, list):
        return [_decode(v, arrays) for v in node]
    return node


def dumps_checkpoint(payload: dict) -> bytes:
    arrays: list = []
    tree = _encode(payload, arrays, "")
    table, offset = [], 0
    for a in arrays:
        table.append({"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
    header = json.dumps({"tree": tree, "arrays": table}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(a.tobytes() for a in arrays)
    return body + hashlib.sha256(body).digest()


def loads_checkpoint(blob: bytes) -> dict:
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError("checkpoint is truncated")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a crlkit checkpoint (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION}); refusing to load")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint integrity check failed (sha256 mismatch)")
    start = _PREFIX.size + hlen
    header = json.loads(body[_PREFIX.size:start].decode("utf-8"))
    arrays = []
    for spec in header["arrays"]:
        lo = start + spec["offset"]
        raw = body[lo:lo + spec["nbytes"]]
        a = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(tuple(spec["shape"])).copy()
        arrays.append(a)
    return _decode(header["tree"], arrays)


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def save_checkpoint(payload: dict, path):
    _atomic_write(path, dumps_checkpoint(payload))


def load_checkpoint(path) -> dict:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return loads_checkpoint(blob)


# ---------------------------------------------------------------- csv

def fmt(x) -> str:
    """Six significant digits; nan stays ``nan``."""
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.6g}"


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


TRACE_HEADER = ("episode", "task", "reward")
EVAL_HEADER = ("task", "after_task", "reward")
SUMMARY_HEADER = ("method", "metric", "task", "mean", "std")
RSTAR_HEADER = ("seed", "task", "r_star")


def write_trace_csv(record, path):
    _write_rows(path, TRACE_HEADER, [(int(e), int(t), fmt(r)) for e, t, r in record.trace])


def read_trace_csv(path) -> list:
    return [(int(e), int(t), float(r)) for e, t, r in _read_rows(path, TRACE_HEADER)]


def write_eval_csv(record, path):
    n = record.n_tasks
    rows = [(i, j, fmt(record.eval[i - 1, j - 1])) for j in range(1, n + 1) for i in range(1, j + 1)]
    _write_rows(path, EVAL_HEADER, rows)


def read_eval_csv(path, n_tasks: int) -> np.ndarray:
    m = np.full((n_tasks, n_tasks), np.nan)
    for i, j, r in _read_rows(path, EVAL_HEADER):
        m[int(i) - 1, int(j) - 1] = float(r)
    return m


def write_summary_csv(table: MetricsTable, path):
    rows = [(r.method, r.metric, r.task, "undefined" if math.isnan(r.mean) else fmt(r.mean),
             "n/a" if r.std is None else fmt(r.std)) for r in table.rows]
    _write_rows(path, SUMMARY_HEADER, rows)


def read_summary_csv(path) -> MetricsTable:
    """Rows from a summary CSV; seed counts are not stored, so ``n`` is 0."""
    table = MetricsTable()
    for method, metric, task, mean, std in _read_rows(path, SUMMARY_HEADER):
        m = float("nan") if mean == "undefined" else float(mean)
        flags = [UNDEFINED] if mean == "undefined" else []
        if m > 100.0:
            flags.append(POSITIVE_BACKWARD if metric == "retention" else POSITIVE_FORWARD)
        table.rows.append(MetricRow(method, metric, task, m, None if std == "n/a" else float(std), 0, flags))
    return table


def write_rstar_csv(values: dict, path):
    """``values[seed][task] = r*``."""
    rows = [(s, t, fmt(v)) for s in sorted(values) for t, v in sorted(values[s].items())]
    _write_rows(path, RSTAR_HEADER, rows)


def read_rstar_csv(path) -> dict:
    out: dict = {}
    for s, t, v in _read_rows(path, RSTAR_HEADER):
        out.setdefault(int(s), {})[int(t)] = float(v)
    return out
