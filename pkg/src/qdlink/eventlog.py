"""Event-log persistence.

CSV layout::

    # qdlink-events v1
    # seed=<int>
    # config_hash=<sha256 hex>
    # count=<int>
    detector_id,timestamp_ps,basis
    2,89250311,0
    ...

The binary variant starts with the magic ``QDEV``, a little-endian u32 schema
version, a u32 header length and that many bytes of JSON header (seed,
config hash, count), followed by packed records ``<u1 detector, <u8 ps, <u1
basis``.  Timestamps are unsigned 64-bit picoseconds in both formats and rows
are sorted by time.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coincidence import DetectionEvents
from .errors import SchemaError

SCHEMA_VERSION = 1
MAGIC = b"QDEV"
RECORD = np.dtype([("detector", "<u1"), ("timestamp_ps", "<u8"), ("basis", "<u1")])
CSV_COLUMNS = "detector_id,timestamp_ps,basis"


@dataclass(frozen=True)
class EventLogHeader:
    schema_version: int
    seed: int
    config_hash: str
    count: int


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_events(events: DetectionEvents, path, seed: int, config_hash: str, fmt: str = None):
    """Write ``events``; the format follows ``fmt`` or the suffix (.bin -> binary)."""
    path = Path(path)
    fmt = fmt or ("binary" if path.suffix == ".bin" else "csv")
    n = len(events)
    if fmt == "binary":
        header = json.dumps({"seed": seed, "config_hash": config_hash, "count": n}, sort_keys=True).encode()
        rec = np.empty(n, dtype=RECORD)
        rec["detector"] = events.detector
        rec["timestamp_ps"] = events.timestamp_ps
        rec["basis"] = events.basis
        blob = MAGIC + struct.pack("<II", SCHEMA_VERSION, len(header)) + header + rec.tobytes()
        _atomic_write(path, blob)
        return path
    buf = io.StringIO()
    buf.write(f"# qdlink-events v{SCHEMA_VERSION}\n# seed={seed}\n# config_hash={config_hash}\n# count={n}\n")
    buf.write(CSV_COLUMNS + "\n")
    if n:
        table = np.column_stack([events.detector.astype(np.int64), events.timestamp_ps, events.basis.astype(np.int64)])
        np.savetxt(buf, table, fmt="%d", delimiter=",")
    _atomic_write(path, buf.getvalue().encode())
    return path


def _read_binary(raw: bytes, path):
    if len(raw) < 12:
        raise SchemaError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    if len(raw) < 12 + hlen:
        raise SchemaError(f"{path}: truncated header")
    try:
        meta = json.loads(raw[12:12 + hlen])
        seed, chash, count = int(meta["seed"]), str(meta["config_hash"]), int(meta["count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: bad header ({exc})") from exc
    body = raw[12 + hlen:]
    if len(body) != count * RECORD.itemsize:
        raise SchemaError(f"{path}: expected {count} records, found {len(body) / RECORD.itemsize:g}")
    rec = np.frombuffer(body, dtype=RECORD)
    ev = DetectionEvents(rec["detector"].copy(), rec["timestamp_ps"].astype(np.int64),
                         rec["basis"].copy())
    return EventLogHeader(version, seed, chash, count), ev


def _read_csv(raw: bytes, path):
    text = raw.decode("ascii", errors="strict")
    lines = text.split("\n")
    meta = {}
    i = 0
    if not lines or not lines[0].startswith("# qdlink-events v"):
        raise SchemaError(f"{path}: missing event-log header")
    try:
        version = int(lines[0].rsplit("v", 1)[1])
    except ValueError as exc:
        raise SchemaError(f"{path}: bad schema line {lines[0]!r}") from exc
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        k, _, v = lines[i][1:].strip().partition("=")
        meta[k] = v
        i += 1
    if i >= len(lines) or lines[i].strip() != CSV_COLUMNS:
        raise SchemaError(f"{path}: expected column line {CSV_COLUMNS!r}")
    try:
        seed, chash, count = int(meta["seed"]), meta["config_hash"], int(meta["count"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: incomplete header ({exc})") from exc
    if not text.endswith("\n"):
        raise SchemaError(f"{path}: truncated final row")
    body = lines[i + 1:-1]
    if len(body) != count:
        raise SchemaError(f"{path}: expected {count} rows, found {len(body)}")
    if count == 0:
        return EventLogHeader(version, seed, chash, 0), DetectionEvents.empty()
    try:
        table = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed row ({exc})") from exc
    if table.shape[1] != 3:
        raise SchemaError(f"{path}: expected 3 columns")
    ev = DetectionEvents(table[:, 0].astype(np.uint8), table[:, 1], table[:, 2].astype(np.uint8))
    return EventLogHeader(version, seed, chash, count), ev


def read_events(path):
    """(header, events); raises SchemaError on version mismatch, truncation or bad rows."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        header, ev = _read_binary(raw, path)
    else:
        header, ev = _read_csv(raw, path)
    if np.any(ev.detector > 3) or np.any(ev.basis > 2):
        raise SchemaError(f"{path}: detector id or basis out of range")
    if not ev.is_sorted():
        raise SchemaError(f"{path}: rows are not sorted by timestamp")
    return header, ev
