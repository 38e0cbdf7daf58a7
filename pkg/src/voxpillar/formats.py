"""Binary cloud files, tensor dumps, box JSON, and CSV emission.

All multi-byte values are little-endian. Writers go through a temp file
plus rename so partially written outputs never appear under the final name.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError
from .geometry import Box3D

CLOUD_MAGIC = b"VPF1"


def write_cloud(path, points: np.ndarray):
    """Write magic, u32 point count, then N x 4 f32 (x, y, z, intensity)."""
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4"))
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise FormatError(f"cloud must be (N, 4), got {pts.shape}")
    payload = CLOUD_MAGIC + struct.pack("<I", pts.shape[0]) + pts.tobytes()
    _atomic_write_bytes(path, payload)


def read_cloud(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read cloud {path}: {exc}") from exc
    if len(data) < 8 or data[:4] != CLOUD_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {CLOUD_MAGIC!r}")
    (count,) = struct.unpack("<I", data[4:8])
    expected = 8 + count * 16
    if len(data) != expected:
        raise FormatError(f"{path}: {len(data)} bytes, expected {expected} for {count} points")
    pts = np.frombuffer(data, dtype="<f4", offset=8).reshape(count, 4).astype(np.float64)
    if not np.isfinite(pts).all():
        raise FormatError(f"{path}: cloud contains non-finite values")
    return pts


def dump_record_bytes(name: str, coords: np.ndarray, features: np.ndarray,
                      stride: int, extents) -> bytes:
    """One dump record: a JSON header line, then u32 coords and f32 features."""
    coords = np.asarray(coords, dtype=np.int64)
    header = {
        "name": name,
        "stride": int(stride),
        "extents": [int(e) for e in extents],
        "channels": int(features.shape[1]),
        "count": int(coords.shape[0]),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    body = coords.astype("<u4").tobytes() + np.asarray(features, dtype="<f4").tobytes()
    return head + body


def write_dump(path, records: list[tuple[str, np.ndarray, np.ndarray, int, tuple]]):
    """Write a sequence of (name, coords, features, stride, extents) records."""
    blob = b"".join(dump_record_bytes(*rec) for rec in records)
    _atomic_write_bytes(path, blob)


def read_dump(path) -> list[dict]:
    """Parse a dump file back into records with int coords and f32 features."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read dump {path}: {exc}") from exc
    records = []
    pos = 0
    while pos < len(data):
        eol = data.find(b"\n", pos)
        if eol < 0:
            raise FormatError(f"{path}: truncated header at byte {pos}")
        try:
            header = json.loads(data[pos:eol].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad record header: {exc}") from exc
        count = int(header["count"])
        ndim = len(header["extents"])
        channels = int(header["channels"])
        start = eol + 1
        coords_bytes = count * ndim * 4
        feats_bytes = count * channels * 4
        if start + coords_bytes + feats_bytes > len(data):
            raise FormatError(f"{path}: truncated payload for record {header.get('name')!r}")
        coords = np.frombuffer(data, dtype="<u4", offset=start,
                               count=count * ndim).reshape(count, ndim).astype(np.int64)
        feats = np.frombuffer(data, dtype="<f4", offset=start + coords_bytes,
                              count=count * channels).reshape(count, channels)
        records.append({"header": header, "coords": coords, "features": feats})
        pos = start + coords_bytes + feats_bytes
    return records


def load_boxes(path) -> list[dict]:
    """Read a JSON array of box entries.

    Each entry is either a bare box object {"center", "dims", "heading"} or a
    wrapper carrying "box" plus optional "class", "id", "score", "points".
    Returns dicts with keys box/class/id/score/points.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read boxes {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise FormatError(f"{path}: expected a JSON array of boxes")
    out = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise FormatError(f"{path}: entry {i} is not an object")
        raw = entry.get("box", entry)
        try:
            box = Box3D.from_json(raw)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: entry {i} is not a valid box: {exc}") from exc
        points = entry.get("points")
        out.append({
            "box": box,
            "class": entry.get("class", "Vehicle"),
            "id": int(entry.get("id", i)),
            "score": entry.get("score"),
            "points": np.asarray(points, dtype=np.float64).reshape(-1, 4)
            if points is not None else np.empty((0, 4)),
        })
    return out


def write_csv(path, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write_bytes(path, payload: bytes):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
