"""Standalone writer (and reader) for ISAF v1 containers.

This mirrors the file format the downstream recognition pipeline consumes:
magic ``ISAF1\\0``, a little-endian uint32 header length, a UTF-8 JSON
header (sorted keys, compact separators) naming the kind and the tensor
entries, then the tensor payloads as little-endian float32, row-major, in
header order. Identical content always produces identical bytes. The code
is deliberately independent of the consumer package — the two sides share
only this file contract.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ISAF1\x00"


class ExportFormatError(ValueError):
    """Raised when a container cannot be written or read back."""


def write_isaf1(path, kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays as a float32 container; insertion order preserved."""
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr32)):
            raise ExportFormatError(f"non-finite values in tensor '{name}'")
        entries.append({"name": name, "shape": list(arr32.shape)})
        blobs.append(arr32.tobytes(order="C"))
    header = {"kind": kind, "tensors": entries}
    header.update(meta or {})
    raw = json.dumps(
        header, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_isaf1(path) -> tuple[str, dict[str, np.ndarray], dict]:
    """Read a container back; returns (kind, float32 tensors, metadata)."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise ExportFormatError(f"{path}: not an ISAF v1 file")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise ExportFormatError(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise ExportFormatError(f"{path}: truncated header")
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if len(data) < off + nbytes:
            raise ExportFormatError(f"{path}: truncated payload for '{entry['name']}'")
        tensors[entry["name"]] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        )
        off += nbytes
    meta = {k: v for k, v in header.items() if k not in ("kind", "tensors")}
    return header.get("kind", ""), tensors, meta
