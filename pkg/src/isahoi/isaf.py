"""ISAF v1 binary container: fixtures, embedding tables, checkpoints.

Layout: magic "ISAF1\\0", a little-endian uint32 header length, a UTF-8
JSON header describing kind/tensor names/shapes plus kind-specific
metadata, then the tensor payloads as little-endian float32, row-major,
in header order. The header is serialized with sorted keys and fixed
separators so identical content gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ISAF1\x00"


class FixtureError(ValueError):
    """Base class for fixture container failures."""


class BadMagicError(FixtureError):
    pass


class TruncatedPayloadError(FixtureError):
    pass


class DimensionMismatchError(FixtureError):
    pass


class NonFiniteError(FixtureError):
    pass


def write_isaf(path, kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays (insertion order preserved) as a float32 container."""
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr32)):
            raise NonFiniteError(f"non-finite values in tensor '{name}'")
        entries.append({"name": name, "shape": list(arr32.shape)})
        blobs.append(arr32.tobytes(order="C"))
    header = {"kind": kind, "tensors": entries}
    header.update(meta or {})
    raw = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_isaf(path) -> tuple[str, dict[str, np.ndarray], dict]:
    """Read a container; returns (kind, float64-widened tensors, metadata)."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not an ISAF v1 file")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise TruncatedPayloadError(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise TruncatedPayloadError(f"{path}: truncated header")
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagicError(f"{path}: corrupt header: {exc}") from exc
    off += hlen

    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if len(data) < off + nbytes:
            raise TruncatedPayloadError(f"{path}: truncated payload for tensor '{entry['name']}'")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{path}: non-finite values in tensor '{entry['name']}'")
        tensors[entry["name"]] = arr.astype(np.float64)
        off += nbytes
    if off != len(data):
        raise TruncatedPayloadError(f"{path}: {len(data) - off} trailing bytes after payload")

    meta = {k: v for k, v in header.items() if k not in ("kind", "tensors")}
    return header.get("kind", ""), tensors, meta
