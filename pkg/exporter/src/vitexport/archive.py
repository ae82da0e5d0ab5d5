"""Named tensor archive writer/reader.

File layout: u64 little-endian manifest length, UTF-8 JSON manifest
({"tensors": {name: {dtype, shape, offset, length}}, "meta": {...}}),
raw little-endian float32 payloads, and a trailing u64 FNV-1a checksum of
the payload region. Writing is canonical (sorted names, compact JSON) so
re-serializing a loaded archive reproduces it byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in memoryview(data).cast("B"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def write_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> dict:
    """Serialize tensors; returns {name: entry} as written."""
    entries = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        raw = arr.tobytes(order="C")
        entries[name] = {"dtype": "f32", "shape": list(arr.shape),
                         "offset": len(payload), "length": len(raw)}
        payload.extend(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(payload)
        fh.write(struct.pack("<Q", fnv1a64(bytes(payload))))
    return entries


def read_archive(path):
    """Returns (tensors, meta); raises ValueError on corruption."""
    blob = Path(path).read_bytes()
    (mlen,) = struct.unpack_from("<Q", blob, 0)
    manifest = json.loads(blob[8 : 8 + mlen].decode("utf-8"))
    payload = blob[8 + mlen : -8]
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if stored != fnv1a64(payload):
        raise ValueError(f"archive checksum mismatch: {path}")
    tensors = {}
    for name, ent in manifest["tensors"].items():
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=ent["offset"])
        tensors[name] = arr.reshape(shape).copy()
    return tensors, manifest.get("meta", {})
