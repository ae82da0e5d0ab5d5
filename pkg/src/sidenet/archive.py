"""Named tensor archive container.

Layout, in file order:

    u64 little-endian   manifest byte length
    UTF-8 JSON          {"tensors": {name: {"dtype": "f32", "shape": [...],
                         "offset": int, "length": int}}, "meta": {...}}
    payload             raw little-endian row-major float32 buffers,
                        offsets relative to the payload start
    u64 little-endian   FNV-1a 64-bit checksum of the payload region

Writing is canonical (names sorted, compact JSON, contiguous payloads) so
a read/write round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ArchiveError


def write_archive(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        raw = arr.tobytes(order="C")
        entries[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": len(payload),
            "length": len(raw),
        }
        payload.extend(raw)
    manifest = json.dumps(
        {"tensors": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    checksum = kernels.fnv1a64(bytes(payload))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(payload)
        fh.write(struct.pack("<Q", checksum))


class Archive:
    """Loaded archive: tensor dict plus free-form metadata."""

    def __init__(self, tensors: dict[str, np.ndarray], meta: dict):
        self.tensors = tensors
        self.meta = meta

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ArchiveError(f"archive is missing tensor '{name}'")

    def names(self):
        return sorted(self.tensors)


def read_archive(path) -> Archive:
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"archive not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16:
        raise ArchiveError(f"archive too short: {path}")
    (mlen,) = struct.unpack_from("<Q", blob, 0)
    header_end = 8 + mlen
    if header_end + 8 > len(blob):
        raise ArchiveError(f"archive manifest length {mlen} exceeds file size: {path}")
    try:
        manifest = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"archive manifest is not valid JSON ({exc}): {path}")
    payload = blob[header_end:-8]
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    actual = kernels.fnv1a64(payload)
    if stored != actual:
        raise ArchiveError(f"archive checksum mismatch (stored {stored:#x}, computed {actual:#x}): {path}")
    tensors = {}
    for name, ent in manifest.get("tensors", {}).items():
        if ent.get("dtype") != "f32":
            raise ArchiveError(f"tensor '{name}' has unsupported dtype {ent.get('dtype')!r}")
        off, length = int(ent["offset"]), int(ent["length"])
        shape = tuple(int(s) for s in ent["shape"])
        expected = int(np.prod(shape)) * 4 if shape else 4
        if length != expected:
            raise ArchiveError(f"tensor '{name}': byte length {length} != shape {shape} * 4")
        if off < 0 or off + length > len(payload):
            raise ArchiveError(f"tensor '{name}': payload range [{off}, {off + length}) out of bounds")
        arr = np.frombuffer(payload, dtype="<f4", count=expected // 4, offset=off).reshape(shape)
        tensors[name] = arr.copy()
    return Archive(tensors, manifest.get("meta", {}))
