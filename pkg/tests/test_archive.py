"""Tensor archive container: round trips, validation, corruption."""

import struct

import numpy as np
import pytest

from sidenet.archive import read_archive, write_archive
from sidenet.errors import ArchiveError


def sample_tensors(seed=0):
    rng = np.random.Generator(np.random.Philox(key=seed))
    return {
        "a/weight": rng.normal(size=(3, 4)).astype(np.float32),
        "a/bias": rng.normal(size=(4,)).astype(np.float32),
        "z/scalar": np.float32(2.5).reshape(()),
    }


def test_roundtrip_values_and_meta(tmp_path):
    path = tmp_path / "t.nta"
    tensors = sample_tensors()
    write_archive(path, tensors, meta={"kind": "test", "seed": 7})
    ar = read_archive(path)
    assert ar.meta == {"kind": "test", "seed": 7}
    for name, arr in tensors.items():
        assert (ar[name] == arr).all()
        assert ar[name].dtype == np.float32


def test_rewrite_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.nta", tmp_path / "b.nta"
    write_archive(p1, sample_tensors(), meta={"x": 1})
    ar = read_archive(p1)
    write_archive(p2, ar.tensors, meta=ar.meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_tensor_named(tmp_path):
    path = tmp_path / "t.nta"
    write_archive(path, sample_tensors())
    ar = read_archive(path)
    with pytest.raises(ArchiveError, match="nope/missing"):
        ar["nope/missing"]


def test_checksum_mismatch_detected(tmp_path):
    path = tmp_path / "t.nta"
    write_archive(path, sample_tensors())
    blob = bytearray(path.read_bytes())
    (mlen,) = struct.unpack_from("<Q", blob, 0)
    blob[8 + mlen + 3] ^= 0xFF  # flip a payload byte
    path.write_bytes(bytes(blob))
    with pytest.raises(ArchiveError, match="checksum"):
        read_archive(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "t.nta"
    write_archive(path, sample_tensors())
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(ArchiveError):
        read_archive(path)


def test_missing_file():
    with pytest.raises(ArchiveError, match="not found"):
        read_archive("/nonexistent/archive.nta")


def test_shape_length_consistency(tmp_path):
    path = tmp_path / "t.nta"
    write_archive(path, {"w": np.zeros((2, 2), dtype=np.float32)})
    blob = bytearray(path.read_bytes())
    (mlen,) = struct.unpack_from("<Q", blob, 0)
    manifest = blob[8 : 8 + mlen].decode("utf-8").replace('"shape":[2,2]', '"shape":[2,3]')
    new = struct.pack("<Q", len(manifest)) + manifest.encode() + bytes(blob[8 + mlen :])
    path.write_bytes(new)
    with pytest.raises(ArchiveError, match="byte length"):
        read_archive(path)
