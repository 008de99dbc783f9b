"""Container round-trips: arrays, metadata, and integrity checks."""

import numpy as np
import pytest

from ctrlns import serialize


def test_roundtrip_preserves_arrays_and_meta(tmp_path):
    path = tmp_path / "c.bin"
    arrays = {
        "b": np.arange(6, dtype="<f4").reshape(2, 3),
        "a": np.array([[1.5, -2.5]], dtype="<f8"),
        "ints": np.array([1, 2, 3], dtype="<i8"),
    }
    meta = {"alpha": 1, "nested": {"x": [1, 2]}}
    serialize.write_container(path, "dataset", meta, arrays)
    kind, got_meta, got = serialize.read_container(path)
    assert kind == "dataset"
    assert got_meta == meta
    assert set(got) == set(arrays)
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype
        np.testing.assert_array_equal(got[name], arr)


def test_roundtrip_preserves_zero_dim_arrays(tmp_path):
    path = tmp_path / "c.bin"
    serialize.write_container(path, "checkpoint", {}, {"s": np.array(2.5)})
    _, _, got = serialize.read_container(path)
    assert got["s"].shape == ()
    assert float(got["s"]) == 2.5


def test_hash_arrays_distinguishes_zero_dim_from_length_one():
    scalar = np.array(1.5)
    vector = np.array([1.5])
    assert serialize.hash_arrays({}, [scalar]) != serialize.hash_arrays({}, [vector])


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(serialize.ContainerError):
        serialize.read_container(path)


def test_newer_version_rejected(tmp_path):
    path = tmp_path / "c.bin"
    serialize.write_container(path, "dataset", {}, {"a": np.zeros(2)})
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(serialize.ContainerError):
        serialize.read_container(path)


def test_payload_tamper_warns(tmp_path):
    path = tmp_path / "c.bin"
    serialize.write_container(path, "dataset", {}, {"a": np.ones(4, dtype="<f4")})
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.warns(UserWarning, match="checksum"):
        serialize.read_container(path)


def test_hash_arrays_sensitive_to_values_and_meta():
    a = np.arange(4, dtype="<f4")
    h1 = serialize.hash_arrays({"k": 1}, [a])
    h2 = serialize.hash_arrays({"k": 2}, [a])
    b = a.copy()
    b[0] += 1
    h3 = serialize.hash_arrays({"k": 1}, [b])
    assert len({h1, h2, h3}) == 3
    assert h1 == serialize.hash_arrays({"k": 1}, [a.copy()])


def test_hash_arrays_covers_shape():
    flat = np.arange(4, dtype="<f4")
    square = flat.reshape(2, 2)
    assert serialize.hash_arrays({}, [flat]) != serialize.hash_arrays({}, [square])
