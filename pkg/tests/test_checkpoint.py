"""Checkpoint container: byte-level format, roundtrips, and store loading."""

import struct

import numpy as np
import pytest

from trivit.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointError,
    load_arrays,
    load_into_store,
    save_arrays,
    save_store,
)
from trivit.params import ParameterStore


@pytest.fixture
def arrays():
    rng = np.random.default_rng(0)
    return {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "a.b": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
    }


def test_roundtrip_exact(tmp_path, arrays):
    path = tmp_path / "ck.bin"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])
        assert loaded[name].dtype == np.float32


def test_header_layout(tmp_path, arrays):
    path = tmp_path / "ck.bin"
    save_arrays(path, arrays)
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<I", blob, 4)[0] == VERSION
    # first record is the lexicographically smallest path
    (name_len,) = struct.unpack_from("<I", blob, 8)
    assert blob[12 : 12 + name_len].decode() == "a.b"


def test_deterministic_bytes(tmp_path, arrays):
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    save_arrays(p1, arrays)
    save_arrays(p2, dict(reversed(list(arrays.items()))))  # insertion order differs
    assert p1.read_bytes() == p2.read_bytes()


def test_float64_input_stored_as_float32(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, {"x": np.array([1.0, 2.0])})
    assert load_arrays(path)["x"].dtype == np.float32


def test_bad_magic(tmp_path):
    path = tmp_path / "ck.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(CheckpointError, match="magic"):
        load_arrays(path)


def test_bad_version(tmp_path):
    path = tmp_path / "ck.bin"
    path.write_bytes(MAGIC + struct.pack("<I", 99))
    with pytest.raises(CheckpointError, match="version"):
        load_arrays(path)


def test_truncated_data(tmp_path, arrays):
    path = tmp_path / "ck.bin"
    save_arrays(path, arrays)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_arrays(path)


def _store():
    store = ParameterStore()
    store.add("w", np.ones((2, 2), dtype=np.float32))
    store.add("b", np.zeros(2, dtype=np.float32))
    return store


def test_save_store_and_reload(tmp_path):
    store = _store()
    store["w"].data[...] = 7.0
    path = tmp_path / "ck.bin"
    save_store(path, store)

    fresh = _store()
    leftover = load_into_store(path, fresh)
    assert leftover == {}
    np.testing.assert_array_equal(fresh["w"].data, np.full((2, 2), 7.0))


def test_extra_arrays_returned_via_prefix(tmp_path):
    store = _store()
    path = tmp_path / "ck.bin"
    save_store(path, store, extra={"proto.bank": np.arange(3.0, dtype=np.float32)})

    fresh = _store()
    leftover = load_into_store(path, fresh, prefix_filter="proto.")
    assert list(leftover) == ["proto.bank"]
    np.testing.assert_array_equal(leftover["proto.bank"], [0.0, 1.0, 2.0])


def test_extra_collision_rejected(tmp_path):
    store = _store()
    with pytest.raises(CheckpointError, match="collide"):
        save_store(tmp_path / "ck.bin", store, extra={"w": np.zeros(1)})


def test_unexpected_array_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, {"w": np.ones((2, 2)), "b": np.zeros(2), "rogue": np.ones(1)})
    with pytest.raises(CheckpointError, match="rogue"):
        load_into_store(path, _store())


def test_missing_param_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, {"w": np.ones((2, 2))})
    with pytest.raises(CheckpointError, match="missing"):
        load_into_store(path, _store())


def test_shape_mismatch_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, {"w": np.ones((2, 3)), "b": np.zeros(2)})
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_into_store(path, _store())


def test_empty_container_roundtrip(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, {})
    assert load_arrays(path) == {}
