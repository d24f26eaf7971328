"""Binary tensor container: round trips and corruption handling."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from st3d.container import MAGIC, Container, ContainerError, read_container, write_container

names = st.text(
    st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")),
    min_size=1, max_size=30)
dtypes = st.sampled_from([np.float32, np.float64, np.int64])
shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)


@st.composite
def tensor_dicts(draw):
    n = draw(st.integers(min_value=0, max_value=4))
    out = {}
    for _ in range(n):
        name = draw(names.filter(lambda s: s not in out))
        dt = draw(dtypes)
        shape = draw(shapes)
        if np.dtype(dt).kind == "f":
            arr = draw(hnp.arrays(dt, shape,
                                  elements=st.floats(-1e6, 1e6, width=32)))
        else:
            arr = draw(hnp.arrays(dt, shape,
                                  elements=st.integers(-2**40, 2**40)))
        out[name] = arr
    return out


@settings(max_examples=40, deadline=None)
@given(arrays=tensor_dicts())
def test_round_trip_bit_identical(arrays):
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/t.st3d"
        write_container(path, arrays)
        got = read_container(path)
        _check_round_trip(arrays, got)


def _check_round_trip(arrays, got):
    assert got.names() == list(arrays)
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype
        assert got[name].shape == arr.shape
        assert np.array_equal(got[name], arr, equal_nan=True)
        assert got[name].tobytes() == np.ascontiguousarray(arr).tobytes()


def test_write_is_deterministic(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3),
              "b": np.array([1, 2, 3], dtype=np.int64)}
    p1, p2 = tmp_path / "a.st3d", tmp_path / "b.st3d"
    write_container(p1, arrays, meta={"a": {"kind": "demo"}})
    write_container(p2, arrays, meta={"a": {"kind": "demo"}})
    assert p1.read_bytes() == p2.read_bytes()


def test_meta_round_trip(tmp_path):
    path = tmp_path / "m.st3d"
    meta = {"basis": {"index": [[0, 0], [1, 1]], "rule": "2m"}}
    write_container(path, {"basis": np.zeros((2, 2))}, meta=meta)
    got = read_container(path)
    assert got.meta["basis"] == meta["basis"]


def test_meta_for_unknown_entry_rejected(tmp_path):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "x.st3d", {"a": np.zeros(1)},
                        meta={"b": {}})


def test_non_contiguous_and_big_endian_inputs(tmp_path):
    path = tmp_path / "c.st3d"
    base = np.arange(24.0).reshape(4, 6)
    arrays = {"strided": base[:, ::2],
              "be": np.arange(5, dtype=">i8").astype(np.int64)}
    write_container(path, arrays)
    got = read_container(path)
    assert np.array_equal(got["strided"], base[:, ::2])
    assert got["be"].dtype == np.int64


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "x.st3d", {"a": np.zeros(3, dtype=np.int32)})


def test_bad_magic(tmp_path):
    path = tmp_path / "x.st3d"
    write_container(path, {"a": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="magic"):
        read_container(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.st3d"
    write_container(path, {"a": np.zeros(4)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ContainerError, match="outside"):
        read_container(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "x.st3d"
    path.write_bytes(MAGIC[:5])
    with pytest.raises(ContainerError, match="truncated"):
        read_container(path)


def _craft(path, manifest, payload):
    doc = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)
        fh.write(payload)


def test_overlapping_ranges_rejected(tmp_path):
    path = tmp_path / "x.st3d"
    entry = {"dtype": "f64", "shape": [2], "byte_offset": 0,
             "byte_length": 16}
    _craft(path, [dict(entry, name="a"),
                  dict(entry, name="b", byte_offset=8)],
           bytes(24))
    with pytest.raises(ContainerError, match="overlap"):
        read_container(path)


def test_length_mismatch_rejected(tmp_path):
    path = tmp_path / "x.st3d"
    _craft(path, [{"name": "a", "dtype": "f64", "shape": [2],
                   "byte_offset": 0, "byte_length": 24}], bytes(24))
    with pytest.raises(ContainerError, match="match shape"):
        read_container(path)


def test_duplicate_names_rejected(tmp_path):
    path = tmp_path / "x.st3d"
    entry = {"name": "a", "dtype": "f64", "shape": [1],
             "byte_offset": 0, "byte_length": 8}
    _craft(path, [entry, dict(entry, byte_offset=8)], bytes(16))
    with pytest.raises(ContainerError, match="duplicate"):
        read_container(path)


def test_unknown_dtype_rejected(tmp_path):
    path = tmp_path / "x.st3d"
    _craft(path, [{"name": "a", "dtype": "f16", "shape": [1],
                   "byte_offset": 0, "byte_length": 2}], bytes(2))
    with pytest.raises(ContainerError, match="dtype"):
        read_container(path)


def test_manifest_must_be_list(tmp_path):
    path = tmp_path / "x.st3d"
    _craft(path, {"name": "a"}, b"")
    with pytest.raises(ContainerError, match="list"):
        read_container(path)
