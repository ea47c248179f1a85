"""Tests for the PQT1 binary tensor container."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from po2quant import TensorFormatError, read_tensor, write_tensor


def test_golden_float_bytes(tmp_path):
    path = tmp_path / "t.pqt"
    write_tensor(path, np.array([[1.5, -2.0]]))
    expected = (
        b"PQT1"
        + struct.pack("<BB", 0, 2)
        + struct.pack("<2Q", 1, 2)
        + struct.pack("<2d", 1.5, -2.0)
    )
    assert path.read_bytes() == expected


def test_golden_int_bytes(tmp_path):
    path = tmp_path / "t.pqt"
    write_tensor(path, np.array([3, -4], dtype=np.int64))
    expected = b"PQT1" + struct.pack("<BB", 1, 1) + struct.pack("<Q", 2) + struct.pack("<2q", 3, -4)
    assert path.read_bytes() == expected


def test_scalar_round_trip(tmp_path):
    path = tmp_path / "t.pqt"
    write_tensor(path, np.array(2.5))
    out = read_tensor(path)
    assert out.shape == ()
    assert out == 2.5


def test_int_extremes_round_trip(tmp_path):
    path = tmp_path / "t.pqt"
    arr = np.array([np.iinfo(np.int64).min, 0, np.iinfo(np.int64).max])
    write_tensor(path, arr)
    np.testing.assert_array_equal(read_tensor(path), arr)


def test_non_contiguous_array_writes_logical_order(tmp_path):
    path = tmp_path / "t.pqt"
    arr = np.arange(12.0).reshape(3, 4).T
    write_tensor(path, arr)
    np.testing.assert_array_equal(read_tensor(path), arr)


def test_small_int_dtype_widens_to_int64(tmp_path):
    path = tmp_path / "t.pqt"
    write_tensor(path, np.array([1, 2, 3], dtype=np.int8))
    out = read_tensor(path)
    assert out.dtype == np.int64
    np.testing.assert_array_equal(out, [1, 2, 3])


@given(
    hnp.arrays(
        np.float64,
        hnp.array_shapes(min_dims=0, max_dims=4, min_side=1, max_side=6),
        elements=st.floats(allow_nan=False, width=64),
    )
)
def test_float_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("io") / "t.pqt"
    write_tensor(path, arr)
    out = read_tensor(path)
    assert out.dtype == np.float64
    assert out.shape == arr.shape
    np.testing.assert_array_equal(out, arr)


@given(
    hnp.arrays(
        np.int64,
        hnp.array_shapes(min_dims=0, max_dims=3, min_side=1, max_side=8),
        elements=st.integers(min_value=-(2**63), max_value=2**63 - 1),
    )
)
def test_int_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("io") / "t.pqt"
    write_tensor(path, arr)
    np.testing.assert_array_equal(read_tensor(path), arr)


class TestMalformedFiles:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.pqt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_too_short_for_header(self, tmp_path):
        path = tmp_path / "t.pqt"
        path.write_bytes(b"PQT1\x00")
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_unknown_dtype_tag(self, tmp_path):
        path = tmp_path / "t.pqt"
        path.write_bytes(b"PQT1" + struct.pack("<BB", 9, 0))
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_truncated_extent_list(self, tmp_path):
        path = tmp_path / "t.pqt"
        path.write_bytes(b"PQT1" + struct.pack("<BB", 0, 2) + struct.pack("<Q", 3))
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pqt"
        write_tensor(path, np.arange(4.0))
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "t.pqt"
        write_tensor(path, np.arange(4.0))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_zero_extent(self, tmp_path):
        path = tmp_path / "t.pqt"
        path.write_bytes(b"PQT1" + struct.pack("<BB", 0, 1) + struct.pack("<Q", 0))
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_write_rejects_unsupported_dtype(self, tmp_path):
        with pytest.raises(TensorFormatError):
            write_tensor(tmp_path / "t.pqt", np.array([True, False]))
        with pytest.raises(TensorFormatError):
            write_tensor(tmp_path / "t.pqt", np.array([1 + 2j]))
