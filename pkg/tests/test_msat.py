import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpasal.autodiff import MSATError, load_checkpoint, load_tensor, msat, save_checkpoint, save_tensor


def test_header_layout(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_tensor(tmp_path / "a.msat", a)
    raw = (tmp_path / "a.msat").read_bytes()
    expected = b"MSAT" + struct.pack("<HBB", 1, 0, 2) + struct.pack("<II", 2, 3) + a.astype("<f4").tobytes()
    assert raw == expected


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_bitwise(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("msat") / "t.msat"
    save_tensor(path, a)
    b = load_tensor(path)
    assert b.dtype == np.float32 and b.shape == a.shape
    assert b.tobytes() == a.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "a.msat"
    save_tensor(path, np.zeros(3))
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(MSATError, match="bad magic"):
        load_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "a.msat"
    save_tensor(path, np.zeros((4, 4)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(MSATError, match="truncated"):
        load_tensor(path)


def test_unknown_dtype_and_version(tmp_path):
    path = tmp_path / "a.msat"
    save_tensor(path, np.zeros(2))
    raw = bytearray(path.read_bytes())
    raw[6] = 7
    path.write_bytes(bytes(raw))
    with pytest.raises(MSATError, match="dtype"):
        load_tensor(path)
    raw[6] = 0
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(MSATError, match="version"):
        load_tensor(path)


def test_checkpoint_sequence_layout(tmp_path):
    tensors = {"w": np.ones((2, 2), np.float32), "bias": np.zeros(3, np.float32)}
    save_checkpoint(tmp_path / "c.msat", tensors)
    raw = (tmp_path / "c.msat").read_bytes()
    assert raw[:3] == struct.pack("<H", 1) + b"w"
    back = load_checkpoint(tmp_path / "c.msat")
    assert list(back) == ["w", "bias"]
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_peek_shape(tmp_path):
    save_tensor(tmp_path / "a.msat", np.zeros((3, 1, 4)))
    assert msat.peek_shape(tmp_path / "a.msat") == (3, 1, 4)
