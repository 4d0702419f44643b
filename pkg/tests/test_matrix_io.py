import struct

import numpy as np
import pytest

from resa.errors import MalformedFile
from resa.matrix_io import load_labels, load_matrix, save_labels, save_matrix


def test_binary_roundtrip_bitwise(tmp_path, rng):
    M = rng.standard_normal((13, 5)).astype(np.float32).astype(np.float64)
    p = tmp_path / "m.rsam"
    save_matrix(p, M, "binary")
    assert load_matrix(p, "binary").tobytes() == M.tobytes()


def test_binary_layout(tmp_path):
    p = tmp_path / "m.bin"
    save_matrix(p, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], "binary")
    raw = p.read_bytes()
    assert raw[:4] == b"RSAM"
    assert struct.unpack("<II", raw[4:12]) == (2, 3)
    assert struct.unpack("<6f", raw[12:]) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def test_binary_truncated(tmp_path):
    p = tmp_path / "m.bin"
    save_matrix(p, np.ones((3, 3)), "binary")
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(MalformedFile):
        load_matrix(p, "binary")


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "m.bin"
    p.write_bytes(b"NOPE" + struct.pack("<II", 1, 1) + struct.pack("<f", 1.0))
    with pytest.raises(MalformedFile) as exc:
        load_matrix(p, "binary")
    assert exc.value.offset == 0


def test_csv_ragged_line_number(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2,3\n4,5,6\n7,8\n")
    with pytest.raises(MalformedFile) as exc:
        load_matrix(p)
    assert exc.value.line == 3


def test_csv_unparsable(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2\nx,3\n")
    with pytest.raises(MalformedFile) as exc:
        load_matrix(p)
    assert exc.value.line == 2


def test_csv_roundtrip_large(tmp_path, rng):
    M = rng.standard_normal((1000, 64))
    p = tmp_path / "big.csv"
    save_matrix(p, M)
    assert np.max(np.abs(load_matrix(p) - M)) <= 1e-6


def test_labels_roundtrip(tmp_path):
    p = tmp_path / "y.txt"
    save_labels(p, [0, 3, 1])
    assert load_labels(p).tolist() == [0, 3, 1]
