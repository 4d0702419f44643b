"""Matrix files: CSV (one sample per line) and the "RSAM" binary format.

RSAM layout: the 4 magic bytes ``RSAM``, rows and cols as little-endian
uint32, then ``rows * cols`` little-endian float32 values in row-major order.
"""

import math
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionOverflow, MalformedFile
from .numerics import as_matrix

MAGIC = b"RSAM"
_HEADER = struct.Struct("<4sII")
_U32_MAX = 2**32 - 1
_F32_MAX = float(np.finfo(np.float32).max)


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    return "csv" if Path(path).suffix.lower() in (".csv", ".txt") else "binary"


def save_matrix(path, M, fmt=None):
    M = as_matrix(M)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        with open(path, "w") as f:
            for row in M:
                f.write(",".join(repr(float(v)) for v in row))
                f.write("\n")
    elif fmt == "binary":
        rows, cols = M.shape
        if rows > _U32_MAX or cols > _U32_MAX:
            raise DimensionOverflow(f"shape {M.shape} does not fit uint32 dims")
        if np.any(np.abs(M) > _F32_MAX):
            raise DimensionOverflow("values exceed float32 range")
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, rows, cols))
            f.write(M.astype("<f4").tobytes(order="C"))
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_matrix(path, fmt=None):
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown matrix format {fmt!r}")


def _load_csv(path):
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise MalformedFile("unparsable number", line=lineno) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise MalformedFile(
                    f"expected {width} columns, found {len(values)}", line=lineno
                )
            if not all(math.isfinite(v) for v in values):
                raise MalformedFile("non-finite value", line=lineno)
            rows.append(values)
    if not rows:
        raise MalformedFile("empty matrix file", line=1)
    return np.array(rows, dtype=np.float64)


def _load_binary(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MalformedFile("truncated header", offset=len(data))
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedFile("bad magic", offset=0)
    count = rows * cols
    if count * 4 > len(data) - _HEADER.size and count > 2**31:
        raise DimensionOverflow(f"declared shape {rows}x{cols} is implausibly large")
    expected = _HEADER.size + 4 * count
    if len(data) != expected:
        raise MalformedFile(
            f"payload size mismatch: expected {expected} bytes, got {len(data)}",
            offset=min(len(data), expected),
        )
    M = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=count)
    M = M.astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(M)):
        bad = int(np.flatnonzero(~np.isfinite(M.ravel()))[0])
        raise MalformedFile("non-finite value", offset=_HEADER.size + 4 * bad)
    return M


def load_labels(path):
    labels = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line.split(",")[0]))
            except ValueError:
                raise MalformedFile("labels must be integers", line=lineno) from None
    return np.array(labels, dtype=np.int64)


def save_labels(path, labels):
    with open(path, "w") as f:
        for v in np.asarray(labels):
            f.write(f"{int(v)}\n")
