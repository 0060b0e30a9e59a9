"""Matrix file I/O: plain CSV and a raw binary format.

Binary layout: 16-byte header (magic ``EBPM``, u32 rows, u32 cols,
little-endian, 4 bytes padding) followed by row-major float64 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EBPM"
_HEADER = struct.Struct("<4sII4x")  # 16 bytes: magic, rows, cols, padding


class MatrixIOError(IOError):
    """Unreadable, ragged, or malformed matrix file."""


def write_matrix(path, A: np.ndarray, fmt: str = "csv"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    path = Path(path)
    if fmt == "csv":
        np.savetxt(path, A, delimiter=",", fmt="%.17g")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
            fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())
    else:
        raise MatrixIOError(f"unknown matrix format {fmt!r}")


def read_matrix(path, fmt: str = None) -> np.ndarray:
    """Read a matrix; format auto-detected from the magic bytes when omitted."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise MatrixIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) == 0:
        raise MatrixIOError(f"{path} is empty")
    if fmt is None:
        fmt = "bin" if raw[:4] == MAGIC else "csv"
    if fmt == "bin":
        if len(raw) < _HEADER.size:
            raise MatrixIOError(f"{path}: truncated binary header")
        magic, rows, cols = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise MatrixIOError(f"{path}: bad magic bytes for binary matrix")
        expected = _HEADER.size + rows * cols * 8
        if len(raw) != expected:
            raise MatrixIOError(
                f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}"
            )
        data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        return data.reshape(rows, cols).astype(float)
    if fmt == "csv":
        try:
            A = np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise MatrixIOError(f"{path}: malformed CSV ({exc})") from exc
        if A.size == 0:
            raise MatrixIOError(f"{path} contains no data")
        return A
    raise MatrixIOError(f"unknown matrix format {fmt!r}")


def standardize_rows(A: np.ndarray) -> np.ndarray:
    """Center and scale each row to mean 0, variance 1."""
    A = np.asarray(A, dtype=float)
    mu = A.mean(axis=1, keepdims=True)
    sd = A.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (A - mu) / sd
