"""Matrix serialization: labeled CSV and a compact binary container.

The binary layout is magic ``MRK1``, two little-endian uint64 dimensions
(rows, cols), then row-major little-endian float64 payload.
"""
from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import DataError

MAGIC = b"MRK1"
_HEADER = struct.Struct("<4sQQ")


def save_matrix_csv(path, matrix, labels=None) -> None:
    """Write a matrix as CSV with an optional label header and row labels."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-dimensional, got {m.ndim}")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if labels is not None:
            if len(labels) != m.shape[1]:
                raise ValueError("label count does not match column count")
            writer.writerow(["id", *labels])
        for i in range(m.shape[0]):
            row = [repr(float(v)) for v in m[i]]
            if labels is not None:
                writer.writerow([labels[i] if i < len(labels) else str(i), *row])
            else:
                writer.writerow(row)


def load_matrix_csv(path) -> tuple[np.ndarray, list[str] | None]:
    """Read a matrix written by :func:`save_matrix_csv`."""
    with open(path, newline="") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise DataError(f"matrix file {path} is empty")
    labels: list[str] | None = None
    if rows[0] and rows[0][0] == "id":
        labels = rows[0][1:]
        rows = rows[1:]
        body = [row[1:] for row in rows]
    else:
        body = rows
    try:
        matrix = np.array([[float(cell) for cell in row] for row in body])
    except ValueError as exc:
        raise DataError(f"matrix file {path} has a non-numeric cell: {exc}") from None
    return matrix, labels


def save_matrix_binary(path, matrix) -> None:
    """Write a matrix in the MRK1 binary container."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-dimensional, got {m.ndim}")
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
        handle.write(m.tobytes(order="C"))


def load_matrix_binary(path) -> np.ndarray:
    """Read a matrix from the MRK1 binary container."""
    with open(path, "rb") as handle:
        header = handle.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise DataError(f"binary matrix file {path} is truncated")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DataError(
                f"binary matrix file {path} has bad magic {magic!r}, expected {MAGIC!r}"
            )
        payload = handle.read(rows * cols * 8)
        if len(payload) != rows * cols * 8:
            raise DataError(f"binary matrix file {path} payload is truncated")
        extra = handle.read(1)
        if extra:
            raise DataError(f"binary matrix file {path} has trailing bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)
