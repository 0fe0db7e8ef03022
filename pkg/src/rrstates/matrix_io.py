"""Binary and CSV serialization of square matrices.

Binary layout: a 16-byte header (magic ``RRCM``, then little-endian u32
version, dimension and approach code) followed by dim*dim little-endian
float64 values in row-major order.  Approach codes: 0 none, 1 covariance
approach, 2 correlation approach.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestError

MAGIC = b"RRCM"
VERSION = 1
HEADER = struct.Struct("<4sIII")
CSV_CONFIRM_DIM = 1000


def _approach_code(approach) -> int:
    if approach is None:
        return 0
    if isinstance(approach, int):
        return approach
    return approach.code


def write_matrix(path, matrix, approach=None) -> None:
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("only square matrices can be written")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, m.shape[0], _approach_code(approach)))
        fh.write(np.ascontiguousarray(m).tobytes(order="C"))


def read_header(path) -> tuple:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise IngestError(f"{path}: truncated header")
    magic, version, dim, code = HEADER.unpack(raw)
    if magic != MAGIC:
        raise IngestError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IngestError(f"{path}: unsupported version {version}")
    return dim, code


def read_matrix(path, mmap=False):
    """Return ``(matrix, approach_code)``; ``mmap=True`` avoids loading the payload."""
    dim, code = read_header(path)
    expected = HEADER.size + 8 * dim * dim
    size = Path(path).stat().st_size
    if size != expected:
        raise IngestError(f"{path}: size {size} does not match dimension {dim}")
    if mmap:
        m = np.memmap(path, dtype="<f8", mode="r", offset=HEADER.size, shape=(dim, dim))
    else:
        m = np.fromfile(path, dtype="<f8", offset=HEADER.size).reshape(dim, dim)
    return m, code


def open_matrix_for_write(path, dim, approach=None) -> np.memmap:
    """Create a binary matrix file and map its payload for incremental writes."""
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, dim, _approach_code(approach)))
        fh.truncate(HEADER.size + 8 * dim * dim)
    return np.memmap(path, dtype="<f8", mode="r+", offset=HEADER.size, shape=(dim, dim))


def write_matrix_csv(path, matrix, labels, confirm_large=False) -> None:
    """CSV with ``labels`` as header row and first column."""
    m = np.asarray(matrix)
    if len(labels) != m.shape[0]:
        raise ConfigError("label count does not match matrix dimension")
    if m.shape[0] > CSV_CONFIRM_DIM and not confirm_large:
        raise ConfigError(
            f"refusing to write a {m.shape[0]}x{m.shape[0]} CSV without confirm_large=True"
        )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([""] + [str(x) for x in labels])
        for label, row in zip(labels, m):
            w.writerow([str(label)] + [repr(float(x)) for x in row])


def read_matrix_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return values, labels
