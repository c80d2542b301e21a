"""Matrix files: Matrix Market (read through SciPy) and a raw dense format.

Dense binary layout, all little endian::

    offset 0   8 bytes   magic b"TQRDENSE"
    offset 8   uint64    rows
    offset 16  uint64    cols
    offset 24  float64   rows*cols entries, row-major
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse

DENSE_MAGIC = b"TQRDENSE"
_HEADER = np.dtype([("magic", "S8"), ("rows", "<u8"), ("cols", "<u8")])


class MatrixFileError(ValueError):
    """Unreadable or unsupported matrix file."""


class MalformedHeaderError(MatrixFileError):
    pass


class NotSquareError(MatrixFileError):
    pass


class ComplexFieldError(MatrixFileError):
    pass


@dataclass(frozen=True)
class MatrixMarketInfo:
    rows: int
    cols: int
    entries: int
    format: str
    field: str
    symmetry: str


def _read_banner(path: str) -> tuple[str, str, str]:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", errors="replace").strip()
    parts = first.split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket" or parts[1].lower() != "matrix":
        raise MalformedHeaderError(f"{path}: not a Matrix Market file (banner {first!r})")
    fmt, field, sym = (p.lower() for p in parts[2:])
    if fmt not in ("coordinate", "array"):
        raise MalformedHeaderError(f"{path}: unknown format {fmt!r}")
    if field not in ("real", "integer", "pattern", "complex", "double"):
        raise MalformedHeaderError(f"{path}: unknown field {field!r}")
    if sym not in ("general", "symmetric", "skew-symmetric", "hermitian"):
        raise MalformedHeaderError(f"{path}: unknown symmetry {sym!r}")
    return fmt, field, sym


def matrix_market_info(path: str) -> MatrixMarketInfo:
    fmt, field, sym = _read_banner(path)
    try:
        rows, cols, entries, *_ = scipy.io.mminfo(path)
    except (ValueError, OSError) as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from exc
    return MatrixMarketInfo(int(rows), int(cols), int(entries), fmt, field, sym)


def load_matrix_market(path: str, return_info: bool = False):
    """Dense square real matrix from a Matrix Market file (symmetric storage is mirrored)."""
    info = matrix_market_info(path)
    if info.field == "complex" or info.symmetry == "hermitian":
        raise ComplexFieldError(f"{path}: complex matrices are not supported")
    if info.rows != info.cols:
        raise NotSquareError(f"{path}: matrix is {info.rows}x{info.cols}")
    try:
        M = scipy.io.mmread(path)
    except (ValueError, IndexError, OSError) as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from exc
    A = M.toarray() if scipy.sparse.issparse(M) else np.asarray(M)
    A = np.ascontiguousarray(A, dtype=np.float64)
    return (A, info) if return_info else A


def write_matrix_market(path: str, A, symmetric: bool = False) -> None:
    """Coordinate-format writer; only the lower triangle is stored when ``symmetric``."""
    A = np.asarray(A, dtype=np.float64)
    if symmetric:
        if not np.array_equal(A, A.T):
            raise ValueError("matrix is not symmetric")
        M = scipy.sparse.coo_matrix(np.tril(A))
        scipy.io.mmwrite(path, M, symmetry="symmetric", precision=17)
    else:
        scipy.io.mmwrite(path, scipy.sparse.coo_matrix(A), symmetry="general", precision=17)


def write_dense(path: str, A) -> None:
    A = np.asarray(A, dtype="<f8")
    if A.ndim != 2:
        raise ValueError("expected a 2-D array")
    hdr = np.array([(DENSE_MAGIC, A.shape[0], A.shape[1])], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(np.ascontiguousarray(A).tobytes())


def read_dense(path: str) -> np.ndarray:
    size = os.path.getsize(path)
    if size < _HEADER.itemsize:
        raise MalformedHeaderError(f"{path}: file too short for a dense header")
    with open(path, "rb") as fh:
        hdr = np.frombuffer(fh.read(_HEADER.itemsize), dtype=_HEADER)[0]
        if hdr["magic"] != DENSE_MAGIC:
            raise MalformedHeaderError(f"{path}: bad magic {bytes(hdr['magic'])!r}")
        rows, cols = int(hdr["rows"]), int(hdr["cols"])
        if size != _HEADER.itemsize + 8 * rows * cols:
            raise MalformedHeaderError(f"{path}: payload size does not match {rows}x{cols}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(rows, cols).astype(np.float64)
