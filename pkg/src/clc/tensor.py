"""Dense array helpers and the CLCE embedding file format.

Matrices and vectors are plain numpy arrays. The ``as_matrix`` / ``as_vector``
constructors enforce shape and finiteness; everything else is a pure function.

Two numeric modes exist: ``"verify"`` (float64, used by every test and
gradient check) and ``"fast"`` (float32).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import EmptyInput, NonFinite, ParseError, ShapeMismatch, ZeroNorm

MODES = ("verify", "fast")
EPS_NORM = 1e-12

CLCE_MAGIC = b"CLCE"
CLCE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def dtype_for(mode: str = "verify") -> np.dtype:
    if mode == "verify":
        return np.dtype(np.float64)
    if mode == "fast":
        return np.dtype(np.float32)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def _float_array(x, mode: str | None) -> np.ndarray:
    if mode is None:
        arr = np.asarray(x)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float64, copy=False)
    else:
        arr = np.asarray(x, dtype=dtype_for(mode))
    if not np.all(np.isfinite(arr)):
        raise NonFinite("array contains NaN or Inf")
    return arr


def as_matrix(x, mode: str | None = None) -> np.ndarray:
    """Return ``x`` as a finite 2-D float array (rows x cols, row-major)."""
    arr = _float_array(x, mode)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def as_vector(x, mode: str | None = None) -> np.ndarray:
    arr = _float_array(x, mode)
    if arr.ndim != 1:
        raise ShapeMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def l2_normalize(v, eps: float = EPS_NORM) -> np.ndarray:
    v = as_vector(v)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= eps:
        raise ZeroNorm(f"cannot normalize vector with norm {norm:g}")
    return v / norm


def l2_normalize_rows(m, eps: float = EPS_NORM) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row; returns ``(unit_rows, norms)``."""
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms <= eps):
        bad = int(np.argmax(norms <= eps))
        raise ZeroNorm(f"row {bad} has norm {norms[bad]:g}")
    return m / norms[:, None], norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``x / |x|`` back to ``x`` (row-wise)."""
    radial = np.einsum("ij,ij->i", unit, grad_unit)
    return (grad_unit - unit * radial[:, None]) / norms[:, None]


def log_sum_exp(v) -> float:
    if np.size(v) == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    v = as_vector(v)
    m = v.max()
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(m: np.ndarray) -> np.ndarray:
    if m.shape[-1] == 0:
        raise EmptyInput("log_sum_exp over an empty axis")
    top = m.max(axis=-1, keepdims=True)
    return (top + np.log(np.sum(np.exp(m - top), axis=-1, keepdims=True)))[..., 0]


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mean_pool_rows(m) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] == 0:
        raise ShapeMismatch("cannot pool a matrix with zero rows")
    return m.mean(axis=0)


# --- CLCE binary format -------------------------------------------------------


def write_clce(path: str | os.PathLike, m) -> None:
    """Write a matrix as CLCE: magic, version, rows, cols, then f32 LE data."""
    m = np.atleast_2d(as_matrix(np.atleast_2d(m)))
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLCE_MAGIC, CLCE_VERSION, rows, cols))
        fh.write(m.astype("<f4").tobytes(order="C"))


def read_clce_header(path: str | os.PathLike) -> tuple[int, int, int]:
    """Return ``(rows, cols, n_floats_present)`` without loading the payload."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ParseError(f"{path}: truncated CLCE header")
    magic, version, rows, cols = _HEADER.unpack(head)
    if magic != CLCE_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != CLCE_VERSION:
        raise ParseError(f"{path}: unsupported CLCE version {version}")
    payload = path.stat().st_size - _HEADER.size
    return rows, cols, payload // 4


def read_clce(path: str | os.PathLike, mode: str = "verify") -> np.ndarray:
    rows, cols, present = read_clce_header(path)
    if present != rows * cols:
        raise ShapeMismatch(
            f"{path}: header declares {rows}x{cols} ({rows * cols} floats) "
            f"but file holds {present}"
        )
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        data = np.frombuffer(fh.read(4 * rows * cols), dtype="<f4")
    return as_matrix(data.reshape(rows, cols), mode)
