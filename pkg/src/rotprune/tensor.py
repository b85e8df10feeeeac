"""Dense double-precision matrices and the linear algebra the solvers need.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
single validation point; everything else assumes its output.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from . import _kernels

MAGIC = b"RCPU"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

PathLike = Union[str, Path]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(ValueError):
    """A matrix contains NaN or Inf."""


class SolverError(RuntimeError):
    """A decomposition failed to converge."""


class TensorFormatError(ValueError):
    """A tensor file is malformed."""


def as_matrix(a, name: str = "matrix", copy: bool = False) -> np.ndarray:
    """Validate ``a`` as a finite, non-empty 2-D float64 array."""
    m = np.array(a, dtype=np.float64, copy=copy) if copy else np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name}: empty shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name}: contains non-finite entries")
    return m


def _check_finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{what} produced non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return _check_finite(out, "matmul")


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def svd(m) -> SvdResult:
    """Thin SVD ``m = u @ diag(sigma) @ vt`` with ``sigma`` descending.

    For square inputs ``u`` and ``vt`` are both orthogonal. Column signs are
    whatever LAPACK returns; callers must not depend on them.
    """
    m = as_matrix(m, "svd input")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u, s, vt)


def pinv(m, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values at or below ``rcond * sigma_max`` are treated as zero.
    """
    if not rcond > 0:
        raise ValueError(f"rcond must be positive, got {rcond}")
    m = as_matrix(m, "pinv input")
    res = svd(m)
    if res.sigma.size == 0 or res.sigma[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    keep = res.sigma > rcond * res.sigma[0]
    inv_s = np.zeros_like(res.sigma)
    inv_s[keep] = 1.0 / res.sigma[keep]
    return (res.vt.T * inv_s) @ res.u.T


def frob_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def row_norm(m) -> np.ndarray:
    norms, _ = _kernels.row_stats(np.ascontiguousarray(m, dtype=np.float64), 0)
    return norms


def row_variance(m, ddof: int = 0) -> np.ndarray:
    """Per-row variance; ``ddof=0`` (the default) is the population form."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.shape[1] - ddof < 1:
        raise ShapeError(f"row_variance: need more than {ddof} columns, got {m.shape[1]}")
    _, var = _kernels.row_stats(m, ddof)
    return var


def col_norm(m) -> np.ndarray:
    return _kernels.col_norms(np.ascontiguousarray(m, dtype=np.float64))


# --------------------------------------------------------------------------
# binary tensor files
# --------------------------------------------------------------------------

def write_tensor(dest: Union[PathLike, BinaryIO], m) -> None:
    """Write ``m`` as: magic, u32 version, u64 rows, u64 cols, f64 LE row-major."""
    m = as_matrix(m, "tensor")
    payload = _HEADER.pack(MAGIC, FORMAT_VERSION, m.shape[0], m.shape[1])
    payload += np.ascontiguousarray(m, dtype="<f8").tobytes()
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        Path(dest).write_bytes(payload)


def read_tensor(src: Union[PathLike, BinaryIO]) -> np.ndarray:
    raw = src.read() if hasattr(src, "read") else Path(src).read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError("truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise TensorFormatError(f"payload size {len(raw)} != expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return as_matrix(data.reshape(rows, cols), "tensor file")
