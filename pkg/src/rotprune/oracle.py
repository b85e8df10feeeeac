"""Brute-force reference computations.

Nothing here calls into :mod:`rotprune.compensation` or
:mod:`rotprune.pipeline`; each routine takes a different algorithmic route
from the solver it is used to check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import _kernels
from .tensor import ShapeError

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridSpec:
    angle_step: float = 1e-2
    include_reflections: bool = True

    def __post_init__(self):
        if not (0.0 < self.angle_step < math.pi):
            raise ValueError(f"angle_step must lie in (0, pi), got {self.angle_step}")

    def angles(self) -> np.ndarray:
        return np.arange(0.0, 2.0 * math.pi, self.angle_step)


FINE_GRID = GridSpec(1e-4, True)


def orth2(theta: float, reflect: bool) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    if reflect:
        return np.array([[c, s], [s, -c]])
    return np.array([[c, -s], [s, c]])


def best_orthogonal_2d(y, z, grid: GridSpec = GridSpec()) -> Tuple[float, np.ndarray]:
    """Scan O(2) on an angle grid; return (min residual, minimising matrix)."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if y.shape != z.shape or y.ndim != 2 or y.shape[0] != 2:
        raise ShapeError(f"best_orthogonal_2d needs two 2xN matrices, got {y.shape} and {z.shape}")
    angles = grid.angles()
    sq = _kernels.orth2_scan(y, z, angles, grid.include_reflections)
    b, a = np.unravel_index(int(np.argmin(sq)), sq.shape)
    return math.sqrt(max(sq[b, a], 0.0)), orth2(float(angles[a]), bool(b == 1))


def _min_norm_lstsq_qr(m: np.ndarray, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Minimum-norm solution of min ||m u - rhs|| via pivoted QR.

    Rank-deficient systems go through a complete orthogonal decomposition.
    """
    q, r, perm = scipy.linalg.qr(m, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size and diag[0] > 0 else 0
    n = m.shape[1]
    u = np.zeros((n,) + rhs.shape[1:])
    if rank == 0:
        return u
    c = q[:, :rank].T @ rhs
    t = r[:rank, :]
    if rank == n:
        sol = scipy.linalg.solve_triangular(t, c)
    else:
        q2, r2 = scipy.linalg.qr(t.T, mode="economic")
        sol = q2 @ scipy.linalg.solve_triangular(r2, c, trans="T")
    u[perm] = sol
    return u


def ols_per_row(y, z) -> np.ndarray:
    """Least-squares map A with A z ~ y, solved one output row at a time."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.ndim != 2 or z.ndim != 2 or y.shape[1] != z.shape[1]:
        raise ShapeError(f"ols_per_row: incompatible {y.shape} and {z.shape}")
    a = np.empty((y.shape[0], z.shape[0]))
    zt = z.T
    for i in range(y.shape[0]):
        a[i] = _min_norm_lstsq_qr(zt, y[i])
    return a


def line_search_scale(y, qz, tol: float = 1e-10) -> float:
    """Golden-section minimum of ||y - s * qz||_F over s in [0, s_hi]."""
    y = np.asarray(y, dtype=np.float64)
    qz = np.asarray(qz, dtype=np.float64)
    if y.shape != qz.shape:
        raise ShapeError(f"line_search_scale: shapes {y.shape} and {qz.shape} differ")
    nqz = math.sqrt(float(np.sum(qz * qz)))
    if nqz == 0.0:
        return 0.0

    def f(s: float) -> float:
        d = y - s * qz
        return float(np.sum(d * d))

    lo, hi = 0.0, 2.0 * math.sqrt(float(np.sum(y * y))) / max(nqz, 1e-300)
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def naive_matmul(a, b) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"naive_matmul: cannot multiply {a.shape} by {b.shape}")
    return _kernels.naive_matmul(a, b)


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "none":
        return h
    if name == "relu":
        return np.where(h > 0.0, h, 0.0)
    if name == "gelu":
        erf = np.vectorize(math.erf)
        return 0.5 * h * (1.0 + erf(h / math.sqrt(2.0)))
    raise ValueError(f"unknown nonlinearity {name!r}")


def forward_layers(
    layers: Iterable[Tuple[np.ndarray, Optional[Sequence[int]], Optional[np.ndarray], str]],
    x,
) -> list:
    """Straight-line evaluation of a layer stack.

    Each entry is ``(weight, kept_inputs_or_None, bias_or_None, nonlinearity)``.
    Returns ``[(layer_input, pre_activation_output), ...]``.
    """
    h = np.asarray(x, dtype=np.float64)
    trace = []
    for weight, kept, bias, act in layers:
        inp = h if kept is None else h[list(kept), :]
        out = naive_matmul(weight, inp)
        if bias is not None:
            out = out + np.asarray(bias)[:, None]
        trace.append((inp, out))
        h = _act(act, out)
    return trace
