"""Hot inner loops, compiled with numba when available.

Set ``ROTPRUNE_DISABLE_NUMBA=1`` to force the pure-numpy path. Both paths
are always importable as ``*_numpy`` / ``*_numba`` so they can be compared
directly; the unsuffixed names are the dispatched versions.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("ROTPRUNE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


# --------------------------------------------------------------------------
# naive product (oracle for matmul)
# --------------------------------------------------------------------------

def _naive_matmul_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


naive_matmul_numba = _njit(_naive_matmul_loop)


def naive_matmul_numpy(a, b):
    # Broadcast outer products, summed in index order (no BLAS).
    return (a[:, :, None] * b[None, :, :]).sum(axis=1)


# --------------------------------------------------------------------------
# per-row statistics
# --------------------------------------------------------------------------

def _row_stats_loop(x, ddof):
    """Per-row Euclidean norm and variance (two-pass)."""
    rows, n = x.shape
    norms = np.empty(rows)
    var = np.empty(rows)
    for i in range(rows):
        s = 0.0
        sq = 0.0
        for t in range(n):
            s += x[i, t]
            sq += x[i, t] * x[i, t]
        mean = s / n
        acc = 0.0
        for t in range(n):
            d = x[i, t] - mean
            acc += d * d
        norms[i] = np.sqrt(sq)
        var[i] = acc / (n - ddof)
    return norms, var


row_stats_numba = _njit(_row_stats_loop)


def row_stats_numpy(x, ddof):
    return np.sqrt(np.einsum("ij,ij->i", x, x)), x.var(axis=1, ddof=ddof)


def _col_norms_loop(w):
    rows, cols = w.shape
    out = np.zeros(cols)
    for i in range(rows):
        for j in range(cols):
            out[j] += w[i, j] * w[i, j]
    return np.sqrt(out)


col_norms_numba = _njit(_col_norms_loop)


def col_norms_numpy(w):
    return np.sqrt(np.einsum("ij,ij->j", w, w))


# --------------------------------------------------------------------------
# exhaustive scan over O(2)
# --------------------------------------------------------------------------

def _orth2_scan_loop(y, z, angles, reflect):
    """Squared residual ||y - Q z||_F^2 for each angle (and reflection bit).

    Q(theta) = [[c, -s], [s, c]] for rotations and [[c, s], [s, -c]] for
    reflections. Each residual is summed column by column from scratch.
    """
    n = y.shape[1]
    g = angles.shape[0]
    nb = 2 if reflect else 1
    out = np.empty((nb, g))
    for b in range(nb):
        sign = -1.0 if b == 1 else 1.0
        for a in range(g):
            c = np.cos(angles[a])
            s = np.sin(angles[a])
            acc = 0.0
            for t in range(n):
                z0 = z[0, t]
                z1 = z[1, t]
                q0 = c * z0 - sign * s * z1
                q1 = s * z0 + sign * c * z1
                d0 = y[0, t] - q0
                d1 = y[1, t] - q1
                acc += d0 * d0 + d1 * d1
            out[b, a] = acc
    return out


orth2_scan_numba = _njit(_orth2_scan_loop)


def orth2_scan_numpy(y, z, angles, reflect, chunk=8192):
    nb = 2 if reflect else 1
    out = np.empty((nb, angles.shape[0]))
    for b in range(nb):
        sign = -1.0 if b == 1 else 1.0
        for lo in range(0, angles.shape[0], chunk):
            th = angles[lo:lo + chunk, None]
            c, s = np.cos(th), np.sin(th)
            q0 = c * z[0] - sign * s * z[1]
            q1 = s * z[0] + sign * c * z[1]
            out[b, lo:lo + chunk] = ((y[0] - q0) ** 2 + (y[1] - q1) ** 2).sum(axis=1)
    return out


if USE_NUMBA:
    naive_matmul = naive_matmul_numba
    row_stats = row_stats_numba
    col_norms = col_norms_numba
    orth2_scan = orth2_scan_numba
else:
    naive_matmul = naive_matmul_numpy
    row_stats = row_stats_numpy
    col_norms = col_norms_numpy
    orth2_scan = orth2_scan_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
