"""Closed-form maps that pull the kept output Z back toward the original Y.

All solvers take ``y`` and ``z`` of shape ``(d_out, N)`` and return a
:class:`CompensationResult` describing a map applied on the output side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import tensor
from .tensor import ShapeError

VARIANTS = ("none", "rot", "rot_scale", "ls", "bias")


@dataclass(frozen=True)
class CompensationResult:
    variant: str
    q: Optional[np.ndarray] = None
    s: float = 1.0
    a: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    in_sample_residual: float = 0.0

    def transform(self, z) -> np.ndarray:
        """Compensated output for a kept-path output ``z``."""
        z = np.asarray(z, dtype=np.float64)
        if self.variant == "rot":
            return self.q @ z
        if self.variant == "rot_scale":
            return self.s * (self.q @ z)
        if self.variant == "ls":
            return self.a @ z
        if self.variant == "bias":
            return z + self.bias[:, None]
        return z


def _pair(y, z) -> Tuple[np.ndarray, np.ndarray]:
    y = tensor.as_matrix(y, "y")
    z = tensor.as_matrix(z, "z")
    if y.shape != z.shape:
        raise ShapeError(f"y {y.shape} and z {z.shape} must have the same shape")
    return y, z


def residual(y, compensated) -> float:
    """Frobenius norm of ``y - compensated`` (not squared)."""
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(compensated, dtype=np.float64)
    if y.shape != c.shape:
        raise ShapeError(f"residual: shapes {y.shape} and {c.shape} differ")
    return tensor.frob_norm(y - c)


def _procrustes_core(y: np.ndarray, z: np.ndarray):
    m = tensor.matmul(y, z.T)
    if not np.any(m):
        # Every orthogonal map is optimal; stay at the identity.
        return np.eye(y.shape[0]), np.zeros(y.shape[0])
    dec = tensor.svd(m)
    return dec.u @ dec.vt, dec.sigma


def fit_procrustes(y, z) -> CompensationResult:
    """Orthogonal Q minimising ||y - Q z||_F, via Q = U V^T from svd(y z^T).

    Q may be a reflection (det -1); no determinant correction is applied.
    """
    y, z = _pair(y, z)
    q, _ = _procrustes_core(y, z)
    return CompensationResult("rot", q=q, in_sample_residual=residual(y, q @ z))


def fit_scaled_procrustes(y, z) -> CompensationResult:
    """Orthogonal Q and isotropic s >= 0 minimising ||y - s Q z||_F."""
    y, z = _pair(y, z)
    zz = float(np.sum(z * z))
    if zz == 0.0:
        q, s = np.eye(y.shape[0]), 0.0
    else:
        q, sigma = _procrustes_core(y, z)
        s = float(np.sum(sigma)) / zz
    return CompensationResult("rot_scale", q=q, s=s, in_sample_residual=residual(y, s * (q @ z)))


def fit_least_squares(y, z, rcond: float = 1e-12) -> CompensationResult:
    """Unconstrained A = y z^T (z z^T)^+ from the normal equations."""
    y, z = _pair(y, z)
    a = tensor.matmul(tensor.matmul(y, z.T), tensor.pinv(tensor.matmul(z, z.T), rcond))
    return CompensationResult("ls", a=a, in_sample_residual=residual(y, a @ z))


def fit_bias(y, z) -> CompensationResult:
    """Constant per-output offset: the row mean of ``y - z``.

    A mean-residual stand-in for bias-style baselines, not a reproduction of
    any particular published bias formula.
    """
    y, z = _pair(y, z)
    b = (y - z).mean(axis=1)
    return CompensationResult("bias", bias=b, in_sample_residual=residual(y, z + b[:, None]))


def fit_none(y, z) -> CompensationResult:
    y, z = _pair(y, z)
    return CompensationResult("none", in_sample_residual=residual(y, z))


def fit(variant: str, y, z, rcond: float = 1e-12) -> CompensationResult:
    if variant == "none":
        return fit_none(y, z)
    if variant == "rot":
        return fit_procrustes(y, z)
    if variant == "rot_scale":
        return fit_scaled_procrustes(y, z)
    if variant == "ls":
        return fit_least_squares(y, z, rcond)
    if variant == "bias":
        return fit_bias(y, z)
    raise ValueError(f"unknown compensation variant {variant!r}; expected one of {VARIANTS}")


def apply(result: CompensationResult, w_k) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Fold the fitted map into the kept weight.

    Returns the new weight and, for the bias variant, the bias vector to
    attach to the layer (``None`` otherwise).
    """
    w_k = tensor.as_matrix(w_k, "kept weight")
    d_out = w_k.shape[0]
    if result.variant in ("rot", "rot_scale"):
        if result.q.shape[1] != d_out:
            raise ShapeError(f"Q is {result.q.shape} but weight has {d_out} rows")
        new = result.q @ w_k
        return (result.s * new if result.variant == "rot_scale" else new), None
    if result.variant == "ls":
        if result.a.shape[1] != d_out:
            raise ShapeError(f"A is {result.a.shape} but weight has {d_out} rows")
        return result.a @ w_k, None
    if result.variant == "bias":
        if result.bias.shape[0] != d_out:
            raise ShapeError(f"bias has {result.bias.shape[0]} entries but weight has {d_out} rows")
        return w_k.copy(), result.bias.copy()
    return w_k.copy(), None
