"""Column importance scores and kept/dropped index selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor
from .tensor import ShapeError

SCORE_VARIANTS = ("variance_aware", "wanda_sp")

# d_in * rho is computed in floating point; 10 * 0.3 must count as 3, not 3 + ulp.
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class ScoreVector:
    gamma: np.ndarray
    variant: str

    def __len__(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class PruneMask:
    """Partition of ``range(d_in)`` into kept and dropped column indices."""

    kept: np.ndarray
    dropped: np.ndarray
    ratio: float
    d_in: int

    def __post_init__(self):
        both = np.concatenate([self.kept, self.dropped])
        if both.size != self.d_in or not np.array_equal(np.sort(both), np.arange(self.d_in)):
            raise ValueError("kept and dropped must partition range(d_in)")

    @classmethod
    def from_dropped(cls, dropped, d_in: int, ratio: float = 0.0) -> "PruneMask":
        dropped = np.unique(np.asarray(dropped, dtype=np.int64))
        kept = np.setdiff1d(np.arange(d_in, dtype=np.int64), dropped)
        return cls(kept, dropped, ratio, d_in)

    @property
    def n_kept(self) -> int:
        return int(self.kept.size)


def n_dropped(count: int, rho: float) -> int:
    """Number of units removed at ratio ``rho``: ceil(count * rho)."""
    check_ratio(rho)
    return int(math.ceil(count * rho - _CEIL_SLACK)) if rho > 0 else 0


def check_ratio(rho: float) -> None:
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"pruning ratio must lie in [0, 1), got {rho}")


def score_columns(w, x, variant: str = "variance_aware", ddof: int = 0) -> ScoreVector:
    """Per-input-column importance.

    ``wanda_sp``: ||W[:, j]|| * ||X[j, :]||. ``variance_aware`` multiplies in
    the variance of X[j, :] across tokens (population form unless ``ddof=1``).
    """
    if variant not in SCORE_VARIANTS:
        raise ValueError(f"unknown score variant {variant!r}; expected one of {SCORE_VARIANTS}")
    w = tensor.as_matrix(w, "weight")
    x = tensor.as_matrix(x, "activations")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weight has {w.shape[1]} columns but activations have {x.shape[0]} rows")
    gamma = tensor.col_norm(w) * tensor.row_norm(x)
    if variant == "variance_aware":
        gamma = gamma * tensor.row_variance(x, ddof=ddof)
    return ScoreVector(gamma, variant)


def _rank_keep_first(values: np.ndarray) -> np.ndarray:
    """Indices ordered from most to least important; ties favour lower index."""
    idx = np.arange(values.size)
    return np.lexsort((idx, -values))


def select_mask(scores, rho: float, group_size: Optional[int] = None) -> PruneMask:
    """Keep the highest-scoring columns, dropping ceil(d_in * rho) of them.

    With ``group_size`` the columns form contiguous blocks of that size; a
    block's score is the sum of its members and ceil(G * rho) whole blocks
    are dropped.
    """
    gamma = np.asarray(scores.gamma if isinstance(scores, ScoreVector) else scores, dtype=np.float64)
    if gamma.ndim != 1 or gamma.size == 0:
        raise ShapeError("scores must be a non-empty vector")
    check_ratio(rho)
    d_in = gamma.size

    if group_size is None:
        k_drop = n_dropped(d_in, rho)
        if k_drop >= d_in:
            raise ValueError(f"ratio {rho} would drop all {d_in} columns")
        order = _rank_keep_first(gamma)
        return PruneMask.from_dropped(order[d_in - k_drop:], d_in, rho)

    if group_size < 1 or d_in % group_size:
        raise ValueError(f"group size {group_size} does not evenly divide {d_in} columns")
    n_groups = d_in // group_size
    g_drop = n_dropped(n_groups, rho)
    if g_drop >= n_groups:
        raise ValueError(f"ratio {rho} would drop all {n_groups} groups")
    group_scores = gamma.reshape(n_groups, group_size).sum(axis=1)
    order = _rank_keep_first(group_scores)
    dropped_groups = order[n_groups - g_drop:]
    dropped = (dropped_groups[:, None] * group_size + np.arange(group_size)).ravel()
    return PruneMask.from_dropped(dropped, d_in, rho)
