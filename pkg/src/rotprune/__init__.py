"""Structured column pruning with rotation-constrained output compensation."""
from .compensation import (
    CompensationResult,
    apply,
    fit,
    fit_bias,
    fit_least_squares,
    fit_procrustes,
    fit_scaled_procrustes,
    residual,
)
from .pipeline import (
    CalibrationBatch,
    LayerRecord,
    ModelSpec,
    PruneConfig,
    PruneReport,
    collect_activations,
    decompose,
    evaluate,
    load_model,
    prune_layer,
    prune_model,
    save_model,
)
from .scoring import PruneMask, ScoreVector, score_columns, select_mask
from .tensor import read_tensor, write_tensor

__version__ = "0.1.0"
