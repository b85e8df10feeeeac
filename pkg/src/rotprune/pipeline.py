"""Greedy layerwise pruning driver over a stack of linear layers."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from . import compensation, scoring, tensor
from .compensation import CompensationResult
from .scoring import PruneMask
from .tensor import NonFiniteError, ShapeError

NONLINEARITIES = ("none", "relu", "gelu")
LAYER_KINDS = ("prunable", "passthrough")
ACTIVATION_MODES = ("original", "propagated")

MANIFEST_NAME = "manifest.json"
MODEL_FORMAT = "rotprune-model"
MODEL_FORMAT_VERSION = 1


def activate(name: str, h: np.ndarray) -> np.ndarray:
    if name == "none":
        return h
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "gelu":
        return 0.5 * h * (1.0 + erf(h / np.sqrt(2.0)))
    raise ValueError(f"unknown nonlinearity {name!r}; expected one of {NONLINEARITIES}")


@dataclass
class LayerRecord:
    """One linear layer ``h -> act(W @ h[kept] + bias)``.

    ``in_features`` is the width of the incoming activation; ``kept`` selects
    which of those rows the (possibly pruned) weight consumes. ``out_kept``
    is set when downstream width propagation removed some of this layer's
    outputs and records which original outputs remain.
    """

    name: str
    weight: np.ndarray
    kind: str = "prunable"
    nonlinearity: str = "none"
    groups: Optional[int] = None
    compensate_here: bool = True
    in_features: Optional[int] = None
    kept: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    out_kept: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weight = tensor.as_matrix(self.weight, f"{self.name} weight")
        if self.in_features is None:
            self.in_features = self.weight.shape[1] if self.kept is None else None
        if self.kept is not None:
            self.kept = np.asarray(self.kept, dtype=np.int64)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.out_kept is not None:
            self.out_kept = np.asarray(self.out_kept, dtype=np.int64)
        self.validate()

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.in_features

    def validate(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"{self.name}: unknown nonlinearity {self.nonlinearity!r}")
        if self.in_features is None or self.in_features < 1:
            raise ShapeError(f"{self.name}: in_features must be set and positive")
        width = self.in_features if self.kept is None else self.kept.size
        if self.weight.shape[1] != width:
            raise ShapeError(f"{self.name}: weight has {self.weight.shape[1]} columns, expected {width}")
        if self.kept is not None and (self.kept.size and (self.kept.min() < 0 or self.kept.max() >= self.in_features)):
            raise ShapeError(f"{self.name}: kept indices out of range")
        if self.kind == "prunable" and self.in_features < 2:
            raise ShapeError(f"{self.name}: prunable layers need d_in >= 2")
        if self.groups is not None and (self.groups < 1 or self.in_features % self.groups):
            raise ValueError(f"{self.name}: group size {self.groups} does not divide d_in={self.in_features}")
        if self.bias is not None and self.bias.size != self.d_out:
            raise ShapeError(f"{self.name}: bias has {self.bias.size} entries for d_out={self.d_out}")

    @property
    def is_pruned(self) -> bool:
        return self.kept is not None

    def linear(self, h: np.ndarray) -> np.ndarray:
        """Pre-activation output for an incoming activation of width ``d_in``."""
        if h.shape[0] != self.in_features:
            raise ShapeError(f"{self.name}: input has {h.shape[0]} rows, expected {self.in_features}")
        inp = h if self.kept is None else h[self.kept]
        out = self.weight @ inp
        if self.bias is not None:
            out = out + self.bias[:, None]
        return out

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return activate(self.nonlinearity, self.linear(h))

    def copy(self) -> "LayerRecord":
        def c(a):
            return None if a is None else a.copy()

        return replace(self, weight=self.weight.copy(), kept=c(self.kept), bias=c(self.bias), out_kept=c(self.out_kept))


@dataclass
class ModelSpec:
    layers: List[LayerRecord]
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ShapeError(f"{prev.name} outputs {prev.d_out} but {nxt.name} expects {nxt.d_in}")

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    def prunable(self) -> List[LayerRecord]:
        return [layer for layer in self.layers if layer.kind == "prunable"]

    def forward(self, x) -> np.ndarray:
        h = tensor.as_matrix(x, "model input")
        for layer in self.layers:
            h = layer(h)
        return h

    def trace(self, x) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(input, pre-activation output) for every layer."""
        h = tensor.as_matrix(x, "model input")
        out = []
        for layer in self.layers:
            pre = layer.linear(h)
            out.append((h, pre))
            h = activate(layer.nonlinearity, pre)
        return out

    def layer(self, name: str) -> LayerRecord:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def copy(self) -> "ModelSpec":
        return ModelSpec([layer.copy() for layer in self.layers], dict(self.metadata))


@dataclass(frozen=True)
class CalibrationBatch:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.shape[1] != self.y.shape[1]:
            raise ShapeError(f"x has {self.x.shape[1]} tokens but y has {self.y.shape[1]}")

    @property
    def n_tokens(self) -> int:
        return self.x.shape[1]


@dataclass
class PruneConfig:
    ratio: Union[float, Mapping[str, float]] = 0.2
    score_variant: str = "variance_aware"
    compensation_variant: str = "rot"
    activation_mode: str = "propagated"
    rcond: float = 1e-12
    seed: int = 0
    variance_ddof: int = 0
    width_propagation: bool = False
    # Layer names to compensate; None defers to each layer's compensate_here.
    compensate: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ratios = self.ratio.values() if isinstance(self.ratio, Mapping) else [self.ratio]
        for r in ratios:
            scoring.check_ratio(float(r))
        if self.score_variant not in scoring.SCORE_VARIANTS:
            raise ValueError(f"unknown score variant {self.score_variant!r}")
        if self.compensation_variant not in compensation.VARIANTS:
            raise ValueError(f"unknown compensation variant {self.compensation_variant!r}")
        if self.activation_mode not in ACTIVATION_MODES:
            raise ValueError(f"unknown activation mode {self.activation_mode!r}")
        if not self.rcond > 0:
            raise ValueError("rcond must be positive")
        if self.variance_ddof not in (0, 1):
            raise ValueError("variance_ddof must be 0 (population) or 1 (sample)")

    def ratio_for(self, name: str) -> float:
        if isinstance(self.ratio, Mapping):
            return float(self.ratio.get(name, 0.0))
        return float(self.ratio)

    def compensates(self, layer: LayerRecord) -> bool:
        if self.compensate is None:
            return layer.compensate_here
        return layer.name in self.compensate


@dataclass
class PruneReport:
    layer: str
    ratio: float
    kept: int
    residual_before: float
    residual_after: float
    variant: str
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    layers: List[PruneReport] = field(default_factory=list)

    @property
    def total_residual_after(self) -> float:
        return float(sum(r.residual_after for r in self.layers))

    @property
    def total_residual_before(self) -> float:
        return float(sum(r.residual_before for r in self.layers))

    @property
    def seconds_per_layer(self) -> float:
        return float(np.mean([r.seconds for r in self.layers])) if self.layers else 0.0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.layers)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def _finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"non-finite activations at {what}")
    return m


def collect_activations(
    model: ModelSpec,
    calib_inputs,
    mode: str = "original",
    pruned: Optional[ModelSpec] = None,
) -> Dict[str, CalibrationBatch]:
    """Record (X, Y) for every prunable layer.

    ``original`` takes X from ``model`` itself. ``propagated`` takes X from
    ``pruned`` (the partially pruned network; defaults to ``model``). Either
    way Y is the layer's weight in ``model`` applied to that X.
    """
    if mode not in ACTIVATION_MODES:
        raise ValueError(f"unknown activation mode {mode!r}")
    calib_inputs = tensor.as_matrix(calib_inputs, "calibration inputs")
    if calib_inputs.shape[0] != model.d_in:
        raise ShapeError(f"calibration inputs have {calib_inputs.shape[0]} rows, model expects {model.d_in}")
    source = model if (mode == "original" or pruned is None) else pruned
    batches = {}
    for orig, (x, _) in zip(model.layers, source.trace(calib_inputs)):
        if orig.kind != "prunable":
            continue
        x = _finite(x, orig.name)
        inp = x if orig.kept is None else x[orig.kept]
        batches[orig.name] = CalibrationBatch(x, _finite(orig.weight @ inp, orig.name))
    return batches


def decompose(w, x, mask: PruneMask) -> Tuple[np.ndarray, np.ndarray]:
    """Split W X into the kept part W_K X_K and the dropped part W_D X_D."""
    w = tensor.as_matrix(w, "weight")
    x = tensor.as_matrix(x, "activations")
    if w.shape[1] != x.shape[0] or mask.d_in != w.shape[1]:
        raise ShapeError(f"mask over {mask.d_in} columns does not fit W {w.shape} and X {x.shape}")
    if mask.kept.size == 0:
        raise ValueError("mask keeps no columns")
    z = w[:, mask.kept] @ x[mask.kept]
    if mask.dropped.size:
        dropped = w[:, mask.dropped] @ x[mask.dropped]
    else:
        dropped = np.zeros_like(z)
    return z, dropped


def prune_layer(
    layer: LayerRecord,
    batch: CalibrationBatch,
    config: PruneConfig,
    compensate: Optional[bool] = None,
) -> Tuple[LayerRecord, PruneReport]:
    """Score, select, decompose, fit and fold compensation into one layer."""
    if layer.kind != "prunable":
        raise ValueError(f"{layer.name} is not prunable")
    if layer.is_pruned:
        raise ValueError(f"{layer.name} is already pruned")
    if compensate is None:
        compensate = config.compensates(layer)
    rho = config.ratio_for(layer.name)
    variant = config.compensation_variant if compensate else "none"

    start = time.perf_counter()
    scores = scoring.score_columns(layer.weight, batch.x, config.score_variant, ddof=config.variance_ddof)
    mask = scoring.select_mask(scores, rho, layer.groups)
    z, _ = decompose(layer.weight, batch.x, mask)
    result: CompensationResult = compensation.fit(variant, batch.y, z, config.rcond)
    new_weight, extra_bias = compensation.apply(result, layer.weight[:, mask.kept])
    seconds = time.perf_counter() - start

    bias = layer.bias
    if extra_bias is not None:
        bias = extra_bias if bias is None else bias + extra_bias
    new = replace(layer.copy(), weight=new_weight, kept=mask.kept.copy(), bias=None if bias is None else bias.copy())
    new.validate()
    report = PruneReport(
        layer=layer.name,
        ratio=rho,
        kept=mask.n_kept,
        residual_before=compensation.residual(batch.y, z),
        residual_after=result.in_sample_residual,
        variant=variant,
        seconds=seconds,
    )
    return new, report


def _trim_outputs(layer: LayerRecord, rows: np.ndarray) -> LayerRecord:
    out_kept = rows if layer.out_kept is None else layer.out_kept[rows]
    return replace(
        layer.copy(),
        weight=layer.weight[rows].copy(),
        bias=None if layer.bias is None else layer.bias[rows].copy(),
        out_kept=out_kept.copy(),
    )


def prune_model(model: ModelSpec, calib_inputs, config: PruneConfig) -> Tuple[ModelSpec, RunReport]:
    """Prune every prunable layer in order, one layer at a time.

    Pruning is input-side: each layer loses the columns it drops and gathers
    its kept inputs. With ``config.width_propagation`` the producing layer's
    matching output rows are deleted instead, so the gather disappears.
    """
    calib_inputs = tensor.as_matrix(calib_inputs, "calibration inputs")
    if calib_inputs.shape[0] != model.d_in:
        raise ShapeError(f"calibration inputs have {calib_inputs.shape[0]} rows, model expects {model.d_in}")
    original = collect_activations(model, calib_inputs, "original") if config.activation_mode == "original" else None

    layers = [layer.copy() for layer in model.layers]
    run = RunReport()
    h = calib_inputs
    for i, layer in enumerate(model.layers):
        if layer.kind == "prunable":
            if layer.is_pruned:
                raise ValueError(f"{layer.name} is already pruned")
            if original is not None:
                batch = original[layer.name]
            else:
                x = _finite(h, layer.name)
                batch = CalibrationBatch(x, layer.weight @ x)
            new, report = prune_layer(layer, batch, config)
            run.layers.append(report)
            if config.width_propagation and i > 0:
                layers[i - 1] = _trim_outputs(layers[i - 1], new.kept)
                if original is None:
                    h = h[new.kept]
                new = replace(new, kept=None, in_features=new.kept.size)
                new.validate()
            layers[i] = new
        if config.activation_mode == "propagated":
            h = layers[i](h)

    meta = dict(model.metadata)
    meta.update(
        {
            "pruned": "true",
            "ratio": json.dumps(config.ratio if not isinstance(config.ratio, Mapping) else dict(config.ratio), sort_keys=True),
            "score_variant": config.score_variant,
            "compensation_variant": config.compensation_variant,
            "activation_mode": config.activation_mode,
            "width_propagation": str(bool(config.width_propagation)).lower(),
            "prune_seed": str(config.seed),
        }
    )
    return ModelSpec(layers, meta), run


@dataclass
class EvalMetrics:
    rel_error: float
    layer_residuals: Dict[str, float]

    def to_dict(self) -> dict:
        return {"rel_error": self.rel_error, "layer_residuals": dict(self.layer_residuals)}


def evaluate(model: ModelSpec, eval_inputs, reference: ModelSpec) -> EvalMetrics:
    """Relative output error of ``model`` against ``reference`` on held-out inputs.

    Per-layer residuals compare pre-activation outputs, restricted to the
    outputs a width-propagated layer still produces.
    """
    eval_inputs = tensor.as_matrix(eval_inputs, "eval inputs")
    if len(model.layers) != len(reference.layers):
        raise ShapeError("model and reference have different depths")
    ref_trace = reference.trace(eval_inputs)
    got_trace = model.trace(eval_inputs)
    ref_out = activate(reference.layers[-1].nonlinearity, ref_trace[-1][1])
    got_out = activate(model.layers[-1].nonlinearity, got_trace[-1][1])
    if ref_out.shape != got_out.shape:
        raise ShapeError(f"output shapes differ: {got_out.shape} vs {ref_out.shape}")
    denom = tensor.frob_norm(ref_out)
    if denom == 0.0:
        raise ValueError("reference output is identically zero; relative error undefined")
    per_layer = {}
    for layer, (_, ref_pre), (_, got_pre) in zip(model.layers, ref_trace, got_trace):
        if layer.out_kept is not None:
            ref_pre = ref_pre[layer.out_kept]
        per_layer[layer.name] = compensation.residual(ref_pre, got_pre)
    return EvalMetrics(tensor.frob_norm(got_out - ref_out) / denom, per_layer)


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def save_model(model: ModelSpec, directory) -> Path:
    """Write ``manifest.json`` plus one tensor file per weight/bias."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(model.layers):
        stem = f"layer{i:03d}"
        tensor.write_tensor(directory / f"{stem}.weight.rcpu", layer.weight)
        bias_file = None
        if layer.bias is not None:
            bias_file = f"{stem}.bias.rcpu"
            tensor.write_tensor(directory / bias_file, layer.bias[:, None])
        entries.append(
            {
                "name": layer.name,
                "kind": layer.kind,
                "nonlinearity": layer.nonlinearity,
                "d_out": layer.d_out,
                "d_in": layer.d_in,
                "group_size": layer.groups,
                "compensate_here": layer.compensate_here,
                "weight": f"{stem}.weight.rcpu",
                "bias": bias_file,
                "kept": None if layer.kept is None else layer.kept.tolist(),
                "out_kept": None if layer.out_kept is None else layer.out_kept.tolist(),
            }
        )
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "metadata": {str(k): str(v) for k, v in model.metadata.items()},
        "layers": entries,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_model(directory) -> ModelSpec:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format") != MODEL_FORMAT:
        raise ValueError(f"{directory}: not a {MODEL_FORMAT} manifest")
    if manifest.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{directory}: unsupported manifest version {manifest.get('version')}")
    layers = []
    for entry in manifest["layers"]:
        weight = tensor.read_tensor(directory / entry["weight"])
        bias = tensor.read_tensor(directory / entry["bias"]).ravel() if entry.get("bias") else None
        layer = LayerRecord(
            name=entry["name"],
            weight=weight,
            kind=entry.get("kind", "prunable"),
            nonlinearity=entry.get("nonlinearity", "none"),
            groups=entry.get("group_size"),
            compensate_here=bool(entry.get("compensate_here", True)),
            in_features=entry["d_in"],
            kept=entry.get("kept"),
            bias=bias,
            out_kept=entry.get("out_kept"),
        )
        if layer.d_out != entry["d_out"]:
            raise ShapeError(f"{layer.name}: manifest d_out {entry['d_out']} != weight rows {layer.d_out}")
        layers.append(layer)
    return ModelSpec(layers, dict(manifest.get("metadata", {})))
