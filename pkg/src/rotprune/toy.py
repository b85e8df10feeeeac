"""Seeded toy MLPs and activation data for desk-scale experiments."""
from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

from .pipeline import LayerRecord, ModelSpec


def _widths(dims: Union[int, Sequence[int]], depth: int) -> list:
    if isinstance(dims, int):
        return [dims] * (depth + 1)
    dims = [int(d) for d in dims]
    if len(dims) == 1:
        return dims * (depth + 1)
    if len(dims) != depth + 1:
        raise ValueError(f"need 1 or depth+1={depth + 1} widths, got {len(dims)}")
    return dims


def make_model(
    seed: int,
    dims: Union[int, Sequence[int]] = 32,
    depth: int = 4,
    nonlinearity: str = "relu",
    group_size=None,
) -> ModelSpec:
    """Random MLP; the last layer never has a nonlinearity."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    widths = _widths(dims, depth)
    rng = np.random.default_rng([seed, 0])
    layers = []
    for i in range(depth):
        d_in, d_out = widths[i], widths[i + 1]
        # Mildly anisotropic weights: a few dominant input directions plus noise.
        w = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
        w *= rng.lognormal(0.0, 0.5, size=d_in)[None, :]
        layers.append(
            LayerRecord(
                name=f"fc{i}",
                weight=w,
                nonlinearity=nonlinearity if i < depth - 1 else "none",
                groups=group_size,
            )
        )
    meta = {
        "generator": "toy-mlp",
        "seed": str(seed),
        "depth": str(depth),
        "widths": ",".join(str(w) for w in widths),
        "nonlinearity": nonlinearity,
    }
    return ModelSpec(layers, meta)


def make_inputs(
    seed: int,
    d_in: int,
    n: int,
    stream: int = 1,
    rank_fraction: float = 0.5,
    noise: float = 0.5,
    offset_scale: float = 0.3,
) -> np.ndarray:
    """Correlated inputs with heterogeneous per-feature mean and spread.

    Features share a latent factor of rank ``rank_fraction * d_in`` plus
    independent noise. ``stream`` separates independent draws (calibration
    vs held-out) that share the same feature structure for a given ``seed``.
    """
    structure = np.random.default_rng([seed, 1000])
    rank = max(2, int(d_in * rank_fraction))
    mix = structure.standard_normal((d_in, rank)) / np.sqrt(rank)
    spread = structure.lognormal(0.0, 0.75, size=d_in)
    offset = offset_scale * structure.standard_normal(d_in) * structure.lognormal(0.0, 1.0, size=d_in)
    draw = np.random.default_rng([seed, 2000 + stream])
    latent = draw.standard_normal((rank, n))
    eps = noise * draw.standard_normal((d_in, n))
    return offset[:, None] + spread[:, None] * (mix @ latent + eps)


def make_dataset(
    seed: int,
    dims: Union[int, Sequence[int]] = 32,
    depth: int = 4,
    nonlinearity: str = "relu",
    n_calib: int = 256,
    n_eval: int = 512,
    group_size=None,
) -> Tuple[ModelSpec, np.ndarray, np.ndarray]:
    model = make_model(seed, dims, depth, nonlinearity, group_size)
    calib = make_inputs(seed, model.d_in, n_calib, stream=1)
    held_out = make_inputs(seed, model.d_in, n_eval, stream=2)
    return model, calib, held_out
