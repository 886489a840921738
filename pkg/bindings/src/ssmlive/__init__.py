"""Thin bindings for monitoring spatial structure inside a training loop.

``metric(name, array, **cfg)`` and ``transform(name, array, **params)`` wrap
the ssmkit library for callers that hold raw (H, W, D) buffers: the buffer is
validated at the boundary, copied exactly once into library types, and never
mutated in place.  The wrappers hold no mutable state, so calls are reentrant
and repeated calls with identical inputs are bit-identical; the numeric work
runs inside vectorized kernels that drop the interpreter lock, so a monitor
thread does not stall training.

Results are numerically identical to the corresponding library calls.
"""

from __future__ import annotations

import numpy as np

import ssmkit
from ssmkit import (
    ChannelVector,
    ConvWeights,
    MetricConfig,
    MlpWeights,
    PatchGrid,
    SegmentMask,
    compute_metric,
    conv_project,
    init_conv_weights,
    init_mlp_weights,
    mix_global,
    mlp_project,
    spatial_normalize,
)
from ssmkit.transforms import NormalizeConfig

__version__ = ssmkit.__version__

_METRICS = tuple(m.lower() for m in ssmkit.METRIC_NAMES)
_TRANSFORMS = ("normalize", "mix", "conv_project", "mlp_project")


def _as_grid(buffer) -> PatchGrid:
    """Validate a caller buffer and copy it once into a PatchGrid."""
    arr = np.asarray(buffer)
    if arr.ndim != 3:
        raise ValueError(f"expected a (H, W, D) buffer, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"buffer dimensions must be positive, got shape {arr.shape}")
    if not arr.flags["C_CONTIGUOUS"]:
        raise ValueError("buffer must be C-contiguous")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"buffer must hold real floats, got dtype {arr.dtype}")
    return PatchGrid(np.array(arr, dtype=np.float64, order="C"))


def _as_mask(mask) -> SegmentMask:
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        bad = (arr != 0) & (arr != 1)
        if arr.ndim == 2 and bad.any():
            raise ValueError("mask values must be 0 or 1")
        arr = arr.astype(bool)
    return SegmentMask(np.array(arr, order="C"))


def metric(name: str, array, *, mask=None, **cfg) -> float:
    """Compute one structure metric (lds, cds, srss, rmsc) on a raw buffer.

    ``cfg`` takes the library knobs (r_near, r_far, cds_delta_max,
    srss_triplets, srss_seed); srss additionally needs ``mask``.
    """
    key = name.lower()
    if key not in _METRICS:
        raise ValueError(f"unknown metric {name!r}, expected one of {_METRICS}")
    grid = _as_grid(array)
    config = MetricConfig(**cfg)
    segment = _as_mask(mask) if mask is not None else None
    return compute_metric(key, grid, config, segment)


def transform(name: str, array, **params) -> np.ndarray:
    """Apply a feature transform to a raw buffer; returns a new (H, W, D') array.

    * ``normalize``: gamma, epsilon, variant
    * ``mix``: vector (1-d array), alpha
    * ``conv_project``: kernel (3, 3, D_in, D_out) and bias, or seed/out_dim
      for a reproducible default initialization
    * ``mlp_project``: layers [(w, b)] * 3, or seed/out_dim/hidden
    """
    key = name.lower().replace("-", "_")
    grid = _as_grid(array)
    if key == "normalize":
        out = spatial_normalize(grid, NormalizeConfig(**params))
    elif key == "mix":
        vector = ChannelVector(np.asarray(params["vector"], dtype=np.float64))
        out = mix_global(grid, vector, float(params.get("alpha", 0.0)))
    elif key == "conv_project":
        if "kernel" in params:
            weights = ConvWeights(kernel=params["kernel"], bias=params["bias"])
        else:
            weights = init_conv_weights(
                grid.dim, params.get("out_dim", grid.dim), seed=params.get("seed", 0)
            )
        out = conv_project(grid, weights)
    elif key == "mlp_project":
        if "layers" in params:
            weights = MlpWeights(tuple(tuple(layer) for layer in params["layers"]))
        else:
            weights = init_mlp_weights(
                grid.dim,
                params.get("out_dim", grid.dim),
                hidden=params.get("hidden"),
                seed=params.get("seed", 0),
            )
        out = mlp_project(grid, weights)
    else:
        raise ValueError(f"unknown transform {name!r}, expected one of {_TRANSFORMS}")
    return out.data
