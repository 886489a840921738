"""Feature transforms that reshape the spatial structure of a patch grid.

* spatial normalization: per-channel centering (scaled by gamma) and
  variance normalization across the token axis, which strips a shared global
  component and boosts spatial contrast;
* global mixing: add alpha times a shared channel vector to every token,
  the probe that injects a global component;
* 3x3 convolutional projection with zero padding 1 (cross-correlation
  orientation, no kernel flip);
* 3-layer MLP projection, SiLU between layers, as the pointwise baseline;
* patch-wise cosine alignment loss with its analytic gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import ChannelVector, PatchGrid, read_npy, write_npy

NORMALIZE_VARIANTS = ("std_plus_eps", "sqrt_var_plus_eps")


@dataclass(frozen=True)
class NormalizeConfig:
    """gamma scales the mean subtraction; epsilon stabilizes the division.

    ``std_plus_eps`` divides by (std + eps); ``sqrt_var_plus_eps`` divides by
    sqrt(var + eps).  Statistics are population (divide by T) over tokens.
    """

    gamma: float = 0.7
    epsilon: float = 1e-6
    variant: str = "std_plus_eps"

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.variant not in NORMALIZE_VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}, expected one of {NORMALIZE_VARIANTS}"
            )


@dataclass(eq=False)
class ConvWeights:
    """3x3 convolution parameters: kernel (3, 3, D_in, D_out), bias (D_out,)."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        k = np.asarray(self.kernel, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if k.ndim != 4 or k.shape[:2] != (3, 3):
            raise ValueError(f"kernel must have shape (3, 3, D_in, D_out), got {k.shape}")
        if b.shape != (k.shape[3],):
            raise ValueError(f"bias shape {b.shape} does not match D_out {k.shape[3]}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
            raise ValueError("convolution weights contain non-finite elements")
        self.kernel = np.ascontiguousarray(k)
        self.bias = np.ascontiguousarray(b)

    @property
    def in_dim(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_dim(self) -> int:
        return self.kernel.shape[3]


@dataclass(eq=False)
class MlpWeights:
    """Three dense layers D_in -> h -> h -> D_out; weights are (in, out)."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self) -> None:
        if len(self.layers) != 3:
            raise ValueError(f"expected 3 layers, got {len(self.layers)}")
        checked = []
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if prev_out is not None and w.shape[0] != prev_out:
                raise ValueError(
                    f"layer {i}: input dim {w.shape[0]} does not chain from {prev_out}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            prev_out = w.shape[1]
            checked.append((np.ascontiguousarray(w), np.ascontiguousarray(b)))
        if checked[0][0].shape[1] != checked[1][0].shape[0]:
            raise ValueError("hidden widths of layers 1 and 2 disagree")
        self.layers = tuple(checked)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def hidden(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[2][0].shape[1]


def spatial_normalize(grid: PatchGrid, cfg: NormalizeConfig | None = None) -> PatchGrid:
    """Center and rescale every channel across the token axis."""
    cfg = cfg or NormalizeConfig()
    if grid.token_count < 2:
        raise ValueError("spatial normalization needs at least 2 tokens")
    flat = grid.tokens
    mean = flat.mean(axis=0)
    var = flat.var(axis=0)
    centered = flat - cfg.gamma * mean
    if cfg.variant == "std_plus_eps":
        out = centered / (np.sqrt(var) + cfg.epsilon)
    else:
        out = centered / np.sqrt(var + cfg.epsilon)
    return PatchGrid(out.reshape(grid.data.shape))


def mix_global(grid: PatchGrid, vector: ChannelVector, alpha: float) -> PatchGrid:
    """Add alpha * vector to every token."""
    if vector.dim != grid.dim:
        raise ValueError(f"vector dim {vector.dim} does not match grid dim {grid.dim}")
    return PatchGrid(grid.data + alpha * vector.values)


def mean_patch_vector(grid: PatchGrid) -> ChannelVector:
    """Channel-wise mean over all tokens."""
    return ChannelVector(grid.tokens.mean(axis=0))


def conv_project(grid: PatchGrid, weights: ConvWeights) -> PatchGrid:
    """3x3 cross-correlation with zero padding 1 and stride 1."""
    if grid.dim != weights.in_dim:
        raise ValueError(
            f"grid dim {grid.dim} does not match kernel input dim {weights.in_dim}"
        )
    h, w = grid.height, grid.width
    padded = np.zeros((h + 2, w + 2, grid.dim))
    padded[1:-1, 1:-1] = grid.data
    out = np.empty((h, w, weights.out_dim))
    out[:] = weights.bias
    for dr in range(3):
        for dc in range(3):
            out += padded[dr : dr + h, dc : dc + w] @ weights.kernel[dr, dc]
    return PatchGrid(out)


def _silu(x: np.ndarray) -> np.ndarray:
    # sigmoid-weighted identity, computed in the overflow-safe branch
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = x[pos] / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = x[~pos] * ex / (1.0 + ex)
    return out


def mlp_project(grid: PatchGrid, weights: MlpWeights) -> PatchGrid:
    """Apply the 3-layer MLP to each token independently."""
    if grid.dim != weights.in_dim:
        raise ValueError(
            f"grid dim {grid.dim} does not match MLP input dim {weights.in_dim}"
        )
    (w1, b1), (w2, b2), (w3, b3) = weights.layers
    x = _silu(grid.tokens @ w1 + b1)
    x = _silu(x @ w2 + b2)
    x = x @ w3 + b3
    return PatchGrid(x.reshape(grid.height, grid.width, weights.out_dim))


def alignment_loss_and_grad(pred: PatchGrid, target: PatchGrid) -> tuple[float, PatchGrid]:
    """Negative mean patch-wise cosine, plus its gradient w.r.t. pred.

    loss = -(1/T) sum_t cos(pred_t, target_t)
    d loss / d pred_t = -(1/T) (target_t / (|pred_t| |target_t|)
                                - cos_t * pred_t / |pred_t|^2)
    """
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    p = pred.tokens
    q = target.tokens
    pn2 = np.einsum("td,td->t", p, p)
    qn2 = np.einsum("td,td->t", q, q)
    for name, sq in (("pred", pn2), ("target", qn2)):
        zero = np.flatnonzero(sq < 1e-60)
        if zero.size:
            raise ValueError(f"zero token in {name} at index {int(zero[0])}")
    # sqrt of the product keeps cos(p, p) at exactly 1
    norm_prod = np.sqrt(pn2 * qn2)
    cos = np.einsum("td,td->t", p, q) / norm_prod
    t = pred.token_count
    loss = float(-cos.mean())
    grad = -(q / norm_prod[:, None] - (cos / pn2)[:, None] * p) / t
    return loss, PatchGrid(grad.reshape(pred.data.shape))


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv_weights(in_dim: int, out_dim: int, seed: int = 0) -> ConvWeights:
    """Seeded uniform init in +-1/sqrt(9 * D_in), reproducible by seed."""
    rng = np.random.Generator(np.random.Philox(key=seed & (2**128 - 1)))
    fan_in = 9 * in_dim
    return ConvWeights(
        kernel=_uniform_init(rng, (3, 3, in_dim, out_dim), fan_in),
        bias=_uniform_init(rng, (out_dim,), fan_in),
    )


def init_mlp_weights(
    in_dim: int, out_dim: int, hidden: int | None = None, seed: int = 0
) -> MlpWeights:
    """Seeded uniform init per layer in +-1/sqrt(fan_in); hidden defaults to
    max(D_in, D_out)."""
    hidden = hidden or max(in_dim, out_dim)
    rng = np.random.Generator(np.random.Philox(key=seed & (2**128 - 1)))
    layers = []
    for d_in, d_out in ((in_dim, hidden), (hidden, hidden), (hidden, out_dim)):
        layers.append(
            (
                _uniform_init(rng, (d_in, d_out), d_in),
                _uniform_init(rng, (d_out,), d_in),
            )
        )
    return MlpWeights(tuple(layers))


def save_weights(weights: ConvWeights | MlpWeights, manifest_path: str | Path) -> None:
    """Write one NPY per tensor plus a JSON manifest next to them."""
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    folder = manifest_path.parent
    tensors: dict[str, np.ndarray] = {}
    if isinstance(weights, ConvWeights):
        kind = "conv"
        dims = {"in_dim": weights.in_dim, "out_dim": weights.out_dim}
        tensors = {"kernel": weights.kernel, "bias": weights.bias}
    else:
        kind = "mlp"
        dims = {
            "in_dim": weights.in_dim,
            "hidden": weights.hidden,
            "out_dim": weights.out_dim,
        }
        for i, (w, b) in enumerate(weights.layers, start=1):
            tensors[f"w{i}"] = w
            tensors[f"b{i}"] = b
    entries = {}
    for name, arr in tensors.items():
        rel = f"{stem}.{name}.npy"
        write_npy(folder / rel, arr)
        entries[name] = rel
    manifest = {"type": kind, "tensors": entries, "dims": dims}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


def load_weights(manifest_path: str | Path) -> ConvWeights | MlpWeights:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    kind = manifest.get("type")
    tensors = {
        name: read_npy(manifest_path.parent / rel)
        for name, rel in manifest.get("tensors", {}).items()
    }
    if kind == "conv":
        return ConvWeights(kernel=tensors["kernel"], bias=tensors["bias"])
    if kind == "mlp":
        return MlpWeights(
            tuple((tensors[f"w{i}"], tensors[f"b{i}"]) for i in (1, 2, 3))
        )
    raise ValueError(f"{manifest_path}: unknown weights type {kind!r}")
