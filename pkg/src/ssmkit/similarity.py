"""Cosine self-similarity over the patch lattice.

The kernel between tokens t and t' is cos(x_t, x_t'); lattice distance is
Manhattan distance between their (row, col) positions.  The correlogram g
averages the kernel over every unordered token pair at each distance, and is
the shared substrate of the structure metrics.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import PatchGrid
from .serialize import fmt_float

DEGENERATE_NORM = 1e-30


@dataclass(eq=False)
class SimilarityMatrix:
    """Dense (T, T) cosine kernel: symmetric, unit diagonal, entries in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        k = np.asarray(self.values, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"similarity matrix must be square, got shape {k.shape}")
        if np.abs(k - k.T).max(initial=0.0) >= 1e-12:
            raise ValueError("similarity matrix is not symmetric")
        if k.shape[0] and np.abs(np.diag(k) - 1.0).max() != 0.0:
            raise ValueError("similarity matrix diagonal must be exactly 1")
        if k.size and (k.min() < -1.0 - 1e-12 or k.max() > 1.0 + 1e-12):
            raise ValueError("similarity values fall outside [-1, 1]")
        self.values = k

    @property
    def tokens(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class DistanceClassIndex:
    """Unordered-pair counts per Manhattan distance on an H x W lattice."""

    height: int
    width: int
    pair_counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.pair_counts, dtype=np.int64)
        t = self.height * self.width
        if counts[0] != t:
            raise ValueError("distance class 0 must hold exactly the self-pairs")
        if counts.sum() != t * (t + 1) // 2:
            raise ValueError("distance classes must partition all unordered pairs")
        self.pair_counts = counts

    @property
    def max_distance(self) -> int:
        return (self.height - 1) + (self.width - 1)


@dataclass(eq=False)
class Correlogram:
    """Mean cosine similarity per distance class delta >= 1.

    Only classes with at least one pair are listed; absent classes are absent,
    never zero-filled.
    """

    deltas: np.ndarray
    g: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.deltas = np.asarray(self.deltas, dtype=np.int64)
        self.g = np.asarray(self.g, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (len(self.deltas) == len(self.g) == len(self.counts)):
            raise ValueError("correlogram arrays must have equal length")
        if len(self.deltas) and self.deltas.min() < 1:
            raise ValueError("correlogram excludes the self-pair class delta=0")
        if len(self.counts) and self.counts.min() < 1:
            raise ValueError("empty distance classes must be omitted")
        if len(self.g) and (self.g.min() < -1.0 - 1e-12 or self.g.max() > 1.0 + 1e-12):
            raise ValueError("correlogram values fall outside [-1, 1]")

    def as_dict(self) -> dict[int, float]:
        return {int(d): float(v) for d, v in zip(self.deltas, self.g)}


def _unit_tokens(grid: PatchGrid, strict: bool) -> tuple[np.ndarray, list[int]]:
    """Unit-normalize tokens in lattice layout; returns (array, degenerate ids)."""
    x = grid.data
    norms = np.sqrt(np.einsum("rcd,rcd->rc", x, x))
    degenerate = np.flatnonzero(norms.reshape(-1) < DEGENERATE_NORM)
    if strict and degenerate.size:
        raise ValueError(f"zero token at index {int(degenerate[0])} (norm below {DEGENERATE_NORM})")
    safe = np.where(norms < DEGENERATE_NORM, 1.0, norms)
    return x / safe[:, :, None], [int(i) for i in degenerate]


def normalize_tokens(grid: PatchGrid) -> PatchGrid:
    """Scale every token to unit Euclidean norm.

    Tokens with norm below ``DEGENERATE_NORM`` map to the zero vector and are
    flagged in ``result.meta['degenerate_tokens']``.
    """
    unit, degenerate = _unit_tokens(grid, strict=False)
    if degenerate:
        unit = unit.copy()
        unit.reshape(grid.token_count, grid.dim)[degenerate] = 0.0
    out = PatchGrid(unit)
    if degenerate:
        out.meta["degenerate_tokens"] = tuple(degenerate)
    return out


def cosine_kernel(grid: PatchGrid) -> SimilarityMatrix:
    """Dense cosine kernel K[t, t'] = cos(x_t, x_t') over all token pairs."""
    unit, _ = _unit_tokens(grid, strict=True)
    flat = unit.reshape(grid.token_count, grid.dim)
    k = flat @ flat.T
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return SimilarityMatrix(k)


def _canonical_offsets(height: int, width: int):
    """Displacement vectors covering each unordered pair exactly once."""
    for dr in range(height):
        for dc in range(-(width - 1), width):
            if dr == 0 and dc <= 0:
                continue
            yield dr, dc


def distance_classes(height: int, width: int) -> DistanceClassIndex:
    """Count unordered lattice pairs per Manhattan distance, self-pairs at 0."""
    if height < 1 or width < 1:
        raise ValueError("lattice dimensions must be >= 1")
    counts = np.zeros((height - 1) + (width - 1) + 1, dtype=np.int64)
    counts[0] = height * width
    for dr, dc in _canonical_offsets(height, width):
        counts[dr + abs(dc)] += (height - dr) * (width - abs(dc))
    return DistanceClassIndex(height, width, counts)


def correlogram(grid: PatchGrid) -> Correlogram:
    """Distance-binned mean cosine similarity g(delta), delta >= 1.

    Accumulates one displacement class at a time, so the cost is
    O(T * offsets * D) rather than O(T^2 * D) per distance; the result equals
    the all-pairs definition exactly.
    """
    unit, _ = _unit_tokens(grid, strict=True)
    h, w = grid.height, grid.width
    max_d = (h - 1) + (w - 1)
    sums = np.zeros(max_d + 1)
    counts = np.zeros(max_d + 1, dtype=np.int64)
    for dr, dc in _canonical_offsets(h, w):
        if dc >= 0:
            a = unit[: h - dr, : w - dc]
            b = unit[dr:, dc:]
        else:
            a = unit[: h - dr, -dc:]
            b = unit[dr:, : w + dc]
        delta = dr + abs(dc)
        sums[delta] += np.einsum("rcd,rcd->", a, b)
        counts[delta] += a.shape[0] * a.shape[1]
    present = np.flatnonzero(counts[1:]) + 1
    return Correlogram(present, sums[present] / counts[present], counts[present])


def write_correlogram_csv(corr: Correlogram, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(correlogram_csv(corr))


def correlogram_csv(corr: Correlogram) -> str:
    """CSV export: header ``delta,g,count``, one row per present class."""
    buf = io.StringIO()
    buf.write("delta,g,count\n")
    for d, g, c in zip(corr.deltas, corr.g, corr.counts):
        buf.write(f"{int(d)},{fmt_float(g)},{int(c)}\n")
    return buf.getvalue()
