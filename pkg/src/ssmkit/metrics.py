"""Spatial structure metrics over patch-token grids.

Four per-image metrics, each larger when nearby patches look more alike than
distant ones:

* LDS, local vs distant similarity: mean kernel over pairs with
  0 < d < r_near minus mean kernel over pairs with d >= r_far.
* CDS, correlation decay slope: negated least-squares slope of the
  correlogram over distance classes 1..cds_delta_max.
* SRSS, segment-region self-similarity: expected cosine gap between
  within-mask (anchor, positive) and cross-mask (anchor, negative) pairs,
  estimated over seeded uniform triplets.
* RMSC, RMS spatial contrast: root mean square deviation of unit-normalized
  tokens from their mean.

Aggregation is per-image metric first, then mean and population standard
deviation across images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .feature_io import PatchGrid, SegmentMask
from .similarity import _unit_tokens, correlogram

METRIC_NAMES = ("LDS", "CDS", "SRSS", "RMSC")

_REJECTION_CAP = 10_000


@dataclass(frozen=True)
class MetricConfig:
    """Knobs shared by the metric suite.

    ``None`` radii resolve per grid to ceil(min(H, W) / 2); ``None``
    cds_delta_max resolves to the full distance range (H-1)+(W-1).
    """

    r_near: int | None = None
    r_far: int | None = None
    cds_delta_max: int | None = None
    srss_triplets: int = 1024
    srss_seed: int = 0

    def __post_init__(self) -> None:
        if self.r_near is not None and self.r_near < 1:
            raise ValueError(f"r_near must be >= 1, got {self.r_near}")
        if self.r_far is not None and self.r_far < 1:
            raise ValueError(f"r_far must be >= 1, got {self.r_far}")
        if self.cds_delta_max is not None and self.cds_delta_max < 2:
            raise ValueError(f"cds_delta_max must be >= 2, got {self.cds_delta_max}")
        if self.srss_triplets < 1:
            raise ValueError(f"srss_triplets must be >= 1, got {self.srss_triplets}")

    def resolved(self, height: int, width: int) -> "MetricConfig":
        """Materialize grid-dependent defaults for an H x W lattice."""
        radius = -(-min(height, width) // 2)
        out = self
        if out.r_near is None:
            out = replace(out, r_near=radius)
        if out.r_far is None:
            out = replace(out, r_far=radius)
        if out.cds_delta_max is None:
            # full range; floor of 2 keeps the config invariant on tiny grids,
            # where the slope fit then fails with the usable-class error
            out = replace(out, cds_delta_max=max(2, (height - 1) + (width - 1)))
        return out

    def as_dict(self) -> dict:
        return {
            "r_near": self.r_near,
            "r_far": self.r_far,
            "cds_delta_max": self.cds_delta_max,
            "srss_triplets": self.srss_triplets,
            "srss_seed": self.srss_seed,
        }


@dataclass(frozen=True)
class TripletSample:
    """Token indices of one (anchor, positive, negative) draw.

    anchor and positive lie inside the mask with 1 <= d(anchor, positive)
    <= r_near; negative lies outside with d(anchor, negative) >= r_far.
    """

    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class MetricReport:
    """Per-image values plus aggregate mean/std for one encoder and metric."""

    encoder_id: str
    metric_name: str
    per_image: tuple[tuple[str, float], ...]
    aggregate_mean: float
    aggregate_std: float
    config: MetricConfig

    def __post_init__(self) -> None:
        if not self.per_image:
            raise ValueError("report needs at least one per-image value")
        if self.metric_name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.metric_name!r}")
        mean = math.fsum(v for _, v in self.per_image) / len(self.per_image)
        if abs(mean - self.aggregate_mean) > 1e-12:
            raise ValueError(
                f"aggregate_mean {self.aggregate_mean} disagrees with per-image mean {mean}"
            )

    def to_dict(self) -> dict:
        return {
            "encoder_id": self.encoder_id,
            "metric": self.metric_name,
            "config": self.config.as_dict(),
            "per_image": [{"id": i, "value": v} for i, v in self.per_image],
            "mean": self.aggregate_mean,
            "std": self.aggregate_std,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricReport":
        cfg = payload.get("config", {})
        return cls(
            encoder_id=payload["encoder_id"],
            metric_name=payload["metric"],
            per_image=tuple((e["id"], float(e["value"])) for e in payload["per_image"]),
            aggregate_mean=float(payload["mean"]),
            aggregate_std=float(payload["std"]),
            config=MetricConfig(
                r_near=cfg.get("r_near"),
                r_far=cfg.get("r_far"),
                cds_delta_max=cfg.get("cds_delta_max"),
                srss_triplets=cfg.get("srss_triplets", 1024),
                srss_seed=cfg.get("srss_seed", 0),
            ),
        )


def lds(grid: PatchGrid, cfg: MetricConfig | None = None) -> float:
    """Mean near-band similarity minus mean far-band similarity."""
    cfg = (cfg or MetricConfig()).resolved(grid.height, grid.width)
    corr = correlogram(grid)
    near = corr.deltas < cfg.r_near
    far = corr.deltas >= cfg.r_far
    if not near.any():
        raise ValueError(
            f"no pairs in near band 0 < d < {cfg.r_near} on a "
            f"{grid.height}x{grid.width} lattice"
        )
    if not far.any():
        raise ValueError(
            f"no pairs in far band d >= {cfg.r_far} on a "
            f"{grid.height}x{grid.width} lattice"
        )
    near_mean = np.dot(corr.g[near], corr.counts[near]) / corr.counts[near].sum()
    far_mean = np.dot(corr.g[far], corr.counts[far]) / corr.counts[far].sum()
    return float(near_mean - far_mean)


def cds(grid: PatchGrid, cfg: MetricConfig | None = None) -> float:
    """Negated least-squares slope of the correlogram, classes 1..delta_max.

    Each present distance class contributes one equally weighted point.
    """
    cfg = (cfg or MetricConfig()).resolved(grid.height, grid.width)
    corr = correlogram(grid)
    keep = corr.deltas <= cfg.cds_delta_max
    xs = corr.deltas[keep].astype(np.float64)
    ys = corr.g[keep]
    if len(xs) < 2:
        raise ValueError(
            f"need >= 2 distance classes with delta <= {cfg.cds_delta_max} "
            f"for the slope fit, found {len(xs)}"
        )
    dx = xs - xs.mean()
    slope = np.dot(dx, ys - ys.mean()) / np.dot(dx, dx)
    return float(-slope)


def rmsc(grid: PatchGrid) -> float:
    """RMS deviation of unit-normalized tokens from their mean; 0 iff identical."""
    unit, _ = _unit_tokens(grid, strict=True)
    flat = unit.reshape(grid.token_count, grid.dim)
    dev = flat - flat.mean(axis=0)
    return float(np.sqrt(np.einsum("td,td->", dev, dev) / grid.token_count))


def _manhattan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Manhattan distances between (N, 2) and (M, 2) positions."""
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)


def sample_triplets(
    mask: SegmentMask, r_near: int, r_far: int, count: int, seed: int
) -> tuple[TripletSample, ...]:
    """Draw ``count`` valid triplets, uniform over all valid triplets.

    Rejection sampling over uniform (anchor, positive, negative) draws from
    the inside/inside/outside regions; the counter-based generator makes the
    sequence a pure function of ``seed``.
    """
    width = mask.width
    inside = np.argwhere(mask.bits)
    outside = np.argwhere(~mask.bits)
    if len(inside) == 0 or len(inside) == 1:
        raise ValueError(
            f"mask too small for triplets: {len(inside)} inside token(s), "
            "need an anchor plus a distinct positive"
        )
    if len(outside) == 0:
        raise ValueError("mask too large for triplets: no outside tokens")

    d_in = _manhattan(inside, inside)
    d_out = _manhattan(inside, outside)
    has_positive = ((d_in >= 1) & (d_in <= r_near)).any(axis=1)
    has_negative = (d_out >= r_far).any(axis=1)
    if not (has_positive & has_negative).any():
        raise ValueError(
            f"radii infeasible: no anchor has both a positive within d <= {r_near} "
            f"and a negative at d >= {r_far}"
        )

    rng = np.random.Generator(np.random.Philox(key=seed & (2**128 - 1)))
    triplets = []
    for _ in range(count):
        for _ in range(_REJECTION_CAP):
            a = int(rng.integers(len(inside)))
            p = int(rng.integers(len(inside)))
            n = int(rng.integers(len(outside)))
            if 1 <= d_in[a, p] <= r_near and d_out[a, n] >= r_far:
                break
        else:
            raise ValueError(
                f"gave up after {_REJECTION_CAP} rejections per triplet, "
                "mask/radii combination is practically infeasible"
            )
        triplets.append(
            TripletSample(
                anchor=int(inside[a, 0] * width + inside[a, 1]),
                positive=int(inside[p, 0] * width + inside[p, 1]),
                negative=int(outside[n, 0] * width + outside[n, 1]),
            )
        )
    return tuple(triplets)


def srss(grid: PatchGrid, mask: SegmentMask, cfg: MetricConfig | None = None) -> float:
    """Mean cos(anchor, positive) - cos(anchor, negative) over seeded triplets."""
    if (mask.height, mask.width) != (grid.height, grid.width):
        raise ValueError(
            f"mask shape {(mask.height, mask.width)} does not match grid "
            f"{(grid.height, grid.width)}"
        )
    cfg = (cfg or MetricConfig()).resolved(grid.height, grid.width)
    unit, _ = _unit_tokens(grid, strict=True)
    flat = unit.reshape(grid.token_count, grid.dim)
    triplets = sample_triplets(mask, cfg.r_near, cfg.r_far, cfg.srss_triplets, cfg.srss_seed)
    anchors = np.array([t.anchor for t in triplets])
    positives = np.array([t.positive for t in triplets])
    negatives = np.array([t.negative for t in triplets])
    gaps = np.einsum("td,td->t", flat[anchors], flat[positives]) - np.einsum(
        "td,td->t", flat[anchors], flat[negatives]
    )
    return float(gaps.mean())


def aggregate_metric(
    values: Iterable[tuple[str, float]],
    encoder_id: str,
    metric_name: str,
    cfg: MetricConfig | None = None,
) -> MetricReport:
    """Fold per-image values into a report, image-id sorted, population std."""
    items = sorted(values, key=lambda pair: pair[0])
    if not items:
        raise ValueError("cannot aggregate an empty value list")
    for image_id, value in items:
        if not math.isfinite(value):
            raise ValueError(f"non-finite metric value for image {image_id!r}")
    vals = np.array([v for _, v in items], dtype=np.float64)
    mean = float(vals.mean())
    std = float(np.sqrt(np.mean((vals - mean) ** 2)))
    return MetricReport(
        encoder_id=encoder_id,
        metric_name=metric_name,
        per_image=tuple((i, float(v)) for i, v in items),
        aggregate_mean=mean,
        aggregate_std=std,
        config=cfg or MetricConfig(),
    )


def compute_metric(
    name: str,
    grid: PatchGrid,
    cfg: MetricConfig | None = None,
    mask: SegmentMask | None = None,
) -> float:
    """Dispatch a metric by (case-insensitive) name."""
    key = name.upper()
    if key == "LDS":
        return lds(grid, cfg)
    if key == "CDS":
        return cds(grid, cfg)
    if key == "RMSC":
        return rmsc(grid)
    if key == "SRSS":
        if mask is None:
            raise ValueError("SRSS requires a segment mask")
        return srss(grid, mask, cfg)
    raise ValueError(f"unknown metric {name!r}, expected one of {METRIC_NAMES}")
