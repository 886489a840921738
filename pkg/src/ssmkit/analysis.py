"""Correlation machinery: Pearson r, least-squares lines, report joins.

External quality scores (generation FID, probing accuracy, ...) are inputs,
never computed here; this module only joins them with metric reports and
quantifies the relationship.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import MetricReport


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"line fit needs n >= 2, got {self.n}")


@dataclass(frozen=True)
class ScoreSeries:
    """External per-encoder scores, e.g. gFID or probing accuracy."""

    score_name: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        ids = [e for e, _ in self.entries]
        if len(set(ids)) != len(ids):
            dupe = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate encoder_id {dupe!r} in score series")
        for encoder_id, score in self.entries:
            if not math.isfinite(score):
                raise ValueError(f"non-finite score for encoder {encoder_id!r}")


@dataclass(frozen=True)
class CorrelationResult:
    metric_name: str
    score_name: str
    n: int
    pearson_r: float
    fit: LineFit
    pairs: tuple[tuple[str, float, float], ...]
    dropped: tuple[str, ...]

    def __post_init__(self) -> None:
        if abs(self.pearson_r) > 1.0 + 1e-12:
            raise ValueError(f"pearson_r {self.pearson_r} outside [-1, 1]")
        if self.n != len(self.pairs):
            raise ValueError(f"n={self.n} disagrees with {len(self.pairs)} joined pairs")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric_name,
            "score": self.score_name,
            "n": self.n,
            "pearson_r": self.pearson_r,
            "slope": self.fit.slope,
            "intercept": self.fit.intercept,
            "pairs": [
                {"encoder_id": e, "metric": m, "score": s} for e, m, s in self.pairs
            ],
            "dropped": list(self.dropped),
        }


def _as_arrays(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"series must be equal-length 1-d, got {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError(f"need at least 2 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("series contain non-finite values")
    return x, y


def linfit(xs: Sequence[float], ys: Sequence[float]) -> LineFit:
    """Ordinary least squares y ~ slope * x + intercept."""
    x, y = _as_arrays(xs, ys)
    dx = x - x.mean()
    sxx = np.dot(dx, dx)
    if sxx == 0.0:
        raise ValueError("x series is constant, slope is undefined")
    slope = np.dot(dx, y - y.mean()) / sxx
    return LineFit(slope=float(slope), intercept=float(y.mean() - slope * x.mean()), n=len(x))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation, clamped to [-1, 1] after a tolerance check."""
    x, y = _as_arrays(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        which = "x" if sxx == 0.0 else "y"
        raise ValueError(f"{which} series is constant, correlation is undefined")
    r = float(np.dot(dx, dy) / np.sqrt(sxx * syy))
    if abs(r) > 1.0 + 1e-12:
        raise ValueError(f"correlation {r} fell outside [-1, 1] beyond tolerance")
    return min(1.0, max(-1.0, r))


def correlate_reports(
    reports: Sequence[MetricReport], scores: ScoreSeries
) -> CorrelationResult:
    """Join reports with scores on encoder_id and correlate aggregate means.

    Encoders present in only one input are dropped but listed in the result;
    the join is sorted, so the outcome is independent of input order.
    """
    by_encoder: dict[str, MetricReport] = {}
    for report in reports:
        if report.encoder_id in by_encoder:
            raise ValueError(f"duplicate encoder_id {report.encoder_id!r} in reports")
        by_encoder[report.encoder_id] = report
    metric_names = {r.metric_name for r in reports}
    if len(metric_names) > 1:
        raise ValueError(f"reports mix metrics {sorted(metric_names)}, correlate one at a time")

    score_map = dict(scores.entries)
    joined = sorted(set(by_encoder) & set(score_map))
    if len(joined) < 2:
        raise ValueError(
            f"need >= 2 encoders present in both inputs, found {len(joined)}"
        )
    dropped = tuple(sorted((set(by_encoder) | set(score_map)) - set(joined)))
    xs = [by_encoder[e].aggregate_mean for e in joined]
    ys = [score_map[e] for e in joined]
    return CorrelationResult(
        metric_name=next(iter(metric_names)),
        score_name=scores.score_name,
        n=len(joined),
        pearson_r=pearson(xs, ys),
        fit=linfit(xs, ys),
        pairs=tuple((e, x, y) for e, x, y in zip(joined, xs, ys)),
        dropped=dropped,
    )


def read_scores_csv(path: str | Path, score_name: str | None = None) -> ScoreSeries:
    """Read a score series from CSV with header ``encoder_id,score``."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["encoder_id", "score"]:
        raise ValueError(f"{path}: expected header 'encoder_id,score'")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            score = float(row[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
        entries.append((row[0], score))
    return ScoreSeries(score_name=score_name or path.stem, entries=tuple(entries))
