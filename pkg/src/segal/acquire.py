"""Pixel informativeness scoring, region aggregation, and region selection.

All metrics are oriented so that higher means more informative, which keeps
their rankings interchangeable. Scoring is embarrassingly parallel across
images; selection is a deterministic single-threaded reduction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .datapool import RegionGrid, RegionID
from .errors import InvalidArgumentError

METRICS = ("random", "least_confidence", "entropy", "margin")


def pixel_scores(softmax_probs: np.ndarray, metric: str,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-pixel score from (H,W,K) softmax probabilities.

    entropy: -sum p ln p in [0, ln K]; least_confidence: 1 - max in
    [0, 1-1/K]; margin: 1 - (p1 - p2) in [0, 1]; random: uniform(0,1).
    """
    probs = np.asarray(softmax_probs, dtype=np.float64)
    if probs.ndim != 3:
        raise InvalidArgumentError(f"expected (H,W,K) probabilities, got shape {probs.shape}")
    sums = probs.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-4:
        raise InvalidArgumentError("probabilities do not sum to 1 per pixel")
    if metric == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
        return -plogp.sum(axis=-1)
    if metric == "least_confidence":
        return 1.0 - probs.max(axis=-1)
    if metric == "margin":
        top2 = np.partition(probs, -2, axis=-1)[..., -2:]
        return 1.0 - (top2[..., 1] - top2[..., 0])
    if metric == "random":
        if rng is None:
            raise InvalidArgumentError("random metric needs an rng")
        return rng.random(probs.shape[:2])
    raise InvalidArgumentError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass(frozen=True)
class RegionScore:
    image_id: str
    region_id: RegionID
    score: float
    unlabeled_pixel_count: int


def region_scores(score_map: np.ndarray, grid: RegionGrid, known_mask: np.ndarray,
                  image_id: str = "") -> list[RegionScore]:
    """Mean pixel score over each region's unknown pixels; fully-known regions omitted."""
    if score_map.shape != (grid.height, grid.width) or known_mask.shape != score_map.shape:
        raise InvalidArgumentError("score map / grid / mask shapes inconsistent")
    out: list[RegionScore] = []
    unknown = ~np.asarray(known_mask, dtype=bool)
    for region in grid:
        sub_unknown = unknown[region.slices]
        n = int(sub_unknown.sum())
        if n == 0:
            continue
        mean = float(score_map[region.slices][sub_unknown].mean())
        out.append(RegionScore(image_id, region.region_id, mean, n))
    return out


def select_regions(scores: Iterable[RegionScore], per_image_k: int,
                   global_budget: int | None = None) -> list[tuple[str, RegionID]]:
    """Top-k regions per image by score; ties break on (row, col) order.

    With a global_budget, ranking is instead over all regions at once (ablation
    mode) and per_image_k is ignored. Deterministic for any fixed input.
    """
    if global_budget is None and per_image_k < 1:
        raise InvalidArgumentError(f"per_image_k must be >= 1, got {per_image_k}")
    ranked = sorted(scores, key=lambda s: (s.image_id, -s.score, s.region_id))
    if global_budget is not None:
        overall = sorted(ranked, key=lambda s: (-s.score, s.image_id, s.region_id))
        return [(s.image_id, s.region_id) for s in overall[:global_budget]]
    out: list[tuple[str, RegionID]] = []
    taken = 0
    current = None
    for s in ranked:
        if s.image_id != current:
            current = s.image_id
            taken = 0
        if taken < per_image_k:
            out.append((s.image_id, s.region_id))
            taken += 1
    return out
