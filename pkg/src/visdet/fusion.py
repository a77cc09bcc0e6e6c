"""Confidence-weighted box fusion, an averaging alternative to NMS.

Raw per-cell predictions are filtered by classification score, grouped
greedily around local score maxima (like NMS, but nothing is suppressed),
and every cluster is collapsed into one detection whose coordinates are
the confidence-weighted mean of its members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

from .geometry import Box2D, CellId, DegenerateBoxError, iou


@dataclass(frozen=True)
class Prediction:
    """A candidate box with its class score and localization confidence."""

    box: Box2D
    category_id: int
    cls_score: float
    confidence: float
    cell: CellId | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.cls_score <= 1.0:
            raise ValueError(f"cls_score out of range: {self.cls_score}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class FusionConfig:
    score_threshold: float = 0.05
    cluster_iou: float = 0.6
    score_mode: Literal["geomean", "seed"] = "geomean"

    def __post_init__(self) -> None:
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError(f"score_threshold must lie in (0, 1), got {self.score_threshold}")
        if not 0.0 < self.cluster_iou < 1.0:
            raise ValueError(f"cluster_iou must lie in (0, 1), got {self.cluster_iou}")
        if self.score_mode not in ("geomean", "seed"):
            raise ValueError(f"unknown score_mode: {self.score_mode}")


@dataclass(frozen=True)
class Detection:
    box: Box2D
    category_id: int
    score: float
    cluster_size: int


def _order_key(p: Prediction) -> tuple:
    # Total order: score first, then box coordinates, so clustering and
    # output do not depend on input ordering.
    return (-p.cls_score, *p.box.corners(), -p.confidence, p.category_id)


def _overlap(a: Box2D, b: Box2D) -> float:
    try:
        return iou(a, b)
    except DegenerateBoxError:
        # Two degenerate boxes never cluster together.
        return 0.0


def filter_predictions(preds: Iterable[Prediction], score_threshold: float) -> list[Prediction]:
    """Keep predictions with cls_score strictly above the threshold, order preserved."""
    return [p for p in preds if p.cls_score > score_threshold]


def cluster_predictions(preds: Iterable[Prediction], cluster_iou: float) -> list[list[Prediction]]:
    """Greedy per-category clustering around descending score maxima.

    The highest-scored unclustered prediction seeds a cluster and absorbs
    every unclustered same-category prediction overlapping it by at least
    `cluster_iou`. Each cluster starts with its seed.
    """
    by_category: dict[int, list[Prediction]] = {}
    for p in preds:
        by_category.setdefault(p.category_id, []).append(p)
    clusters: list[list[Prediction]] = []
    for category in sorted(by_category):
        remaining = sorted(by_category[category], key=_order_key)
        used = [False] * len(remaining)
        for i, seed in enumerate(remaining):
            if used[i]:
                continue
            used[i] = True
            cluster = [seed]
            for j in range(i + 1, len(remaining)):
                if not used[j] and _overlap(seed.box, remaining[j].box) >= cluster_iou:
                    used[j] = True
                    cluster.append(remaining[j])
            clusters.append(cluster)
    return clusters


def fuse_cluster(cluster: list[Prediction], score_mode: str = "geomean") -> Detection:
    """Collapse one cluster into a detection by confidence-weighted averaging.

    Coordinates are clamped to the members' per-coordinate envelope so the
    convexity contract holds exactly despite floating-point rounding. With
    all-zero confidences the seed's box is used unchanged.
    """
    if not cluster:
        raise ValueError("cannot fuse an empty cluster")
    seed = cluster[0]
    if score_mode == "seed":
        score = seed.cls_score
    else:
        score = math.sqrt(seed.cls_score * seed.confidence)
    if len(cluster) == 1:
        return Detection(box=seed.box, category_id=seed.category_id, score=score, cluster_size=1)
    total = sum(p.confidence for p in cluster)
    if total == 0.0:
        box = seed.box
    else:
        coords = [0.0, 0.0, 0.0, 0.0]
        for p in cluster:
            for i, v in enumerate(p.box.corners()):
                coords[i] += p.confidence * v
        fused = [v / total for v in coords]
        lo = [min(p.box.corners()[i] for p in cluster) for i in range(4)]
        hi = [max(p.box.corners()[i] for p in cluster) for i in range(4)]
        box = Box2D(*(min(max(fused[i], lo[i]), hi[i]) for i in range(4)))
    return Detection(box=box, category_id=seed.category_id, score=score, cluster_size=len(cluster))


def fuse(preds: Iterable[Prediction], cfg: FusionConfig = FusionConfig()) -> list[Detection]:
    """Filter, cluster, and fuse predictions; detections sorted by score descending."""
    kept = filter_predictions(preds, cfg.score_threshold)
    clusters = cluster_predictions(kept, cfg.cluster_iou)
    detections = [fuse_cluster(c, cfg.score_mode) for c in clusters]
    detections.sort(key=lambda d: (-d.score, *d.box.corners(), d.category_id))
    return detections
