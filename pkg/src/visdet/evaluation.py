"""COCO-style average precision over a sweep of IoU thresholds.

Detections are ranked by score and matched greedily per image and
category to the unmatched ground truth with the highest IoU at or above
the threshold. Average precision uses 101-point interpolation of the
precision-recall curve; the headline number averages over categories and
thresholds. Means are accumulated with exact summation so results do not
depend on iteration batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .assignment import InstanceAnnotation
from .geometry import Box2D, DegenerateBoxError, iou


class UndefinedApError(ValueError):
    """AP is undefined without any ground-truth annotation."""


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = tuple(t / 100 for t in range(50, 100, 5))

    def __post_init__(self) -> None:
        if not self.iou_thresholds:
            raise ValueError("at least one IoU threshold is required")
        if any(not 0.0 < t < 1.0 for t in self.iou_thresholds):
            raise ValueError(f"thresholds must lie in (0, 1), got {self.iou_thresholds}")
        if any(b <= a for a, b in zip(self.iou_thresholds, self.iou_thresholds[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {self.iou_thresholds}")


@dataclass(frozen=True)
class DetectionRecord:
    """A scored detection tied to an image, the unit of evaluation."""

    image_id: int
    category_id: int
    box: Box2D
    score: float


@dataclass(frozen=True)
class ApReport:
    ap: float
    ap50: float
    ap75: float
    per_category: dict[int, float]


_RECALL_POINTS = 101


def _detection_order(d: DetectionRecord) -> tuple:
    # Scores first; the remaining keys only break ties, so any strictly
    # monotone rescaling of all scores leaves the ranking unchanged.
    return (-d.score, d.image_id, *d.box.corners())


def _safe_iou(a: Box2D, b: Box2D) -> float:
    try:
        return iou(a, b)
    except DegenerateBoxError:
        return 0.0


def _ap_at_threshold(
    ranked: list[DetectionRecord],
    gts_by_image: dict[int, list[InstanceAnnotation]],
    n_gt: int,
    threshold: float,
) -> float:
    matched: dict[int, list[bool]] = {img: [False] * len(g) for img, g in gts_by_image.items()}
    tp_flags: list[bool] = []
    for det in ranked:
        gts = gts_by_image.get(det.image_id, [])
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if matched[det.image_id][j]:
                continue
            v = _safe_iou(det.box, gt.box)
            if v >= threshold and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            matched[det.image_id][best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    precisions: list[float] = []
    recalls: list[float] = []
    tp = 0
    for rank, flag in enumerate(tp_flags, start=1):
        if flag:
            tp += 1
        precisions.append(tp / rank)
        recalls.append(tp / n_gt)

    # Monotone envelope: precision at rank i becomes the best precision
    # achievable at that recall or beyond.
    running = 0.0
    envelope = [0.0] * len(precisions)
    for i in range(len(precisions) - 1, -1, -1):
        running = max(running, precisions[i])
        envelope[i] = running

    # 101-point interpolation: the envelope sampled at the first rank
    # whose recall reaches each grid point.
    interp = []
    for i in range(_RECALL_POINTS):
        r = i / (_RECALL_POINTS - 1)
        j = next((j for j, rec in enumerate(recalls) if rec >= r), None)
        interp.append(envelope[j] if j is not None else 0.0)
    return math.fsum(interp) / _RECALL_POINTS


def evaluate_ap(
    detections: list[DetectionRecord],
    annotations: list[InstanceAnnotation],
    cfg: EvalConfig = EvalConfig(),
) -> ApReport:
    """Average precision per category and threshold, averaged both ways.

    Categories without any ground truth are excluded from the averages (a
    detection for such a category only ever costs precision elsewhere).
    """
    if not annotations:
        raise UndefinedApError("no ground-truth annotations supplied")
    categories = sorted({a.category_id for a in annotations})
    ranked_all = sorted(detections, key=_detection_order)

    per_cat_thr: dict[int, dict[float, float]] = {}
    for cat in categories:
        gts = [a for a in annotations if a.category_id == cat]
        gts_by_image: dict[int, list[InstanceAnnotation]] = {}
        for a in sorted(gts, key=lambda a: a.instance_id):
            gts_by_image.setdefault(a.image_id, []).append(a)
        ranked = [d for d in ranked_all if d.category_id == cat]
        per_cat_thr[cat] = {
            thr: _ap_at_threshold(ranked, gts_by_image, len(gts), thr)
            for thr in cfg.iou_thresholds
        }

    def mean_over_cats(thr: float) -> float:
        return math.fsum(per_cat_thr[cat][thr] for cat in categories) / len(categories)

    ap = math.fsum(mean_over_cats(t) for t in cfg.iou_thresholds) / len(cfg.iou_thresholds)
    ap50 = mean_over_cats(0.5) if 0.5 in cfg.iou_thresholds else float("nan")
    ap75 = mean_over_cats(0.75) if 0.75 in cfg.iou_thresholds else float("nan")
    per_category = {
        cat: math.fsum(per_cat_thr[cat][t] for t in cfg.iou_thresholds) / len(cfg.iou_thresholds)
        for cat in categories
    }
    return ApReport(ap=ap, ap50=ap50, ap75=ap75, per_category=per_category)
