"""Training loss components: focal classification, GIoU regression, IoU-target BCE.

All functions are pure and framework-free; they accept scalars or numpy
arrays and broadcast elementwise. `total_loss` evaluates a full dense
prediction set against a label map, excluding ignore cells from the
classification term and weighting positives by their sampling
multiplicity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .assignment import LabelMap
from .geometry import Box2D, giou, iou

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self) -> None:
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be nonnegative, got {self.focal_gamma}")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError(f"focal_alpha must lie in (0, 1), got {self.focal_alpha}")


def focal_loss(prob, target, cfg: LossConfig = LossConfig()):
    """-alpha_t * (1 - p_t)^gamma * log(p_t), with p clamped away from {0, 1}."""
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target)
    p_t = np.where(t == 1, p, 1.0 - p)
    a_t = np.where(t == 1, cfg.focal_alpha, 1.0 - cfg.focal_alpha)
    return -a_t * (1.0 - p_t) ** cfg.focal_gamma * np.log(p_t)


def giou_loss(pred: Box2D, gt: Box2D) -> float:
    """1 - GIoU(pred, gt), in [0, 2)."""
    return 1.0 - giou(pred, gt)


def giou_loss_grad(pred: Box2D, gt: Box2D) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of giou_loss w.r.t. both boxes' corner coordinates.

    Returns (d/d pred, d/d gt), each ordered (x_min, y_min, x_max, y_max).
    Uses one-sided subgradients at coordinate ties, which random inputs do
    not hit.
    """
    ax1, ay1, ax2, ay2 = pred.corners()
    bx1, by1, bx2, by2 = gt.corners()

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(0.0, iw) * max(0.0, ih)
    area_a = pred.area
    area_b = gt.area
    union = area_a + area_b - inter
    hw = max(ax2, bx2) - min(ax1, bx1)
    hh = max(ay2, by2) - min(ay1, by1)
    hull = hw * hh

    # d inter / d coord: active only while the overlap is nonempty and the
    # coordinate defines the intersection edge.
    live = iw > 0 and ih > 0
    dI = np.zeros(8)
    if live:
        dI[0] = -ih if ax1 > bx1 else 0.0
        dI[1] = -iw if ay1 > by1 else 0.0
        dI[2] = ih if ax2 < bx2 else 0.0
        dI[3] = iw if ay2 < by2 else 0.0
        dI[4] = -ih if bx1 > ax1 else 0.0
        dI[5] = -iw if by1 > ay1 else 0.0
        dI[6] = ih if bx2 < ax2 else 0.0
        dI[7] = iw if by2 < ay2 else 0.0

    dA = np.array(
        [-(ay2 - ay1), -(ax2 - ax1), (ay2 - ay1), (ax2 - ax1), 0.0, 0.0, 0.0, 0.0]
    )
    dB = np.array(
        [0.0, 0.0, 0.0, 0.0, -(by2 - by1), -(bx2 - bx1), (by2 - by1), (bx2 - bx1)]
    )
    dU = dA + dB - dI

    dHW = np.zeros(8)
    dHW[0] = -1.0 if ax1 < bx1 else 0.0
    dHW[2] = 1.0 if ax2 > bx2 else 0.0
    dHW[4] = -1.0 if bx1 < ax1 else 0.0
    dHW[6] = 1.0 if bx2 > ax2 else 0.0
    dHH = np.zeros(8)
    dHH[1] = -1.0 if ay1 < by1 else 0.0
    dHH[3] = 1.0 if ay2 > by2 else 0.0
    dHH[5] = -1.0 if by1 < ay1 else 0.0
    dHH[7] = 1.0 if by2 > ay2 else 0.0
    dH = dHW * hh + hw * dHH

    # giou = inter/union + union/hull - 1
    dgiou = (dI * union - inter * dU) / union**2 + (dU * hull - union * dH) / hull**2
    grad = -dgiou
    return grad[:4], grad[4:]


def iou_bce(pred_conf, target_iou):
    """Binary cross entropy against a soft IoU target, prediction clamped."""
    p = np.clip(np.asarray(pred_conf, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target_iou, dtype=np.float64)
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


@dataclass
class LevelPredictions:
    """Dense per-cell network outputs on one pyramid level.

    class_probs is (H, W, C) with channel index equal to category id,
    offsets is (H, W, 4) as (left, top, right, bottom), confidence (H, W).
    """

    class_probs: np.ndarray
    offsets: np.ndarray
    confidence: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    reg: float
    iou: float
    positive_weight: int
    has_positives: bool


def total_loss(
    preds: Mapping[int, LevelPredictions],
    labels: LabelMap,
    cfg: LossConfig = LossConfig(),
) -> LossBreakdown:
    """Sum of the three components, each normalized by total positive multiplicity.

    Classification runs over positives and negatives (ignore cells carry
    zero weight); regression and the IoU confidence term run over positives
    only. Every positive contributes proportionally to its multiplicity.
    """
    num_pos = sum(p.multiplicity for lv in labels.levels.values() for p in lv.positives)
    norm = num_pos if num_pos > 0 else 1

    cls_sum = 0.0
    reg_sum = 0.0
    iou_sum = 0.0
    for level, lv in labels.levels.items():
        lp = preds[level]
        h, w, n_cat = lp.class_probs.shape
        if (h, w) != (lv.grid.height, lv.grid.width):
            raise ValueError(
                f"level {level}: predictions are {w}x{h}, grid is {lv.grid.width}x{lv.grid.height}"
            )
        target = np.zeros((h, w, n_cat))
        weight = np.ones((h, w))
        for row, col in lv.ignore:
            weight[row, col] = 0.0
        for pos in lv.positives:
            weight[pos.cell.row, pos.cell.col] = pos.multiplicity
            target[pos.cell.row, pos.cell.col, pos.category_id] = 1.0
        cls_sum += float(np.sum(weight[:, :, None] * focal_loss(lp.class_probs, target, cfg)))

        for pos in lv.positives:
            row, col = pos.cell.row, pos.cell.col
            cx, cy = lv.grid.cell_center(row, col)
            gl, gt_, gr, gb = pos.targets
            gt_box = Box2D(cx - gl, cy - gt_, cx + gr, cy + gb)
            # Negative predicted offsets decode to an inverted box; clamp
            # them to zero the way an exp- or relu-activated head would.
            pl, pt, pr, pb = (max(float(v), 0.0) for v in lp.offsets[row, col])
            pred_box = Box2D(cx - pl, cy - pt, cx + pr, cy + pb)
            reg_sum += pos.multiplicity * giou_loss(pred_box, gt_box)
            target_iou = 0.0 if pred_box.is_degenerate() else iou(pred_box, gt_box)
            iou_sum += pos.multiplicity * float(iou_bce(lp.confidence[row, col], target_iou))

    cls_term = cls_sum / norm
    reg_term = reg_sum / norm
    iou_term = iou_sum / norm
    return LossBreakdown(
        total=cls_term + reg_term + iou_term,
        cls=cls_term,
        reg=reg_term,
        iou=iou_term,
        positive_weight=num_pos,
        has_positives=num_pos > 0,
    )
