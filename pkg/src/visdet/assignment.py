"""Visibility-guided positive sampling and per-cell training labels.

Each annotated instance is assigned to one pyramid level by size, its
candidate cells (visibility above threshold) are resolved against other
instances, and a fixed number of positives is drawn per instance with
probability proportional to visibility. Candidates that were not drawn
become ignore cells so the training signal never contradicts itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box2D, CellId, GridSpec, crop_window, encode_offsets
from .visibility import VisibilityGrid, VisibilityThreshold, candidates


class UnassignableInstanceError(ValueError):
    """An instance could not receive any positive cell at its level."""

    def __init__(self, instance_id: int, reason: str) -> None:
        super().__init__(f"instance {instance_id}: {reason}")
        self.instance_id = instance_id


@dataclass(frozen=True)
class InstanceAnnotation:
    instance_id: int
    image_id: int
    category_id: int
    box: Box2D

    def __post_init__(self) -> None:
        if self.instance_id < 0 or self.image_id < 0 or self.category_id < 0:
            raise ValueError("annotation ids must be nonnegative")
        if self.box.is_degenerate():
            raise ValueError(f"annotation {self.instance_id} has a degenerate box")


@dataclass(frozen=True)
class SamplingConfig:
    k: int = 10
    threshold: VisibilityThreshold = VisibilityThreshold()
    rng_seed: int = 0
    strides: tuple[int, ...] = (8, 16, 32, 64, 128)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])) or not self.strides:
            raise ValueError(f"strides must be strictly increasing, got {self.strides}")


@dataclass(frozen=True)
class PositiveSample:
    """One positive cell for one instance, with its training targets."""

    cell: CellId
    instance_id: int
    category_id: int
    multiplicity: int
    targets: tuple[float, float, float, float]
    fallback: bool = False


@dataclass
class LevelLabels:
    grid: GridSpec
    positives: list[PositiveSample] = field(default_factory=list)
    ignore: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class LabelMap:
    """Per-image training labels: positives and ignore cells per level, rest negative."""

    image_id: int
    levels: dict[int, LevelLabels]
    skipped: list[int] = field(default_factory=list)


FINEST_LEVEL = 3
_LEVEL_BASE_SIZE = 64.0


def assign_level(box: Box2D, strides: tuple[int, ...] = (8, 16, 32, 64, 128)) -> int:
    """Pyramid level for an instance by the canonical FPN scale rule.

    Level 3 (the finest stride) holds objects around 64 px; each doubling
    of sqrt(area) moves one level up, clamped to the available range.
    """
    size = math.sqrt(box.area)
    raw = FINEST_LEVEL + math.floor(math.log2(size / _LEVEL_BASE_SIZE))
    return min(max(raw, FINEST_LEVEL), FINEST_LEVEL + len(strides) - 1)


def instance_rng(rng_seed: int, image_id: int, instance_id: int) -> np.random.Generator:
    """Per-instance generator split from the root seed.

    Streams are split by (image_id, instance_id) through SeedSequence spawn
    keys, so an instance's draws do not depend on processing order.
    """
    seq = np.random.SeedSequence(rng_seed, spawn_key=(image_id, instance_id))
    return np.random.default_rng(seq)


def sample_positives(
    vis: VisibilityGrid,
    candidate_cells: list[CellId],
    k: int,
    rng: np.random.Generator,
    exclude: frozenset[CellId] = frozenset(),
) -> tuple[dict[CellId, int], bool]:
    """Draw k positives weighted by visibility; returns (cell -> multiplicity, fallback).

    With at least k candidates, k distinct cells are drawn without
    replacement; with fewer, every candidate is taken once and the
    remainder is topped up with replacement. With no candidate at all the
    single best-scoring covered cell (outside `exclude`) carries the full
    multiplicity and the result is flagged as a fallback.
    """
    cand = sorted(candidate_cells)
    if not cand:
        pool = [c for c in vis.covered_cells() if c not in exclude]
        if not pool:
            raise UnassignableInstanceError(vis.instance_id, "no available cell at its level")
        best = min(pool, key=lambda c: (-vis.scores[(c.row, c.col)], c.row, c.col))
        return {best: k}, True
    weights = np.array([vis.scores[(c.row, c.col)] for c in cand], dtype=np.float64)
    probs = weights / weights.sum()
    counts: dict[CellId, int] = {}
    if len(cand) >= k:
        chosen = rng.choice(len(cand), size=k, replace=False, p=probs)
        for i in chosen:
            counts[cand[int(i)]] = 1
    else:
        counts = {c: 1 for c in cand}
        extra = rng.choice(len(cand), size=k - len(cand), replace=True, p=probs)
        for i in extra:
            counts[cand[int(i)]] += 1
    return counts, False


def center_sample_positives(box: Box2D, grid: GridSpec, k: int) -> dict[CellId, int]:
    """Center-based baseline: the k covered cells nearest the box center.

    Provided for comparison against the visibility-guided sampler; it is
    deterministic and ignores occlusion entirely.
    """
    extent_x, extent_y = grid.pixel_extent
    x0, y0, x1, y1 = crop_window(box, extent_x, extent_y, min_side=1)
    cells = [
        CellId(grid.level, r, c)
        for r in range(y0 // grid.stride, (y1 - 1) // grid.stride + 1)
        for c in range(x0 // grid.stride, (x1 - 1) // grid.stride + 1)
    ]
    cx, cy = box.center
    cells.sort(
        key=lambda cell: (
            (grid.cell_center(cell.row, cell.col)[0] - cx) ** 2
            + (grid.cell_center(cell.row, cell.col)[1] - cy) ** 2,
            cell.row,
            cell.col,
        )
    )
    take = cells[: min(k, len(cells))]
    counts = {c: 1 for c in take}
    for i in range(k - len(take)):
        counts[take[i % len(take)]] += 1
    return counts


def build_label_map(
    image_id: int,
    image_width: int,
    image_height: int,
    annotations: list[InstanceAnnotation],
    vis_by_instance: dict[int, VisibilityGrid],
    cfg: SamplingConfig,
) -> LabelMap:
    """Assemble per-cell labels for one image.

    A cell claimed as candidate by several instances goes to the one with
    the higher visibility there (ties to the smaller box, then the smaller
    instance id); losers drop it before sampling. Candidates never drawn as
    positives for anyone become ignore cells.
    """
    levels = {
        FINEST_LEVEL + i: LevelLabels(
            grid=GridSpec.for_image(image_width, image_height, stride, FINEST_LEVEL + i)
        )
        for i, stride in enumerate(cfg.strides)
    }

    anns = sorted(annotations, key=lambda a: a.instance_id)
    original: dict[int, set[CellId]] = {}
    pruned: dict[int, set[CellId]] = {}
    for ann in anns:
        vis = vis_by_instance[ann.instance_id]
        cells = set(candidates(vis, cfg.threshold))
        original[ann.instance_id] = cells
        pruned[ann.instance_id] = set(cells)

    claims: dict[CellId, list[int]] = {}
    for iid, cells in original.items():
        for cell in cells:
            claims.setdefault(cell, []).append(iid)
    areas = {a.instance_id: a.box.area for a in anns}
    for cell, claimants in claims.items():
        if len(claimants) < 2:
            continue
        winner = min(
            claimants,
            key=lambda iid: (
                -vis_by_instance[iid].scores[(cell.row, cell.col)],
                areas[iid],
                iid,
            ),
        )
        for iid in claimants:
            if iid != winner:
                pruned[iid].discard(cell)

    label_map = LabelMap(image_id=image_id, levels=levels)
    taken: set[CellId] = set()
    for ann in anns:
        vis = vis_by_instance[ann.instance_id]
        rng = instance_rng(cfg.rng_seed, image_id, ann.instance_id)
        try:
            counts, fallback = sample_positives(
                vis, sorted(pruned[ann.instance_id]), cfg.k, rng, exclude=frozenset(taken)
            )
        except UnassignableInstanceError:
            label_map.skipped.append(ann.instance_id)
            continue
        for cell, mult in sorted(counts.items()):
            taken.add(cell)
            if fallback:
                # A fallback claim must not collide with later instances'
                # candidate sets; regular positives cannot by construction.
                for cells in pruned.values():
                    cells.discard(cell)
            levels[cell.level].positives.append(
                PositiveSample(
                    cell=cell,
                    instance_id=ann.instance_id,
                    category_id=ann.category_id,
                    multiplicity=mult,
                    targets=encode_offsets(cell, levels[cell.level].grid, ann.box),
                    fallback=fallback,
                )
            )

    all_candidates: set[CellId] = set()
    for cells in original.values():
        all_candidates |= cells
    for cell in all_candidates - taken:
        levels[cell.level].ignore.append((cell.row, cell.col))

    for lv in levels.values():
        lv.positives.sort(key=lambda p: (p.cell.row, p.cell.col))
        lv.ignore.sort()
    label_map.skipped.sort()
    return label_map
