"""Pooling of patch distance maps onto detector grid cells.

A cell's raw visibility is the mean distance over the pixels it shares
with the instance box; scores are the means normalized by their maximum,
so the most visible covered cell always scores exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .barrier import DistanceMap
from .geometry import Box2D, CellId, GeometryError, GridSpec

# Scores are quantized so that normalization is exactly invariant to a
# common scaling of the means; raw float division is not (the last bit of
# d / max flips under pre-scaled operands). Matches the 6-decimal float
# precision used by all JSON outputs.
SCORE_DECIMALS = 6


class NoVisibleRegionError(ValueError):
    """Every covered cell pooled to zero distance; no positive region exists."""


@dataclass(frozen=True)
class VisibilityThreshold:
    """Strict lower bound separating candidate positives from the rest."""

    value: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 < self.value < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.value}")


@dataclass(frozen=True)
class VisibilityGrid:
    """Per-cell visibility of one instance on its assigned pyramid level."""

    grid: GridSpec
    instance_id: int
    mean_distances: dict[tuple[int, int], float]
    scores: dict[tuple[int, int], float]

    def covered_cells(self) -> list[CellId]:
        return [CellId(self.grid.level, r, c) for r, c in sorted(self.scores)]


def pool_to_grid(
    dist: DistanceMap,
    box: Box2D,
    grid: GridSpec,
    origin: tuple[int, int] | None = None,
) -> dict[tuple[int, int], float]:
    """Mean distance per grid cell over the pixels the cell shares with the box.

    `origin` is the (x0, y0) image position of the distance map's top-left
    pixel; it defaults to the floor of the box corner, which matches maps
    computed on an unclipped crop of the box.
    """
    if origin is None:
        origin = (math.floor(box.x_min), math.floor(box.y_min))
    x0, y0 = origin
    h, w = dist.values.shape
    extent_x, extent_y = grid.pixel_extent
    if x0 < 0 or y0 < 0 or x0 + w > extent_x or y0 + h > extent_y:
        raise GeometryError(
            f"distance map window [{x0},{y0})+({w}x{h}) falls outside the grid extent "
            f"{extent_x}x{extent_y}"
        )
    s = grid.stride
    cols = (x0 + np.arange(w)) // s
    rows = (y0 + np.arange(h)) // s
    flat = (rows[:, None] * grid.width + cols[None, :]).ravel()
    # bincount keeps a fixed summation order, so pooling is deterministic.
    sums = np.bincount(flat, weights=dist.values.ravel(), minlength=grid.width * grid.height)
    counts = np.bincount(flat, minlength=grid.width * grid.height)
    means: dict[tuple[int, int], float] = {}
    for idx in np.flatnonzero(counts):
        means[(int(idx) // grid.width, int(idx) % grid.width)] = float(sums[idx] / counts[idx])
    return means


def normalize_scores(
    means: Mapping[tuple[int, int], float], grid: GridSpec, instance_id: int
) -> VisibilityGrid:
    """Divide every mean by the maximum mean over covered cells."""
    if not means:
        raise NoVisibleRegionError(f"instance {instance_id} covers no grid cell")
    peak = max(means.values())
    if peak <= 0.0:
        raise NoVisibleRegionError(f"instance {instance_id} has an all-zero distance pooling")
    scores = {cell: round(v / peak, SCORE_DECIMALS) for cell, v in means.items()}
    return VisibilityGrid(
        grid=grid, instance_id=instance_id, mean_distances=dict(means), scores=scores
    )


def candidates(vis: VisibilityGrid, thr: VisibilityThreshold) -> list[CellId]:
    """Covered cells scoring strictly above the threshold, in row-major order."""
    return [
        CellId(vis.grid.level, r, c)
        for r, c in sorted(vis.scores)
        if vis.scores[(r, c)] > thr.value
    ]
