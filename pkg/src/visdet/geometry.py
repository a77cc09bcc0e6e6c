"""Axis-aligned box algebra and grid-cell geometry shared across the toolkit.

Boxes are stored in corner form (x_min, y_min, x_max, y_max) in continuous
pixel coordinates; annotation-style (x, y, w, h) input is converted on
ingestion. Degenerate (zero-area) boxes are legal values, but overlap
measures reject pairs where both operands are degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class GeometryError(ValueError):
    """A geometric precondition was violated."""


class DegenerateBoxError(GeometryError):
    """Overlap of two zero-area boxes is undefined."""


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box with x_min <= x_max and y_min <= y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise GeometryError(f"inverted box corners: {self}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box2D":
        if w < 0 or h < 0:
            raise GeometryError(f"negative box size: w={w}, h={h}")
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width, self.height)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def is_degenerate(self) -> bool:
        return self.area == 0.0

    def translated(self, dx: float, dy: float) -> "Box2D":
        return Box2D(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clipped(self, x_lo: float, y_lo: float, x_hi: float, y_hi: float) -> "Box2D":
        return Box2D(
            min(max(self.x_min, x_lo), x_hi),
            min(max(self.y_min, y_lo), y_hi),
            min(max(self.x_max, x_lo), x_hi),
            min(max(self.y_max, y_lo), y_hi),
        )

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class GridSpec:
    """One pyramid level: cell (i, j) covers pixels [j*stride, (j+1)*stride) x [i*stride, (i+1)*stride)."""

    stride: int
    width: int
    height: int
    level: int

    def __post_init__(self) -> None:
        if self.stride <= 0:
            raise GeometryError(f"stride must be positive, got {self.stride}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"grid must have at least one cell, got {self.width}x{self.height}")

    @classmethod
    def for_image(cls, image_width: int, image_height: int, stride: int, level: int) -> "GridSpec":
        return cls(
            stride=stride,
            width=-(-image_width // stride),
            height=-(-image_height // stride),
            level=level,
        )

    @property
    def pixel_extent(self) -> tuple[int, int]:
        return (self.width * self.stride, self.height * self.stride)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.stride, (row + 0.5) * self.stride)

    def cell_box(self, row: int, col: int) -> Box2D:
        s = self.stride
        return Box2D(col * s, row * s, (col + 1) * s, (row + 1) * s)

    def contains_cell(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width


@dataclass(frozen=True, order=True)
class CellId:
    """A cell address on one pyramid level; ordering is (level, row, col)."""

    level: int
    row: int
    col: int


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union; undefined when both boxes have zero area."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        raise DegenerateBoxError(f"iou undefined for two degenerate boxes: {a}, {b}")
    return inter / union


def giou(a: Box2D, b: Box2D) -> float:
    """Generalized IoU: iou minus the hull area not covered by the union, over the hull area."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        raise DegenerateBoxError(f"giou undefined for two degenerate boxes: {a}, {b}")
    hull_w = max(a.x_max, b.x_max) - min(a.x_min, b.x_min)
    hull_h = max(a.y_max, b.y_max) - min(a.y_min, b.y_min)
    hull = hull_w * hull_h
    return inter / union - (hull - union) / hull


def decode_box(cell: CellId, grid: GridSpec, offsets: Sequence[float]) -> Box2D:
    """Decode (left, top, right, bottom) distances from a cell center into a box."""
    left, top, right, bottom = offsets
    if min(left, top, right, bottom) < 0:
        raise GeometryError(f"negative decode offsets: {tuple(offsets)}")
    cx, cy = grid.cell_center(cell.row, cell.col)
    return Box2D(cx - left, cy - top, cx + right, cy + bottom)


def encode_offsets(cell: CellId, grid: GridSpec, box: Box2D) -> tuple[float, float, float, float]:
    """Distances from a cell center to the four box edges; negative when the center is outside."""
    cx, cy = grid.cell_center(cell.row, cell.col)
    return (cx - box.x_min, cy - box.y_min, box.x_max - cx, box.y_max - cy)


def crop_window(
    box: Box2D, image_width: int, image_height: int, min_side: int = 2
) -> tuple[int, int, int, int]:
    """Integer pixel window (x0, y0, x1, y1) covering a box, clipped to the image.

    The window is widened to at least `min_side` pixels per axis so the
    visibility transform always has an interior to work with.
    """
    if image_width < min_side or image_height < min_side:
        raise GeometryError(f"image too small to crop: {image_width}x{image_height}")
    x0 = min(max(math.floor(box.x_min), 0), image_width)
    x1 = min(max(math.ceil(box.x_max), 0), image_width)
    y0 = min(max(math.floor(box.y_min), 0), image_height)
    y1 = min(max(math.ceil(box.y_max), 0), image_height)
    if x1 - x0 < min_side:
        x1 = min(image_width, x0 + min_side)
        x0 = max(0, x1 - min_side)
    if y1 - y0 < min_side:
        y1 = min(image_height, y0 + min_side)
        y0 = max(0, y1 - min_side)
    return (x0, y0, x1, y1)
