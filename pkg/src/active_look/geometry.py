"""Axis-aligned box arithmetic: IoU, area ratios, zoom gain, crop windows.

Boxes are real-valued pixel rectangles in xyxy order with the origin at the
top-left corner and exclusive max edges, matching common detector output.
All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBox


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle with strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {v!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {self.as_tuple()}")
        # side lengths can underflow to a zero product even when x1 < x2
        if (self.x2 - self.x1) * (self.y2 - self.y1) <= 0.0:
            raise ValueError(f"box area underflows to zero: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True)
class ImageDims:
    """Pixel dimensions of an image."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be positive: {self.width}x{self.height}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when interiors are disjoint.

    Boxes that merely share an edge have zero-area intersection and IoU 0.
    """
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    if inter <= 0.0:  # product underflow on sliver overlaps
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def clamp(b: BBox, dims: ImageDims) -> BBox:
    """Clip a box to the image bounds.

    Raises DegenerateBox when the clipped box has zero area, i.e. the box
    lies entirely outside the image.
    """
    x1 = min(max(b.x1, 0.0), float(dims.width))
    y1 = min(max(b.y1, 0.0), float(dims.height))
    x2 = min(max(b.x2, 0.0), float(dims.width))
    y2 = min(max(b.y2, 0.0), float(dims.height))
    if not (x1 < x2 and y1 < y2):
        raise DegenerateBox(f"box {b.as_tuple()} has no area inside {dims.width}x{dims.height}")
    return BBox(x1, y1, x2, y2)


def area_ratio(b: BBox, dims: ImageDims) -> float:
    """Fraction of the image covered by the box, clamped to the image first."""
    clipped = clamp(b, dims)
    return clipped.area / (dims.width * dims.height)


def resolution_gain(b: BBox, dims: ImageDims) -> float:
    """Effective magnification from cropping the box and rescaling to full input size.

    Equals area_ratio(b, dims) ** -0.5; a quarter-area crop doubles effective
    resolution along each axis.
    """
    return area_ratio(b, dims) ** -0.5


def expand_and_clamp(b: BBox, scale: float, dims: ImageDims) -> BBox:
    """Scale a box about its center, then clip it to the image bounds.

    Used to add context margin around a region before cropping. `scale` must
    be >= 1, so the result always contains the in-image part of the original.
    """
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    cx, cy = b.center
    hw = 0.5 * b.width * scale
    hh = 0.5 * b.height * scale
    return clamp(BBox(cx - hw, cy - hh, cx + hw, cy + hh), dims)
