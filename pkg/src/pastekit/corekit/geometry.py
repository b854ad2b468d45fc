"""Axis-aligned bounding boxes and IoU.

Boxes live in continuous image coordinates: a box (x, y, w, h) spans the
half-open region [x, x+w) x [y, y+h) of an image whose pixel (col, row)
occupies [col, col+1) x [row, row+1). Coordinates are stored as floats;
rounding happens only at serialization time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in absolute pixel coordinates, top-left anchored."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive extent, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def scaled(self, factor: float) -> "BoundingBox":
        """Box under uniform scaling about the image origin."""
        return BoundingBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def clipped(self, width: float, height: float) -> Optional["BoundingBox"]:
        """Intersection with the image frame, or None if nothing remains."""
        x1 = max(self.x, 0.0)
        y1 = max(self.y, 0.0)
        x2 = min(self.x2, float(width))
        y2 = min(self.y2, float(height))
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def full_image_box(width: float, height: float) -> BoundingBox:
    return BoundingBox(0.0, 0.0, float(width), float(height))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union
