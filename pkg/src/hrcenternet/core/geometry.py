"""
📐 Box geometry - the primitives every other module leans on.

Coordinates: origin top-left, x to the right, y downward. Pixel (i, j) covers
[j, j+1) x [i, i+1), so a continuous center may sit between pixel centers.
Boxes live in center+size form; corner form is only a view.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from .errors import EmptyBoxError, GeometryError

Corners = Tuple[float, float, float, float]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates"""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise GeometryError(f"box has non-finite values: {values}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box size must be positive, got w={self.w} h={self.h}")

    @property
    def x_min(self) -> float:
        return self.cx - self.w / 2

    @property
    def y_min(self) -> float:
        return self.cy - self.h / 2

    @property
    def x_max(self) -> float:
        return self.cx + self.w / 2

    @property
    def y_max(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_corners(self) -> Corners:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_corners(cls, x_min: float, y_min: float, x_max: float, y_max: float) -> "BBox":
        if not (x_min < x_max and y_min < y_max):
            raise GeometryError(
                f"inverted or empty corners ({x_min}, {y_min}, {x_max}, {y_max})"
            )
        return cls(
            cx=(x_min + x_max) / 2,
            cy=(y_min + y_max) / 2,
            w=x_max - x_min,
            h=y_max - y_min,
        )

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.cx * s, self.cy * s, self.w * s, self.h * s)


def to_corners(b: BBox) -> Corners:
    return b.to_corners()


def from_corners(x_min: float, y_min: float, x_max: float, y_max: float) -> BBox:
    return BBox.from_corners(x_min, y_min, x_max, y_max)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Set-measure IoU on continuous boxes"""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def clamp_to_image(b: BBox, width: int, height: int) -> BBox:
    """Clip a box to [0, width] x [0, height].

    Raises EmptyBoxError when nothing of the box is left inside the image.
    """
    if width <= 0 or height <= 0:
        raise GeometryError(f"image dims must be positive, got {width}x{height}")
    x_min = max(0.0, b.x_min)
    y_min = max(0.0, b.y_min)
    x_max = min(float(width), b.x_max)
    y_max = min(float(height), b.y_max)
    if x_min >= x_max or y_min >= y_max:
        raise EmptyBoxError(f"box {b.to_corners()} lies outside a {width}x{height} image")
    if (x_min, y_min, x_max, y_max) == b.to_corners():
        return b
    return BBox.from_corners(x_min, y_min, x_max, y_max)


def corners_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array of corners"""
    rows = [b.to_corners() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner arrays"""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)
