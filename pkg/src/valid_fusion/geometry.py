"""Axis-aligned 2D box arithmetic in pixel and image-normalized coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box2D:
    """Corner-form box in pixels, origin at the top-left of the image."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"negative box extent: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class NormalizedBox:
    """Center-form box as fractions of the image width and height."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite normalized box: {vals}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative normalized size: {vals}")

    def within_image(self) -> bool:
        """True when the box lies entirely inside the unit image square."""
        return (
            self.cx - self.w / 2 >= 0.0
            and self.cy - self.h / 2 >= 0.0
            and self.cx + self.w / 2 <= 1.0
            and self.cy + self.h / 2 <= 1.0
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"image dims must be integers, got {self.width}x{self.height}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


KITTI_DEFAULT_DIMS = ImageDims(1242, 375)


def area(b: Box2D) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersection(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = intersection(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def normalize(b: Box2D, d: ImageDims) -> NormalizedBox:
    return NormalizedBox(
        cx=(b.x_min + b.x_max) / (2 * d.width),
        cy=(b.y_min + b.y_max) / (2 * d.height),
        w=(b.x_max - b.x_min) / d.width,
        h=(b.y_max - b.y_min) / d.height,
    )


def denormalize(n: NormalizedBox, d: ImageDims) -> Box2D:
    half_w = n.w * d.width / 2
    half_h = n.h * d.height / 2
    cx = n.cx * d.width
    cy = n.cy * d.height
    return Box2D(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
