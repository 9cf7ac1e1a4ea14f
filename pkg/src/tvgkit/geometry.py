"""Axis-aligned boxes in corner convention (x1, y1, x2, y2), continuous coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for k in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, k, float(getattr(self, k)))
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"invalid box {self.as_list()}: need x1<=x2 and y1<=y2")

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError(f"box needs 4 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection(self, other: "BoundingBox") -> "BoundingBox | None":
        """Overlap box, or None when the boxes do not overlap at all."""
        x1, y1 = max(self.x1, other.x1), max(self.y1, other.y1)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x1 > x2 or y1 > y2:
            return None
        return BoundingBox(x1, y1, x2, y2)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU between two [N, 4] / [M, 4] arrays, returned as [N, M]."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(union)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def normalize_coords(b: BoundingBox, image_w: float, image_h: float) -> np.ndarray:
    """Clamp the box to the image and scale corners into [0, 1]."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    x1 = min(max(b.x1, 0.0), image_w) / image_w
    x2 = min(max(b.x2, 0.0), image_w) / image_w
    y1 = min(max(b.y1, 0.0), image_h) / image_h
    y2 = min(max(b.y2, 0.0), image_h) / image_h
    return np.array([x1, y1, x2, y2], dtype=np.float64)
