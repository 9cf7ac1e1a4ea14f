"""Per-object relevance from pixel-level attention heat maps.

An object's importance is E_in / (E_in + E_out), the mean heat inside its
box against the mean heat outside it. Objects scoring above a threshold
(0.55 by default) count as question-relevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox
from .scene import HeatMap, ImageRecord

DEFAULT_THRESHOLD = 0.55
# relative aspect-ratio difference tolerated before resampling is refused
ASPECT_TOLERANCE = 0.1


class HeatMapError(ValueError):
    pass


def _inside_mask(shape, box: BoundingBox) -> np.ndarray:
    # cell (i, j) has its center at (j + 0.5, i + 0.5); half-open containment
    h, w = shape
    cx = np.arange(w) + 0.5
    cy = np.arange(h) + 0.5
    in_x = (cx >= box.x1) & (cx < box.x2)
    in_y = (cy >= box.y1) & (cy < box.y2)
    return in_y[:, None] & in_x[None, :]


def importance_score(hm: HeatMap, box: BoundingBox) -> float:
    """Box importance on the heat map's own grid (one unit per cell)."""
    inside = _inside_mask(hm.grid.shape, box)
    n_in = int(inside.sum())
    if n_in == 0:
        raise HeatMapError(f"box {box.as_list()} covers no grid cell")
    if n_in == inside.size:
        raise HeatMapError(f"box {box.as_list()} covers the whole grid; no outside region")
    # means taken relative to one cell so a uniform map gives equal energies exactly
    ref = float(hm.grid.flat[0])
    e_in = max(ref + float((hm.grid[inside] - ref).mean()), 0.0)
    e_out = max(ref + float((hm.grid[~inside] - ref).mean()), 0.0)
    if e_in + e_out == 0:
        return 0.0
    return e_in / (e_in + e_out)


def resample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with cell-center alignment."""
    h, w = grid.shape
    if (h, w) == (height, width):
        return grid
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bottom = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def align_to_image(hm: HeatMap, image: ImageRecord) -> HeatMap:
    h, w = hm.grid.shape
    H, W = int(round(image.height)), int(round(image.width))
    if (h, w) == (H, W):
        return hm
    ratio_map, ratio_img = w / h, W / H
    if abs(ratio_map - ratio_img) / ratio_img > ASPECT_TOLERANCE:
        raise HeatMapError(
            f"heat map {h}x{w} does not fit image {H}x{W} of {image.image_id!r} (aspect mismatch)"
        )
    return HeatMap(hm.image_id, hm.question_id, resample(hm.grid, H, W))


@dataclass
class ObjectImportance:
    question_id: str
    # None marks an object whose box covers no cell of the image grid
    scores: dict[str, float | None] = field(default_factory=dict)
    threshold: float = DEFAULT_THRESHOLD

    @property
    def relevant(self) -> dict[str, bool]:
        return {oid: s is not None and s > self.threshold for oid, s in self.scores.items()}

    @property
    def relevant_ids(self) -> list[str]:
        return [oid for oid, r in self.relevant.items() if r]

    def to_dict(self) -> dict:
        rel = self.relevant
        return {
            "question_id": self.question_id,
            "threshold": self.threshold,
            "objects": [
                {"object_id": oid, "score": s, "relevant": rel[oid]} for oid, s in self.scores.items()
            ],
        }


def relevant_objects(hm: HeatMap, image: ImageRecord, threshold: float = DEFAULT_THRESHOLD) -> ObjectImportance:
    if hm.image_id != image.image_id:
        raise HeatMapError(f"heat map of {hm.image_id!r} applied to image {image.image_id!r}")
    aligned = align_to_image(hm, image)
    scores = {}
    for obj in image.gt_objects:
        try:
            scores[obj.object_id] = importance_score(aligned, obj.box)
        except HeatMapError:
            scores[obj.object_id] = None
    return ObjectImportance(hm.question_id, scores, threshold)
