"""Cue-object identification: spatial (IoU) and semantic (IoU + content) matching.

Spatial FI of a detection is its best IoU with any relevant ground-truth
object. Semantic FI is binary: 1.0 when some relevant ground-truth object
overlaps it with IoU > 0.5 *and* its name and attributes agree, else 0.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import iou_matrix
from .scene import ImageRecord, QuestionRecord, SceneObject

SPATIAL = "spatial"
SEMANTIC = "semantic"
METHODS = (SPATIAL, SEMANTIC)

MATCHED = "matched"
MISRECOGNIZED = "misrecognized"
MISSING = "missing"

IOU_MATCH = 0.5


class PreconditionError(ValueError):
    pass


def canon(text: str) -> str:
    return text.strip().lower()


def content_match(det: SceneObject, gt: SceneObject) -> bool:
    """True when det carries gt's name and every one of gt's attributes.

    Categorized gt attributes must be found in the same category of det;
    uncategorized ones ("" category) only need to appear among det's values.
    Extra attributes on det are allowed.
    """
    if canon(det.name) != canon(gt.name):
        return False
    det_by_cat = {canon(c): canon(v) for c, v in det.attributes if c}
    det_values = {canon(v) for _, v in det.attributes}
    for cat, val in gt.attributes:
        if cat:
            if det_by_cat.get(canon(cat)) != canon(val):
                return False
        elif canon(val) not in det_values:
            return False
    return True


@dataclass
class FIScoreVector:
    question_id: str
    scores: np.ndarray
    method: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.method not in METHODS:
            raise ValueError(f"unknown matching method {self.method!r}")

    def __len__(self):
        return len(self.scores)

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "method": self.method, "scores": self.scores.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FIScoreVector":
        return cls(str(d["question_id"]), d["scores"], str(d["method"]))


@dataclass
class GTMatch:
    status: str
    best_det_index: int | None = None
    best_iou: float = 0.0


@dataclass
class MatchReport:
    question_id: str
    per_gt: dict[str, GTMatch] = field(default_factory=dict)
    # set when every relevant GT object lacks attributes, i.e. only names are compared
    name_only: bool = False

    @property
    def tvg(self) -> bool:
        return all(m.status == MATCHED for m in self.per_gt.values())

    def ids_with(self, status: str) -> list[str]:
        return [oid for oid, m in self.per_gt.items() if m.status == status]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "per_gt": {
                oid: {"status": m.status, "best_det_index": m.best_det_index, "best_iou": m.best_iou}
                for oid, m in self.per_gt.items()
            },
            "tvg": self.tvg,
            "name_only": self.name_only,
        }


def _boxes(objs: Sequence[SceneObject]) -> np.ndarray:
    return np.array([o.box.as_list() for o in objs], dtype=np.float64).reshape(-1, 4)


def relevant_objects(image: ImageRecord, q: QuestionRecord) -> list[SceneObject]:
    if not q.relevant_gt_ids:
        raise PreconditionError(f"question {q.question_id!r} has no relevant ground-truth objects")
    return [image.gt(oid) for oid in q.relevant_gt_ids]


def spatial_scores(dets: Sequence[SceneObject], gts: Sequence[SceneObject]) -> np.ndarray:
    if not dets:
        return np.zeros(0)
    return iou_matrix(_boxes(dets), _boxes(gts)).max(axis=1)


def semantic_scores(dets: Sequence[SceneObject], gts: Sequence[SceneObject]) -> np.ndarray:
    scores = np.zeros(len(dets))
    if not dets:
        return scores
    ious = iou_matrix(_boxes(dets), _boxes(gts))
    for d, det in enumerate(dets):
        for r, gt in enumerate(gts):
            if ious[d, r] > IOU_MATCH and content_match(det, gt):
                scores[d] = 1.0
                break
    return scores


def classify(dets: Sequence[SceneObject], gts: Sequence[SceneObject]) -> list[GTMatch]:
    """Matched / misrecognized / missing status of each gt against a detection list."""
    out = []
    ious = iou_matrix(_boxes(dets), _boxes(gts)) if dets else np.zeros((0, len(gts)))
    for r, gt in enumerate(gts):
        col = ious[:, r]
        best_any = float(col.max()) if len(col) else 0.0
        overlapping = [d for d in range(len(dets)) if col[d] > IOU_MATCH]
        if not overlapping:
            out.append(GTMatch(MISSING, None, best_any))
            continue
        hits = [d for d in overlapping if content_match(dets[d], gt)]
        pool, status = (hits, MATCHED) if hits else (overlapping, MISRECOGNIZED)
        # argmax with ties resolved to the lowest index
        best = max(pool, key=lambda d: (col[d], -d))
        out.append(GTMatch(status, best, float(col[best])))
    return out


def spatial_fi(image: ImageRecord, q: QuestionRecord) -> FIScoreVector:
    gts = relevant_objects(image, q)
    return FIScoreVector(q.question_id, spatial_scores(image.det_objects, gts), SPATIAL)


def semantic_fi(image: ImageRecord, q: QuestionRecord) -> FIScoreVector:
    gts = relevant_objects(image, q)
    return FIScoreVector(q.question_id, semantic_scores(image.det_objects, gts), SEMANTIC)


def compute_fi(image: ImageRecord, q: QuestionRecord, method: str) -> FIScoreVector:
    if method == SPATIAL:
        return spatial_fi(image, q)
    if method == SEMANTIC:
        return semantic_fi(image, q)
    raise ValueError(f"unknown matching method {method!r}")


def match_report(image: ImageRecord, q: QuestionRecord, dets: Sequence[SceneObject] | None = None) -> MatchReport:
    """Classify each relevant gt object of `q`.

    `dets` overrides the image's detections, e.g. with an infused object set.
    """
    gts = relevant_objects(image, q)
    dets = image.det_objects if dets is None else dets
    per_gt = dict(zip(q.relevant_gt_ids, classify(dets, gts)))
    return MatchReport(q.question_id, per_gt, name_only=all(not g.attributes for g in gts))


def cue_count(fi: FIScoreVector, threshold: float = IOU_MATCH) -> int:
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    if fi.method == SEMANTIC:
        return int(np.count_nonzero(fi.scores == 1.0))
    return int(np.count_nonzero(fi.scores > threshold))
