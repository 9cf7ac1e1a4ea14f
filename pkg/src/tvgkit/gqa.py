"""Conversion of GQA scene graphs and questions into the corpus JSONL format.

GQA scene graphs list attributes without categories. Pass a mapping
{attribute value: category} to get categorized attributes; unmapped values
stay uncategorized. Detections come from an external scene-graph detector
and are expected as JSONL records {"image_id", "det_objects": [...]} in the
corpus object format.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .geometry import BoundingBox
from .scene import SPLITS, Corpus, ImageRecord, QuestionRecord, SceneObject, iter_jsonl

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def convert_object(oid: str, o: dict, categories: dict[str, str]) -> SceneObject:
    box = BoundingBox(float(o["x"]), float(o["y"]), float(o["x"]) + float(o["w"]), float(o["y"]) + float(o["h"]))
    attrs, used = [], set()
    for a in o.get("attributes", []):
        cat = categories.get(a, "")
        if cat and cat in used:
            # one value per category; keep the first
            continue
        used.add(cat)
        attrs.append((cat, a))
    return SceneObject(str(oid), box, o["name"], tuple(attrs))


def relevant_ids(annotations: dict) -> list[str]:
    ids = []
    for part in ("question", "answer", "fullAnswer"):
        for value in (annotations or {}).get(part, {}).values():
            for oid in str(value).split(","):
                if oid and oid not in ids:
                    ids.append(oid)
    return ids


def convert(scene_graphs: dict, questions: dict, split: str, detections: dict | None = None,
            categories: dict[str, str] | None = None) -> Corpus:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    categories = categories or {}
    detections = detections or {}
    images = []
    for image_id, sg in scene_graphs.items():
        gt = tuple(convert_object(oid, o, categories) for oid, o in sg.get("objects", {}).items())
        images.append(ImageRecord(str(image_id), float(sg["width"]), float(sg["height"]), gt,
                                  tuple(detections.get(str(image_id), ()))))
    known = {im.image_id: {o.object_id for o in im.gt_objects} for im in images}
    qs = []
    for qid, q in questions.items():
        image_id = str(q["imageId"])
        if image_id not in known:
            continue
        rel = [oid for oid in relevant_ids(q.get("annotations")) if oid in known[image_id]]
        qs.append(QuestionRecord(str(qid), image_id, tuple(tokenize(q["question"])), q["answer"], None,
                                 tuple(rel), split))
    return Corpus(images, qs)


def load_detections(path) -> dict[str, tuple[SceneObject, ...]]:
    out = {}
    for _, rec in iter_jsonl(path):
        out[str(rec["image_id"])] = tuple(SceneObject.from_dict(o) for o in rec.get("det_objects", []))
    return out


def convert_files(scene_path, question_path, split: str, detection_path=None, category_path=None) -> Corpus:
    sg = json.loads(Path(scene_path).read_text())
    qs = json.loads(Path(question_path).read_text())
    dets = load_detections(detection_path) if detection_path else None
    cats = json.loads(Path(category_path).read_text()) if category_path else None
    return convert(sg, qs, split, dets, cats)
