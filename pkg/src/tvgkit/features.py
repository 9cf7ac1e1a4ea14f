"""Symbolic object features (name embedding | attribute embedding | coords).

Three variants are built here:

* DET from detector output,
* ORA from ground-truth annotations,
* INF, DET minimally repaired for one question so that every relevant
  ground-truth object has a semantically matching row.

Feature stores use a small little-endian binary format, see `write_store`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import iou_matrix, normalize_coords
from .matching import (
    IOU_MATCH,
    MISRECOGNIZED,
    MISSING,
    FIScoreVector,
    SEMANTIC,
    canon,
    content_match,
    match_report,
    relevant_objects,
    semantic_scores,
    spatial_scores,
)
from .scene import EmbeddingTable, ImageRecord, QuestionRecord, SceneObject

DET, ORA, INF = "DET", "ORA", "INF"
VARIANTS = (DET, ORA, INF)

DETECTED, INFUSED_NEW, INFUSED_ADJUSTED = "detected", "infused_new", "infused_adjusted"
PROVENANCE_CODES = {DETECTED: 0, INFUSED_NEW: 1, INFUSED_ADJUSTED: 2}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE_CODES.items()}

GQA_MAX_OBJECTS = 100
HAT_MAX_OBJECTS = 36


@dataclass
class FeatureMatrix:
    image_id: str
    variant: str
    rows: np.ndarray
    provenance: list[str]
    emb_dim: int
    has_coords: bool = True
    question_id: str | None = None
    # symbolic content behind each row; not persisted in the feature store
    objects: tuple[SceneObject, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(len(self.provenance), self.dim)

    @property
    def dim(self) -> int:
        return 2 * self.emb_dim + (4 if self.has_coords else 0)

    def __len__(self):
        return len(self.provenance)

    @property
    def key(self) -> str:
        if self.question_id is None:
            return self.image_id
        return f"{self.image_id}|{self.question_id}"

    def select(self, index) -> "FeatureMatrix":
        """Subset of rows, e.g. for relevant-only / irrelevant-only ablations."""
        index = list(index)
        objs = None if self.objects is None else tuple(self.objects[i] for i in index)
        return FeatureMatrix(
            self.image_id, self.variant, self.rows[index], [self.provenance[i] for i in index],
            self.emb_dim, self.has_coords, self.question_id, objs,
        )


def _name_emb(name: str, emb: EmbeddingTable) -> np.ndarray:
    return emb.phrase(canon(name))


def _attr_emb(attributes, emb: EmbeddingTable) -> np.ndarray:
    if not attributes:
        return emb.unknown_vector
    return np.mean([_name_emb(v, emb) for _, v in attributes], axis=0)


def encode_object(obj: SceneObject, emb: EmbeddingTable, image_w: float, image_h: float,
                  with_coords: bool = True) -> np.ndarray:
    parts = [_name_emb(obj.name, emb), _attr_emb(obj.attributes, emb)]
    if with_coords:
        parts.append(normalize_coords(obj.box, image_w, image_h))
    return np.concatenate(parts)


def _build(image: ImageRecord, objects: Sequence[SceneObject], variant: str, emb: EmbeddingTable,
           max_objects: int, with_coords: bool) -> FeatureMatrix:
    objects = tuple(objects[:max_objects])
    dim = 2 * emb.dimension + (4 if with_coords else 0)
    rows = np.zeros((len(objects), dim))
    for i, obj in enumerate(objects):
        rows[i] = encode_object(obj, emb, image.width, image.height, with_coords)
    return FeatureMatrix(image.image_id, variant, rows, [DETECTED] * len(objects), emb.dimension,
                         with_coords, None, objects)


def build_det(image: ImageRecord, emb: EmbeddingTable, max_objects: int = GQA_MAX_OBJECTS,
              with_coords: bool = True) -> FeatureMatrix:
    """One row per detection in file order, truncated to `max_objects`."""
    return _build(image, image.det_objects, DET, emb, max_objects, with_coords)


def build_ora(image: ImageRecord, emb: EmbeddingTable, max_objects: int = GQA_MAX_OBJECTS,
              with_coords: bool = True) -> FeatureMatrix:
    return _build(image, image.gt_objects, ORA, emb, max_objects, with_coords)


@dataclass
class InfusionInfo:
    n_missing: int = 0
    n_misrecognized: int = 0
    # detected rows removed to stay within max_objects
    n_dropped: int = 0
    capped: bool = False


def _repair_attributes(attr_vec: np.ndarray, det: SceneObject, gt: SceneObject, emb: EmbeddingTable):
    """Swap wrong attribute contributions for the annotated ones.

    With categories, each wrong value of a category is replaced inside the
    existing mean with the same weight 1/K. A category the detection lacks is
    added to the mean. Uncategorized attributes are recomputed from gt.
    """
    categorized = gt.attributes and all(c for c, _ in gt.attributes) and all(c for c, _ in det.attributes)
    if not categorized:
        if not gt.attributes:
            return attr_vec, det.attributes
        return _attr_emb(gt.attributes, emb), gt.attributes
    attrs = list(det.attributes)
    k = len(attrs)
    vec = attr_vec.copy()
    for cat, val in gt.attributes:
        pos = next((i for i, (c, _) in enumerate(attrs) if canon(c) == canon(cat)), None)
        if pos is not None:
            wrong = attrs[pos][1]
            if canon(wrong) == canon(val):
                continue
            vec = vec - _name_emb(wrong, emb) / k + _name_emb(val, emb) / k
            attrs[pos] = (cat, val)
        elif k == 0:
            vec = _name_emb(val, emb).copy()
            attrs.append((cat, val))
            k = 1
        else:
            vec = (vec * k + _name_emb(val, emb)) / (k + 1)
            attrs.append((cat, val))
            k += 1
    return vec, tuple(attrs)


def _cap_drops(objects, prov, gts, overflow: int) -> set[int]:
    """Rows to remove so an infused set fits its object budget.

    Detected rows without a semantic match go first, lowest spatial FI first
    and the latest detection among equals. If that is not enough, any row
    whose removal leaves every relevant object matched is dropped, detected
    rows before infused ones.
    """
    sem = semantic_scores(objects, gts)
    spa = spatial_scores(objects, gts)
    order = sorted(range(len(objects)), key=lambda i: (sem[i], prov[i] != DETECTED, spa[i], -i))
    ious = iou_matrix([o.box.as_list() for o in objects], [g.box.as_list() for g in gts])
    hits = (ious > IOU_MATCH) & np.array([[content_match(o, g) for g in gts] for o in objects]).reshape(ious.shape)
    alive = np.ones(len(objects), dtype=bool)
    drop = set()
    for i in order:
        if len(drop) == overflow:
            break
        alive[i] = False
        if hits[alive].any(axis=0).all() or not hits[i].any():
            drop.add(i)
        else:
            alive[i] = True
    return drop


def infuse(fm: FeatureMatrix, image: ImageRecord, q: QuestionRecord, emb: EmbeddingTable,
           max_objects: int = GQA_MAX_OBJECTS) -> tuple[FeatureMatrix, FIScoreVector, InfusionInfo]:
    """Repair `fm` so every relevant gt object of `q` has a semantic match.

    Rows needing no repair are copied unchanged. Misrecognized relevant
    objects get their matched row's name (and wrong attributes) replaced;
    missing ones are appended as new rows built from the annotation.
    """
    if fm.objects is None:
        raise ValueError("infusion needs the symbolic objects behind the feature rows")
    gts = relevant_objects(image, q)
    report = match_report(image, q, dets=fm.objects)
    E = fm.emb_dim
    rows = [r for r in fm.rows]
    objects = list(fm.objects)
    prov = list(fm.provenance)
    info = InfusionInfo()
    # rows already matching some relevant object must keep their content
    protected = set(np.flatnonzero(semantic_scores(fm.objects, gts) == 1.0).tolist())
    adjusted = set()
    appended = []

    for oid, gt in zip(q.relevant_gt_ids, gts):
        m = report.per_gt[oid]
        if m.status == MISRECOGNIZED and m.best_det_index not in adjusted | protected:
            d = m.best_det_index
            det = objects[d]
            row = rows[d].copy()
            row[:E] = _name_emb(gt.name, emb)
            row[E:2 * E], attrs = _repair_attributes(row[E:2 * E], det, gt, emb)
            rows[d] = row
            objects[d] = SceneObject(det.object_id, det.box, gt.name, attrs)
            prov[d] = INFUSED_ADJUSTED
            adjusted.add(d)
            info.n_misrecognized += 1
        elif m.status != "matched":
            # missing, or its detection is repaired for / matched by another relevant object
            appended.append(gt)
            info.n_missing += m.status == MISSING

    for gt in appended:
        rows.append(encode_object(gt, emb, image.width, image.height, fm.has_coords))
        objects.append(gt)
        prov.append(INFUSED_NEW)

    overflow = len(rows) - max_objects
    if overflow > 0:
        info.capped = True
        drop = _cap_drops(objects, prov, gts, overflow)
        info.n_dropped = len(drop)
        keep = [i for i in range(len(rows)) if i not in drop][:max_objects]
        rows = [rows[i] for i in keep]
        objects = [objects[i] for i in keep]
        prov = [prov[i] for i in keep]

    out = FeatureMatrix(
        image.image_id, INF, np.array(rows).reshape(len(rows), fm.dim), prov, E, fm.has_coords,
        q.question_id, tuple(objects),
    )
    fi = FIScoreVector(q.question_id, semantic_scores(objects, gts), SEMANTIC)
    return out, fi, info


def build_inf(image: ImageRecord, q: QuestionRecord, emb: EmbeddingTable,
              max_objects: int = GQA_MAX_OBJECTS, with_coords: bool = True):
    """INF features and their semantic FI scores for one training question."""
    fm, fi, _ = infuse(build_det(image, emb, max_objects, with_coords), image, q, emb, max_objects)
    return fm, fi


# -- feature store -----------------------------------------------------------

MAGIC = b"TVGF"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIBQ")


class StoreFormatError(ValueError):
    pass


def write_store(path, matrices: Iterable[FeatureMatrix], emb_dim: int, has_coords: bool = True) -> int:
    """Write matrices to a binary store; returns the record count.

    Layout: header (magic, version u32, emb_dim u32, has_coords u8, record
    count u64), then per record: key length u16, utf-8 key, row count u16,
    one provenance byte per row, rows as little-endian float32.
    """
    matrices = list(matrices)
    dim = 2 * emb_dim + (4 if has_coords else 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_HEADER.pack(MAGIC, STORE_VERSION, emb_dim, int(has_coords), len(matrices)))
        for fm in matrices:
            if fm.emb_dim != emb_dim or fm.has_coords != has_coords:
                raise StoreFormatError(f"matrix {fm.key!r} does not match the store layout")
            key = fm.key.encode("utf-8")
            f.write(struct.pack("<H", len(key)))
            f.write(key)
            f.write(struct.pack("<H", len(fm)))
            f.write(bytes(PROVENANCE_CODES[p] for p in fm.provenance))
            f.write(np.ascontiguousarray(fm.rows, dtype="<f4").reshape(-1, dim).tobytes())
    return len(matrices)


def read_store(path, variant: str = DET) -> dict[str, FeatureMatrix]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StoreFormatError("file too short for a feature store header")
    magic, version, emb_dim, has_coords, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}")
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    dim = 2 * emb_dim + (4 if has_coords else 0)
    pos = _HEADER.size
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos:pos + klen].decode("utf-8")
            pos += klen
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            prov = [PROVENANCE_NAMES[b] for b in data[pos:pos + n]]
            pos += n
            nbytes = 4 * n * dim
            if pos + nbytes > len(data):
                raise StoreFormatError(f"record {key!r} is truncated")
            rows = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
            pos += nbytes
            image_id, _, question_id = key.partition("|")
            out[key] = FeatureMatrix(image_id, variant, rows.astype(np.float64), prov, emb_dim,
                                     bool(has_coords), question_id or None)
    except struct.error as e:
        raise StoreFormatError(f"truncated store: {e}") from None
    return out


def dump_store(path) -> dict:
    """JSON-friendly view of a store, for `features dump`."""
    data = Path(path).read_bytes()
    _, version, emb_dim, has_coords, count = _HEADER.unpack_from(data, 0)
    records = read_store(path)
    return {
        "version": version,
        "emb_dim": emb_dim,
        "has_coords": bool(has_coords),
        "record_count": count,
        "records": [
            {"key": k, "n": len(fm), "provenance": fm.provenance, "rows": fm.rows.tolist()}
            for k, fm in records.items()
        ],
    }


def dump_store_json(path) -> str:
    return json.dumps(dump_store(path), indent=1)
