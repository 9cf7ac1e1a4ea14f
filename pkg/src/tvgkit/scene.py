"""Scene graphs, detections, questions, heat maps and word embeddings.

All corpus files are JSON Lines; embeddings use the GloVe text format.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import BoundingBox

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test_id", "test_ood")


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = str(path)
        self.line_no = line_no


class IntegrityError(CorpusError):
    """A record references an image or object id that does not exist."""


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    box: BoundingBox
    name: str
    # (category, value) pairs; category "" marks an uncategorized attribute
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ValueError(f"object {self.object_id!r} has an empty name")
        attrs = tuple((str(c), str(v)) for c, v in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        seen = set()
        for cat, _ in attrs:
            if not cat:
                continue
            if cat in seen:
                raise ValueError(f"object {self.object_id!r} has two values for category {cat!r}")
            seen.add(cat)

    def attribute(self, category: str) -> str | None:
        for cat, val in self.attributes:
            if cat == category:
                return val
        return None

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "box": self.box.as_list(),
            "name": self.name,
            "attributes": [[c, v] for c, v in self.attributes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        return cls(
            object_id=str(d["object_id"]),
            box=BoundingBox.from_list(d["box"]),
            name=str(d["name"]),
            attributes=tuple((c, v) for c, v in d.get("attributes", [])),
        )


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: float
    height: float
    gt_objects: tuple[SceneObject, ...] = ()
    det_objects: tuple[SceneObject, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id!r}: dimensions must be positive")
        object.__setattr__(self, "gt_objects", tuple(self.gt_objects))
        object.__setattr__(self, "det_objects", tuple(self.det_objects))
        ids = [o.object_id for o in self.gt_objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"image {self.image_id!r}: duplicate gt object ids")

    def gt(self, object_id: str) -> SceneObject:
        for o in self.gt_objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "gt_objects": [o.to_dict() for o in self.gt_objects],
            "det_objects": [o.to_dict() for o in self.det_objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(
            image_id=str(d["image_id"]),
            width=float(d["width"]),
            height=float(d["height"]),
            gt_objects=tuple(SceneObject.from_dict(o) for o in d.get("gt_objects", [])),
            det_objects=tuple(SceneObject.from_dict(o) for o in d.get("det_objects", [])),
        )


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    image_id: str
    tokens: tuple[str, ...]
    answer: str
    answer_votes: tuple[tuple[str, int], ...] | None = None
    relevant_gt_ids: tuple[str, ...] = ()
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"question {self.question_id!r}: unknown split {self.split!r}")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "relevant_gt_ids", tuple(self.relevant_gt_ids))
        if self.answer_votes is not None:
            object.__setattr__(
                self, "answer_votes", tuple((str(a), int(n)) for a, n in self.answer_votes)
            )

    @property
    def annotated(self) -> bool:
        return len(self.relevant_gt_ids) > 0

    def with_relevant(self, ids: Iterable[str]) -> "QuestionRecord":
        return QuestionRecord(
            self.question_id, self.image_id, self.tokens, self.answer,
            self.answer_votes, tuple(ids), self.split,
        )

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "image_id": self.image_id,
            "tokens": list(self.tokens),
            "answer": self.answer,
            "answer_votes": None if self.answer_votes is None else [[a, n] for a, n in self.answer_votes],
            "relevant_gt_ids": list(self.relevant_gt_ids),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionRecord":
        votes = d.get("answer_votes")
        return cls(
            question_id=str(d["question_id"]),
            image_id=str(d["image_id"]),
            tokens=tuple(str(t) for t in d.get("tokens", [])),
            answer=str(d["answer"]),
            answer_votes=None if votes is None else tuple((a, n) for a, n in votes),
            relevant_gt_ids=tuple(str(i) for i in d.get("relevant_gt_ids", [])),
            split=str(d.get("split", "train")),
        )


@dataclass(frozen=True)
class HeatMap:
    image_id: str
    question_id: str
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ValueError("heat map grid must be 2-D")
        if (grid < 0).any():
            raise ValueError(f"heat map for {self.question_id!r} has negative cells")
        object.__setattr__(self, "grid", grid)

    @property
    def usable(self) -> bool:
        return bool((self.grid > 0).any())

    def to_dict(self) -> dict:
        h, w = self.grid.shape
        return {
            "question_id": self.question_id,
            "image_id": self.image_id,
            "h": h,
            "w": w,
            "grid": self.grid.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeatMap":
        h, w = int(d["h"]), int(d["w"])
        grid = np.asarray(d["grid"], dtype=np.float64)
        if grid.size != h * w:
            raise ValueError(f"grid has {grid.size} cells, expected {h}x{w}")
        return cls(str(d["image_id"]), str(d["question_id"]), grid.reshape(h, w))


@dataclass
class Corpus:
    images: list[ImageRecord]
    questions: list[QuestionRecord]
    _index: dict = field(default=None, repr=False, compare=False)

    def __iter__(self):
        # allows `images, questions = load_corpus(...)`
        yield self.images
        yield self.questions

    def image(self, image_id: str) -> ImageRecord:
        if self._index is None:
            self._index = {im.image_id: im for im in self.images}
        return self._index[image_id]

    def split(self, name: str) -> list[QuestionRecord]:
        return [q for q in self.questions if q.split == name]


class EmbeddingTable:
    """Word vectors with an UNKNOWN fallback equal to the mean of all entries."""

    def __init__(self, entries: dict[str, np.ndarray], dimension: int = 300):
        self.dimension = int(dimension)
        self.entries = {}
        for word, vec in entries.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise ValueError(f"vector for {word!r} has shape {vec.shape}, expected ({self.dimension},)")
            self.entries[word] = vec
        if self.entries:
            self.unknown_vector = np.mean(np.stack(list(self.entries.values())), axis=0)
        else:
            self.unknown_vector = np.zeros(self.dimension)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    def lookup(self, word: str) -> np.ndarray:
        return self.entries.get(word, self.unknown_vector)

    def phrase(self, text: str) -> np.ndarray:
        """Mean of the word vectors of a (possibly multiword) phrase."""
        words = text.split()
        if not words:
            return self.unknown_vector
        if len(words) == 1:
            return self.lookup(words[0])
        return np.mean([self.lookup(w) for w in words], axis=0)


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, line_no, f"invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            yield line_no, rec


def write_jsonl(records: Iterable[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _parse_records(path, factory):
    out = []
    for line_no, rec in iter_jsonl(path):
        try:
            out.append(factory(rec))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, line_no, f"{type(e).__name__}: {e}") from None
    return out


def load_scenes(path) -> list[ImageRecord]:
    return _parse_records(path, ImageRecord.from_dict)


def load_questions(path) -> list[QuestionRecord]:
    return _parse_records(path, QuestionRecord.from_dict)


def check_integrity(images: list[ImageRecord], questions: list[QuestionRecord]) -> None:
    by_id = {}
    for im in images:
        if im.image_id in by_id:
            raise IntegrityError(f"duplicate image_id {im.image_id!r}")
        by_id[im.image_id] = im
    seen = set()
    for q in questions:
        if q.question_id in seen:
            raise IntegrityError(f"duplicate question_id {q.question_id!r}")
        seen.add(q.question_id)
        im = by_id.get(q.image_id)
        if im is None:
            raise IntegrityError(f"question {q.question_id!r} references unknown image_id {q.image_id!r}")
        gt_ids = {o.object_id for o in im.gt_objects}
        for oid in q.relevant_gt_ids:
            if oid not in gt_ids:
                raise IntegrityError(
                    f"question {q.question_id!r} references unknown object_id {oid!r} in image {q.image_id!r}"
                )


def load_corpus(scene_path, question_path) -> Corpus:
    images = load_scenes(scene_path)
    questions = load_questions(question_path)
    check_integrity(images, questions)
    n_unannotated = sum(1 for q in questions if not q.annotated)
    if n_unannotated:
        log.info("%d questions carry no relevance annotation", n_unannotated)
    return Corpus(images, questions)


def save_corpus(corpus: Corpus, scene_path, question_path) -> None:
    write_jsonl((im.to_dict() for im in corpus.images), scene_path)
    write_jsonl((q.to_dict() for q in corpus.questions), question_path)


def load_heatmaps(path) -> list[HeatMap]:
    return _parse_records(path, HeatMap.from_dict)


def load_embeddings(path, dimension: int | None = 300) -> EmbeddingTable:
    """Read a GloVe-style text file; `dimension=None` takes it from the first line."""
    path = Path(path)
    entries = {}
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dimension is None:
                dimension = len(values)
            if len(values) != dimension:
                raise ParseError(
                    path, line_no, f"word {word!r} has {len(values)} values, expected {dimension}"
                )
            try:
                entries[word] = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError(path, line_no, f"word {word!r} has a non-numeric value") from None
    return EmbeddingTable(entries, dimension or 300)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for word, vec in table.entries.items():
            f.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")
