"""Deterministic synthetic corpora with controlled detector noise.

Each image holds objects laid out on a grid, one object per cell, so a
detection derived from one ground-truth object never overlaps another with
IoU > 0.5. Detections are produced from the ground truth by dropping objects
(`p_miss`), corrupting a name or attribute (`p_misrecognize`) and adding
spurious overlapping detections with a wrong name (`p_duplicate`). Every
decision is written to a corruption log that the matching code must
reproduce.

Questions follow the template "what is the <category> of the <name>" and the
answer is the planted attribute value. Answer priors per category are skewed
toward one majority value in train/dev/test_id and toward a different one in
test_ood.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, iou
from .matching import MATCHED, MISRECOGNIZED, MISSING
from .scene import (
    Corpus,
    EmbeddingTable,
    HeatMap,
    ImageRecord,
    QuestionRecord,
    SceneObject,
    save_corpus,
    save_embeddings,
    write_jsonl,
)

DEFAULT_NAMES = (
    "cow", "horse", "dog", "cat", "car", "bus", "tree", "chair",
    "table", "fire hydrant", "bench", "lamp", "bird", "boat",
)
DEFAULT_CATEGORIES = {
    "color": ("red", "green", "blue", "white", "black", "brown"),
    "material": ("wood", "metal", "plastic", "stone"),
    "size": ("small", "large", "tiny"),
}
TEMPLATE_WORDS = ("what", "is", "the", "of")


@dataclass
class GenConfig:
    seed: int = 0
    n_images: int = 500
    objects_per_image: int = 6
    n_questions_per_image: int = 2
    names: tuple = DEFAULT_NAMES
    categories: dict = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))
    p_misrecognize: float = 0.3
    p_miss: float = 0.2
    p_duplicate: float = 0.3
    # probability that a question's answer is its split's majority value
    ood_skew: float = 0.8
    split_fractions: tuple = (("train", 0.6), ("dev", 0.1), ("test_id", 0.15), ("test_ood", 0.15))
    image_width: float = 640.0
    image_height: float = 480.0
    heatmap_h: int = 24
    heatmap_w: int = 32
    emb_dim: int = 300

    def validate(self):
        for name in ("p_misrecognize", "p_miss", "p_duplicate", "ood_skew"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.p_miss + self.p_misrecognize > 1.0 + 1e-12:
            raise ValueError("p_miss + p_misrecognize must not exceed 1")
        if not self.names or not self.categories:
            raise ValueError("vocabulary must be nonempty")
        if len(self.names) < self.objects_per_image:
            raise ValueError(
                f"{len(self.names)} names cannot label {self.objects_per_image} distinct objects per image"
            )
        if len(self.names) < 2 or any(len(v) < 2 for v in self.categories.values()):
            raise ValueError("every name list and attribute category needs at least two values")
        if self.n_questions_per_image > self.objects_per_image:
            raise ValueError("more questions per image than objects")
        total = sum(f for _, f in self.split_fractions)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["names"] = list(self.names)
        d["categories"] = {k: list(v) for k, v in self.categories.items()}
        d["split_fractions"] = [list(x) for x in self.split_fractions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "names" in d:
            d["names"] = tuple(d["names"])
        if "categories" in d:
            d["categories"] = {k: tuple(v) for k, v in d["categories"].items()}
        if "split_fractions" in d:
            d["split_fractions"] = tuple((s, float(f)) for s, f in d["split_fractions"])
        return cls(**d)


@dataclass
class Benchmark:
    config: GenConfig
    corpus: Corpus
    embeddings: EmbeddingTable
    heatmaps: list[HeatMap]
    # one entry per gt object: image_id, object_id, status, corruption
    corruption_log: list[dict]

    def log_status(self) -> dict[tuple[str, str], str]:
        return {(e["image_id"], e["object_id"]): e["status"] for e in self.corruption_log}

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "scenes": out / "scenes.jsonl",
            "questions": out / "questions.jsonl",
            "embeddings": out / "embeddings.txt",
            "heatmaps": out / "heatmaps.jsonl",
            "corruption_log": out / "corruption_log.jsonl",
        }
        save_corpus(self.corpus, paths["scenes"], paths["questions"])
        save_embeddings(self.embeddings, paths["embeddings"])
        write_jsonl((h.to_dict() for h in self.heatmaps), paths["heatmaps"])
        write_jsonl(self.corruption_log, paths["corruption_log"])
        return paths


def _vocabulary(cfg: GenConfig) -> list[str]:
    words = list(TEMPLATE_WORDS)
    for name in cfg.names:
        words.extend(name.split())
    for cat, values in cfg.categories.items():
        words.append(cat)
        words.extend(values)
    seen = set()
    return [w for w in words if not (w in seen or seen.add(w))]


def _embeddings(cfg: GenConfig, rng) -> EmbeddingTable:
    entries = {}
    for w in _vocabulary(cfg):
        v = rng.standard_normal(cfg.emb_dim)
        entries[w] = v / np.linalg.norm(v)
    return EmbeddingTable(entries, cfg.emb_dim)


def _grid_shape(n: int, aspect: float) -> tuple[int, int]:
    cols = max(1, math.ceil(math.sqrt(n * aspect)))
    rows = math.ceil(n / cols)
    return rows, cols


def _jitter(box: BoundingBox, rng, amount: float, w: float, h: float) -> BoundingBox:
    bw, bh = box.width, box.height
    while True:
        d = rng.uniform(-amount, amount, size=4) * np.array([bw, bh, bw, bh])
        x1 = min(max(box.x1 + d[0], 0.0), w)
        y1 = min(max(box.y1 + d[1], 0.0), h)
        x2 = min(max(box.x2 + d[2], 0.0), w)
        y2 = min(max(box.y2 + d[3], 0.0), h)
        if x2 > x1 and y2 > y1:
            nb = BoundingBox(x1, y1, x2, y2)
            if iou(nb, box) > 0.6:
                return nb


def _other(values, current, rng):
    choices = [v for v in values if v != current]
    return choices[int(rng.integers(len(choices)))]


def _heatmap(cfg: GenConfig, image_id: str, qid: str, box: BoundingBox, rng) -> HeatMap:
    h, w = cfg.heatmap_h, cfg.heatmap_w
    sx, sy = w / cfg.image_width, h / cfg.image_height
    cx = (box.x1 + box.x2) / 2 * sx
    cy = (box.y1 + box.y2) / 2 * sy
    sigx = max(box.width * sx / 3, 0.5)
    sigy = max(box.height * sy / 3, 0.5)
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    blob = np.exp(-((xs[None, :] - cx) ** 2 / (2 * sigx ** 2) + (ys[:, None] - cy) ** 2 / (2 * sigy ** 2)))
    grid = blob + 0.02 * rng.random((h, w))
    return HeatMap(image_id, qid, grid)


def generate(cfg: GenConfig) -> Benchmark:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    emb = _embeddings(cfg, rng)
    cats = list(cfg.categories)
    names = list(cfg.names)
    W, H = cfg.image_width, cfg.image_height
    rows_, cols_ = _grid_shape(cfg.objects_per_image, W / H)
    cell_w, cell_h = W / cols_, H / rows_

    split_names = [s for s, _ in cfg.split_fractions]
    split_p = np.array([f for _, f in cfg.split_fractions])
    # majority answer per category: one for the in-distribution splits, another for OOD
    majority = {}
    for c in cats:
        vals = cfg.categories[c]
        i = int(rng.integers(len(vals)))
        j = (i + 1 + int(rng.integers(len(vals) - 1))) % len(vals)
        majority[c] = (vals[i], vals[j])

    images, questions, heatmaps, log = [], [], [], []
    for n in range(cfg.n_images):
        image_id = f"img{n:06d}"
        split = split_names[int(rng.choice(len(split_names), p=split_p))]
        cells = rng.permutation(rows_ * cols_)[: cfg.objects_per_image]
        obj_names = [names[i] for i in rng.permutation(len(names))[: cfg.objects_per_image]]
        attrs = [{c: cfg.categories[c][int(rng.integers(len(cfg.categories[c])))] for c in cats}
                 for _ in range(cfg.objects_per_image)]

        # questions first, since they fix the attribute values of their objects
        q_objs = rng.permutation(cfg.objects_per_image)[: cfg.n_questions_per_image]
        q_specs = []
        for k in q_objs:
            c = cats[int(rng.integers(len(cats)))]
            vals = cfg.categories[c]
            maj = majority[c][1] if split == "test_ood" else majority[c][0]
            if rng.random() < cfg.ood_skew:
                ans = maj
            else:
                ans = _other(vals, maj, rng)
            attrs[k][c] = ans
            q_specs.append((int(k), c, ans))

        gt = []
        for k in range(cfg.objects_per_image):
            r, col = divmod(int(cells[k]), cols_)
            fw, fh = rng.uniform(0.5, 0.85, size=2)
            bw, bh = fw * cell_w, fh * cell_h
            x1 = col * cell_w + rng.uniform(0.05, 0.95 - fw) * cell_w
            y1 = r * cell_h + rng.uniform(0.05, 0.95 - fh) * cell_h
            box = BoundingBox(float(x1), float(y1), float(x1 + bw), float(y1 + bh))
            gt.append(SceneObject(f"{image_id}_o{k}", box, obj_names[k], tuple((c, attrs[k][c]) for c in cats)))

        dets = []
        for obj in gt:
            u = rng.random()
            entry = {"image_id": image_id, "object_id": obj.object_id, "status": MATCHED, "corruption": None}
            if u < cfg.p_miss:
                entry["status"] = MISSING
                log.append(entry)
                continue
            box = _jitter(obj.box, rng, 0.05, W, H)
            name, a = obj.name, dict(obj.attributes)
            if u < cfg.p_miss + cfg.p_misrecognize:
                entry["status"] = MISRECOGNIZED
                if rng.random() < 0.5:
                    name = _other(names, name, rng)
                    entry["corruption"] = "name"
                else:
                    c = cats[int(rng.integers(len(cats)))]
                    a[c] = _other(cfg.categories[c], a[c], rng)
                    entry["corruption"] = f"attribute:{c}"
            dets.append((name, box, a))
            if rng.random() < cfg.p_duplicate:
                dup_attrs = {c: cfg.categories[c][int(rng.integers(len(cfg.categories[c])))] for c in cats}
                dets.append((_other(names, obj.name, rng), _jitter(obj.box, rng, 0.08, W, H), dup_attrs))
            log.append(entry)

        order = rng.permutation(len(dets))
        det_objects = tuple(
            SceneObject(f"{image_id}_d{i}", dets[j][1], dets[j][0], tuple((c, dets[j][2][c]) for c in cats))
            for i, j in enumerate(order)
        )
        images.append(ImageRecord(image_id, W, H, tuple(gt), det_objects))

        for qn, (k, c, ans) in enumerate(q_specs):
            qid = f"{image_id}_q{qn}"
            tokens = ("what", "is", "the", c, "of", "the", *gt[k].name.split())
            questions.append(QuestionRecord(qid, image_id, tokens, ans, None, (gt[k].object_id,), split))
            heatmaps.append(_heatmap(cfg, image_id, qid, gt[k].box, rng))

    return Benchmark(cfg, Corpus(images, questions), emb, heatmaps, log)
