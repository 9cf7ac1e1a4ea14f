"""Training and evaluation of the toy model on a corpus."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_ops import VariantSpec, question_accuracy, train_filter
from .features import DET, GQA_MAX_OBJECTS, INF, ORA, FeatureMatrix, build_det, build_ora, infuse
from .matching import SEMANTIC, SPATIAL, IOU_MATCH, relevant_objects, semantic_scores, spatial_scores
from .scene import Corpus, EmbeddingTable, QuestionRecord
from .toy_model import (
    METHODS,
    ModelError,
    ModelParams,
    SCRState,
    forward,
    loss_and_grads,
    pad_batch,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    hidden: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    method: str = "none"
    fi_source: str = SPATIAL
    variant: str = DET
    lam: float = 1.0
    max_objects: int = GQA_MAX_OBJECTS
    with_coords: bool = True
    # feature variants a training question must have a cue in, comma separated
    filter_variants: str = "DET,INF"
    augment: str = "none"

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.fi_source not in (SPATIAL, SEMANTIC):
            raise ValueError(f"unknown fi_source {self.fi_source!r}")
        if self.variant not in (DET, ORA, INF):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.augment not in ("none", "relevant-only"):
            raise ValueError(f"unknown augment {self.augment!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.strip()
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            t = types[key]
            if t in ("bool", bool):
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif t in ("int", int):
                kw[key] = int(raw)
            elif t in ("float", float):
                kw[key] = float(raw)
            else:
                kw[key] = str(raw).strip()
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_config(path, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_mapping(values)


def question_vector(tokens: Sequence[str], emb: EmbeddingTable) -> np.ndarray:
    if not tokens:
        return emb.unknown_vector
    return np.mean([emb.lookup(t.lower()) for t in tokens], axis=0)


@dataclass
class Sample:
    question: QuestionRecord
    qvec: np.ndarray
    rows: np.ndarray
    fi: np.ndarray
    relevant: np.ndarray
    answer: int


class FeatureSource:
    """Builds (and caches) feature matrices and FI scores per question."""

    def __init__(self, corpus: Corpus, emb: EmbeddingTable, max_objects: int = GQA_MAX_OBJECTS,
                 with_coords: bool = True):
        self.corpus = corpus
        self.emb = emb
        self.max_objects = max_objects
        self.with_coords = with_coords
        self._det = {}

    @property
    def dim(self) -> int:
        return 2 * self.emb.dimension + (4 if self.with_coords else 0)

    def det(self, image_id: str) -> FeatureMatrix:
        fm = self._det.get(image_id)
        if fm is None:
            fm = build_det(self.corpus.image(image_id), self.emb, self.max_objects, self.with_coords)
            self._det[image_id] = fm
        return fm

    def matrix(self, q: QuestionRecord, variant: str) -> FeatureMatrix:
        image = self.corpus.image(q.image_id)
        if variant == DET:
            return self.det(q.image_id)
        if variant == ORA:
            return build_ora(image, self.emb, self.max_objects, self.with_coords)
        fm, _, _ = infuse(self.det(q.image_id), image, q, self.emb, self.max_objects)
        return fm

    def scores(self, q: QuestionRecord, fm: FeatureMatrix, fi_source: str) -> np.ndarray:
        gts = relevant_objects(self.corpus.image(q.image_id), q)
        if fi_source == SEMANTIC:
            return semantic_scores(fm.objects, gts)
        return spatial_scores(fm.objects, gts)


def relevance_mask(fi: np.ndarray, fi_source: str) -> np.ndarray:
    if fi_source == SEMANTIC:
        return fi == 1.0
    return fi > IOU_MATCH


def answer_vocab(corpus: Corpus) -> list[str]:
    return sorted({q.answer for q in corpus.questions if q.split == "train"})


def build_samples(src: FeatureSource, questions: Sequence[QuestionRecord], variant: str, fi_source: str,
                  answers: Sequence[str]) -> list[Sample]:
    index = {a: i for i, a in enumerate(answers)}
    out = []
    for q in questions:
        fm = src.matrix(q, variant)
        if len(fm) == 0:
            continue
        fi = src.scores(q, fm, fi_source) if q.annotated else np.zeros(len(fm))
        out.append(Sample(q, question_vector(q.tokens, src.emb), fm.rows, fi,
                          relevance_mask(fi, fi_source), index.get(q.answer, -1)))
    return out


def relevant_only(samples: Sequence[Sample]) -> list[Sample]:
    out = []
    for s in samples:
        idx = np.flatnonzero(s.relevant)
        if len(idx) == 0 or len(idx) == len(s.rows):
            continue
        out.append(Sample(s.question, s.qvec, s.rows[idx], s.fi[idx], s.relevant[idx], s.answer))
    return out


def _stack(samples: Sequence[Sample], dim: int):
    X, mask = pad_batch([s.rows for s in samples], dim)
    Q = np.stack([s.qvec for s in samples])
    fi = np.zeros(mask.shape)
    rel = np.zeros(mask.shape, dtype=bool)
    for b, s in enumerate(samples):
        fi[b, :len(s.fi)] = s.fi
        rel[b, :len(s.relevant)] = s.relevant
    ans = np.array([s.answer for s in samples])
    return Q, X, mask, fi, rel, ans


def predict_rows(params: ModelParams, qvecs: Sequence[np.ndarray], matrices: Sequence[np.ndarray],
                 batch_size: int = 512) -> list[str | None]:
    """Answer strings; None where a question has no visual objects."""
    out: list[str | None] = [None] * len(matrices)
    live = [i for i, m in enumerate(matrices) if len(m)]
    dim = params.Wv.shape[0]
    for start in range(0, len(live), batch_size):
        chunk = live[start:start + batch_size]
        X, mask = pad_batch([matrices[i] for i in chunk], dim)
        Q = np.stack([qvecs[i] for i in chunk])
        logits = forward(params, Q, X, mask).answer_logits
        for i, a in zip(chunk, np.argmax(logits, axis=1)):
            out[i] = params.answers[a]
    return out


def evaluate(params: ModelParams, src: FeatureSource, questions: Sequence[QuestionRecord]) -> float:
    """Mean accuracy with DET features; questions without detections score 0."""
    if not questions:
        return 0.0
    qvecs = [question_vector(q.tokens, src.emb) for q in questions]
    mats = [src.det(q.image_id).rows for q in questions]
    preds = predict_rows(params, qvecs, mats)
    return float(np.mean([0.0 if p is None else question_accuracy(p, q) for p, q in zip(preds, questions)]))


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_epoch: int
    n_train: int
    scr_undefined: int = 0

    def write_log(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "dev_acc"])
            for row in self.log:
                w.writerow([row["epoch"], f"{row['train_loss']:.8f}", f"{row['dev_acc']:.6f}"])


def select_training(corpus: Corpus, cfg: TrainConfig) -> list[QuestionRecord]:
    specs = [VariantSpec.parse(v) if "@" in v else VariantSpec(v.strip().upper(), cfg.max_objects)
             for v in cfg.filter_variants.split(",") if v.strip()]
    keep = train_filter(corpus, specs)
    return [q for q in corpus.questions if q.question_id in keep]


def train(corpus: Corpus, emb: EmbeddingTable, cfg: TrainConfig, src: FeatureSource | None = None) -> TrainResult:
    """Momentum SGD on the filtered training split; keeps the best-dev parameters."""
    cfg.validate()
    src = src or FeatureSource(corpus, emb, cfg.max_objects, cfg.with_coords)
    answers = answer_vocab(corpus)
    train_qs = select_training(corpus, cfg)
    samples = [s for s in build_samples(src, train_qs, cfg.variant, cfg.fi_source, answers) if s.answer >= 0]
    if cfg.augment == "relevant-only":
        samples += relevant_only(samples)
    if not samples:
        raise ModelError("no usable training questions after filtering")
    dev_qs = corpus.split("dev")

    params = ModelParams.init(cfg.seed, emb.dimension, src.dim, cfg.hidden, len(answers), answers)
    velocity = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    rng = np.random.default_rng(cfg.seed + 1)
    scr_state = SCRState()
    best, best_acc, best_epoch = params.copy(), -1.0, 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            Q, X, mask, fi, rel, ans = _stack(batch, src.dim)
            tr = forward(params, Q, X, mask)
            loss, grads = loss_and_grads(params, tr, ans, cfg.method, fi=fi, relevant=rel, lam=cfg.lam,
                                         scr_state=scr_state)
            if not np.isfinite(loss):
                raise ModelError(f"training diverged at epoch {epoch} (loss={loss})")
            for k, g in grads.items():
                velocity[k] = cfg.momentum * velocity[k] + g
                setattr(params, k, getattr(params, k) - cfg.lr * velocity[k])
            params.check_finite()
            losses.append(loss)
        dev_acc = evaluate(params, src, dev_qs)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_acc": dev_acc})
        log.debug("epoch %d loss %.4f dev %.4f", epoch, history[-1]["train_loss"], dev_acc)
        if dev_acc > best_acc:
            best, best_acc, best_epoch = params.copy(), dev_acc, epoch
    return TrainResult(best, history, best_epoch, len(samples), scr_state.undefined)
