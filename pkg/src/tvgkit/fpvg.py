"""FPVG-style grounding check via relevant-only / irrelevant-only ablations.

A question counts as well grounded ("plus") when the model keeps its answer
with only the relevant objects and changes it with only the irrelevant ones.
Ablated objects are removed from the input, not zeroed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset_ops import question_accuracy
from .matching import SEMANTIC, relevant_objects, semantic_scores, spatial_scores
from .scene import QuestionRecord
from .toy_model import ModelParams
from .training import FeatureSource, predict_rows, question_vector, relevance_mask

# answers a batch of (question vector, feature rows) pairs
Predictor = Callable[[Sequence[np.ndarray], Sequence[np.ndarray]], list]


def model_predictor(params: ModelParams) -> Predictor:
    return lambda qvecs, mats: predict_rows(params, qvecs, mats)


def verdict(full, rel_only, irr_only) -> str:
    return "plus" if rel_only == full and irr_only != full else "minus"


@dataclass
class FPVGRecord:
    question_id: str
    split: str
    answer_full: str | None
    answer_relevant: str | None
    answer_irrelevant: str | None
    verdict: str
    correct: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FPVGResult:
    matching: str
    records: list[FPVGRecord] = field(default_factory=list)
    excluded: dict[str, int] = field(default_factory=dict)

    def summary(self) -> list[dict]:
        out = []
        for split in sorted({r.split for r in self.records} | set(self.excluded)):
            recs = [r for r in self.records if r.split == split]
            n = len(recs)
            plus = sum(r.verdict == "plus" for r in recs)
            plus_correct = sum(r.verdict == "plus" and r.correct for r in recs)
            out.append({
                "split": split,
                "matching": self.matching,
                "fpvg_plus": plus / n if n else 0.0,
                "fpvg_plus_correct": plus_correct / n if n else 0.0,
                "evaluated": n,
                "excluded": self.excluded.get(split, 0),
            })
        return out

    @property
    def fpvg_plus(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.verdict == "plus" for r in self.records) / len(self.records)

    def jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)


def ablation_sets(src: FeatureSource, q: QuestionRecord, matching: str):
    """DET rows split into relevant / irrelevant index lists under a matching."""
    fm = src.det(q.image_id)
    gts = relevant_objects(src.corpus.image(q.image_id), q)
    fi = semantic_scores(fm.objects, gts) if matching == SEMANTIC else spatial_scores(fm.objects, gts)
    rel = relevance_mask(fi, matching)
    return fm.rows, np.flatnonzero(rel), np.flatnonzero(~rel)


def fpvg_plus(model: ModelParams | Predictor, src: FeatureSource, questions: Sequence[QuestionRecord],
              matching: str = SEMANTIC) -> FPVGResult:
    """Evaluate with DET features; intended for TVG test subsets."""
    predict = model_predictor(model) if isinstance(model, ModelParams) else model
    result = FPVGResult(matching)
    kept, qvecs, full, rel, irr = [], [], [], [], []
    for q in questions:
        if not q.annotated:
            result.excluded[q.split] = result.excluded.get(q.split, 0) + 1
            continue
        rows, ri, ii = ablation_sets(src, q, matching)
        if len(ri) == 0 or len(ii) == 0:
            result.excluded[q.split] = result.excluded.get(q.split, 0) + 1
            continue
        kept.append(q)
        qvecs.append(question_vector(q.tokens, src.emb))
        full.append(rows)
        rel.append(rows[ri])
        irr.append(rows[ii])
    a_full = predict(qvecs, full)
    a_rel = predict(qvecs, rel)
    a_irr = predict(qvecs, irr)
    for q, af, ar, ai in zip(kept, a_full, a_rel, a_irr):
        correct = af is not None and question_accuracy(af, q) == 1.0
        result.records.append(FPVGRecord(q.question_id, q.split, af, ar, ai, verdict(af, ar, ai), correct))
    return result
