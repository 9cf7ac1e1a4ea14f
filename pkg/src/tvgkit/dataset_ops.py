"""TVG subsets, training-set filtering, flaw statistics and answer accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .features import DET, GQA_MAX_OBJECTS, INF, ORA, infuse, build_det
from .matching import (
    IOU_MATCH,
    SEMANTIC,
    SPATIAL,
    FIScoreVector,
    cue_count,
    match_report,
    relevant_objects,
    semantic_scores,
    spatial_scores,
)
from .scene import SPLITS, Corpus, EmbeddingTable, QuestionRecord


@dataclass(frozen=True)
class VariantSpec:
    """A feature variant under an object budget, e.g. DET capped at 36."""

    name: str
    max_objects: int = GQA_MAX_OBJECTS

    @classmethod
    def parse(cls, text: str) -> "VariantSpec":
        # "DET", "INF@36"
        name, _, cap = text.partition("@")
        name = name.upper()
        if name not in (DET, ORA, INF):
            raise ValueError(f"unknown feature variant {name!r}")
        return cls(name, int(cap) if cap else GQA_MAX_OBJECTS)


# encoder used when only the symbolic objects of a variant matter
_SYMBOLIC = EmbeddingTable({}, dimension=1)


def variant_objects(corpus: Corpus, q: QuestionRecord, spec: VariantSpec):
    image = corpus.image(q.image_id)
    if spec.name == DET:
        return image.det_objects[:spec.max_objects]
    if spec.name == ORA:
        return image.gt_objects[:spec.max_objects]
    det = build_det(image, _SYMBOLIC, spec.max_objects, with_coords=False)
    fm, _, _ = infuse(det, image, q, _SYMBOLIC, spec.max_objects)
    return fm.objects


def tvg_filter(corpus: Corpus, questions: Iterable[QuestionRecord] | None = None,
               max_objects: int = GQA_MAX_OBJECTS) -> set[str]:
    """Ids of annotated questions whose relevant objects all match in DET."""
    questions = corpus.questions if questions is None else questions
    out = set()
    for q in questions:
        if not q.annotated:
            continue
        image = corpus.image(q.image_id)
        if match_report(image, q, dets=image.det_objects[:max_objects]).tvg:
            out.add(q.question_id)
    return out


def train_filter(corpus: Corpus, variants: Sequence[VariantSpec | str] = (VariantSpec(DET),),
                 threshold: float = IOU_MATCH) -> set[str]:
    """Training questions with a spatial cue (FI > threshold) in every variant."""
    specs = [VariantSpec.parse(v) if isinstance(v, str) else v for v in variants]
    out = set()
    for q in corpus.questions:
        if q.split != "train" or not q.annotated:
            continue
        gts = relevant_objects(corpus.image(q.image_id), q)
        ok = True
        for spec in specs:
            objs = variant_objects(corpus, q, spec)
            scores = spatial_scores(objs, gts)
            if not (scores > threshold).any():
                ok = False
                break
        if ok:
            out.add(q.question_id)
    return out


def vqa_accuracy(pred: str, votes: Sequence[tuple[str, int]]) -> float:
    """Soft accuracy min(#annotators giving `pred` / 3, 1)."""
    count = 0
    for ans, n in votes:
        if n < 0:
            raise ValueError(f"negative vote count for {ans!r}")
        if ans == pred:
            count += n
    return min(count / 3.0, 1.0)


def exact_accuracy(pred: str, answer: str) -> float:
    return 1.0 if pred == answer else 0.0


def question_accuracy(pred: str, q: QuestionRecord) -> float:
    if q.answer_votes:
        return vqa_accuracy(pred, q.answer_votes)
    return exact_accuracy(pred, q.answer)


@dataclass
class SplitStats:
    total: int = 0
    annotated: int = 0
    excluded_no_annotation: int = 0
    tvg_count: int = 0
    tvg_fraction: float = 0.0
    mean_spatial_cues: float = 0.0
    mean_semantic_cues: float = 0.0


@dataclass
class SplitReport:
    splits: dict[str, SplitStats]
    threshold: float = IOU_MATCH

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "splits": {k: asdict(v) for k, v in self.splits.items()}}

    def table(self) -> str:
        head = f"{'split':<10}{'total':>8}{'annot.':>8}{'tvg':>8}{'tvg %':>8}{'spa cues':>10}{'sem cues':>10}"
        lines = [head, "-" * len(head)]
        for name, s in self.splits.items():
            lines.append(
                f"{name:<10}{s.total:>8}{s.annotated:>8}{s.tvg_count:>8}{100 * s.tvg_fraction:>8.1f}"
                f"{s.mean_spatial_cues:>10.2f}{s.mean_semantic_cues:>10.2f}"
            )
        return "\n".join(lines)


def split_report(corpus: Corpus, threshold: float = IOU_MATCH, max_objects: int = GQA_MAX_OBJECTS) -> SplitReport:
    splits = {}
    for name in SPLITS:
        qs = corpus.split(name)
        st = SplitStats(total=len(qs))
        spa_sum = sem_sum = 0
        for q in qs:
            if not q.annotated:
                st.excluded_no_annotation += 1
                continue
            st.annotated += 1
            image = corpus.image(q.image_id)
            dets = image.det_objects[:max_objects]
            gts = relevant_objects(image, q)
            spa_sum += cue_count(FIScoreVector(q.question_id, spatial_scores(dets, gts), SPATIAL), threshold)
            sem_sum += cue_count(FIScoreVector(q.question_id, semantic_scores(dets, gts), SEMANTIC))
            st.tvg_count += match_report(image, q, dets=dets).tvg
        if st.annotated:
            st.tvg_fraction = st.tvg_count / st.annotated
            st.mean_spatial_cues = spa_sum / st.annotated
            st.mean_semantic_cues = sem_sum / st.annotated
        splits[name] = st
    return SplitReport(splits, threshold)
