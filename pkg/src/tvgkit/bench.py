"""Seeded Flawed-vs-True VG experiment on synthetic corpora.

For each seed a corpus is generated and four models are trained:

    flawed_baseline   no VG method, DET features
    flawed_attalign   AttAlign, DET features, spatial FI
    true_baseline     no VG method, INF features
    true_attalign     AttAlign, INF features, semantic FI

All are tested with DET features on the full ID/OOD tests and on their TVG
subsets; FPVG-style grounding is measured on the TVG subsets.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_ops import tvg_filter
from .fpvg import fpvg_plus
from .matching import SEMANTIC, SPATIAL
from .synth import GenConfig, generate
from .training import FeatureSource, TrainConfig, evaluate, parse_config_text, train

log = logging.getLogger(__name__)

RUNS = {
    "flawed_baseline": dict(method="none", variant="DET", fi_source=SPATIAL),
    "flawed_attalign": dict(method="attalign", variant="DET", fi_source=SPATIAL),
    "true_baseline": dict(method="none", variant="INF", fi_source=SEMANTIC),
    "true_attalign": dict(method="attalign", variant="INF", fi_source=SEMANTIC),
}
MIN_MARGIN = 0.02
REFERENCE_CONFIG = Path(__file__).parent / "configs" / "reference.cfg"


@dataclass
class BenchConfig:
    seeds: int = 5
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "BenchConfig":
        cfg = cls()
        for key, value in parse_config_text(text).items():
            if key == "seeds":
                cfg.seeds = int(value)
            elif key.startswith("synth."):
                cfg.synth[key[6:]] = value
            elif key.startswith("train."):
                cfg.train[key[6:]] = value
            else:
                raise ValueError(f"unknown bench config key {key!r}")
        return cfg

    @classmethod
    def load(cls, path=None) -> "BenchConfig":
        return cls.from_text(Path(path or REFERENCE_CONFIG).read_text())

    def gen_config(self, seed: int) -> GenConfig:
        base = GenConfig()
        kw = {}
        for k, v in self.synth.items():
            current = getattr(base, k)
            kw[k] = type(current)(v) if isinstance(current, (int, float)) else v
        return GenConfig(**{**kw, "seed": seed})

    def train_config(self, seed: int, run: str) -> TrainConfig:
        return TrainConfig.from_mapping({**self.train, **RUNS[run], "seed": seed})


def run_seed(cfg: BenchConfig, seed: int) -> dict:
    bench = generate(cfg.gen_config(seed))
    corpus = bench.corpus
    src = FeatureSource(corpus, bench.embeddings)
    tests = {}
    for split in ("test_id", "test_ood"):
        qs = corpus.split(split)
        tvg = tvg_filter(corpus, qs)
        tests[split] = qs
        tests["tvg_" + split[5:]] = [q for q in qs if q.question_id in tvg]
    out = {"seed": seed, "sizes": {k: len(v) for k, v in tests.items()}, "runs": {}}
    for run in RUNS:
        t0 = time.perf_counter()
        tcfg = cfg.train_config(seed, run)
        res = train(corpus, bench.embeddings, tcfg, src)
        metrics = {f"acc_{k}": evaluate(res.params, src, qs) for k, qs in tests.items()}
        for matching in (SEMANTIC, SPATIAL):
            for sub in ("tvg_id", "tvg_ood"):
                r = fpvg_plus(res.params, src, tests[sub], matching)
                metrics[f"fpvg_{matching}_{sub}"] = r.fpvg_plus
        metrics["best_epoch"] = res.best_epoch
        metrics["n_train"] = res.n_train
        out["runs"][run] = metrics
        log.info("seed %d %-16s tvg_ood %.3f (%.1fs)", seed, run, metrics["acc_tvg_ood"],
                 time.perf_counter() - t0)
    return out


def aggregate(per_seed: list[dict]) -> dict:
    means = {}
    for run in RUNS:
        keys = per_seed[0]["runs"][run].keys()
        means[run] = {k: float(np.mean([s["runs"][run][k] for s in per_seed])) for k in keys}
    return means


def check_claims(means: dict, margin: float = MIN_MARGIN) -> dict:
    """Directional checks, all measured against the no-method DET baseline."""
    base, true = means["flawed_baseline"], means["true_attalign"]
    flawed = means["flawed_attalign"]
    gain_tvg = true["acc_tvg_ood"] - base["acc_tvg_ood"]
    gain_full = true["acc_test_ood"] - base["acc_test_ood"]
    fpvg_gap = true["fpvg_semantic_tvg_ood"] - flawed["fpvg_semantic_tvg_ood"]
    return {
        "a_true_beats_baseline_tvg_ood": {"value": gain_tvg, "pass": gain_tvg >= margin},
        "b_gain_tvg_exceeds_gain_full": {"value": gain_tvg - gain_full, "pass": gain_tvg - gain_full >= margin},
        "c_fpvg_true_exceeds_flawed": {"value": fpvg_gap, "pass": fpvg_gap >= margin},
    }


def run_bench(cfg: BenchConfig) -> dict:
    per_seed = [run_seed(cfg, seed) for seed in range(cfg.seeds)]
    means = aggregate(per_seed)
    return {"seeds": per_seed, "means": means, "claims": check_claims(means)}


def write_results(results: dict, out_dir, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.json", "summary": out / "summary.txt"}
    paths["results"].write_text(json.dumps(results, indent=1) + "\n")
    paths["summary"].write_text(summary_table(results) + "\n")
    if figures:
        from .plotting import plot_bench
        paths.update(plot_bench(results, out))
    return paths


def summary_table(results: dict) -> str:
    cols = ["acc_test_id", "acc_tvg_id", "acc_test_ood", "acc_tvg_ood", "fpvg_semantic_tvg_ood",
            "fpvg_spatial_tvg_ood"]
    head = f"{'run':<18}" + "".join(f"{c.replace('fpvg_', 'fp_').replace('acc_', ''):>14}" for c in cols)
    lines = [head, "-" * len(head)]
    for run, m in results["means"].items():
        lines.append(f"{run:<18}" + "".join(f"{100 * m[c]:>14.2f}" for c in cols))
    lines.append("")
    for name, c in results["claims"].items():
        lines.append(f"{'PASS' if c['pass'] else 'FAIL'}  {name}  ({100 * c['value']:+.2f} points)")
    return "\n".join(lines)
