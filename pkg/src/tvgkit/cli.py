"""Command line interface: `tvgkit <subcommand> ...`."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .scene import CorpusError, load_corpus, load_embeddings, load_heatmaps, write_jsonl

log = logging.getLogger("tvgkit")


def _corpus_args(p, questions=True):
    p.add_argument("--scenes", required=True, type=Path, help="scene JSONL file")
    if questions:
        p.add_argument("--questions", required=True, type=Path, help="question JSONL file")


def _emb_args(p):
    p.add_argument("--embeddings", required=True, type=Path, help="GloVe-format text file")
    p.add_argument("--emb-dim", type=int, default=None, help="vector size (default: inferred)")


def _write_json(obj, path: Path | None):
    text = json.dumps(obj, indent=1) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    from .synth import GenConfig, generate

    cfg = GenConfig.from_dict(json.loads(args.config.read_text())) if args.config else GenConfig()
    for key in ("seed", "n_images", "objects_per_image", "n_questions_per_image", "p_misrecognize",
                "p_miss", "p_duplicate", "ood_skew", "emb_dim"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    bench = generate(cfg)
    paths = bench.write(args.out)
    (Path(args.out) / "gen_config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    print(f"wrote {len(bench.corpus.images)} images, {len(bench.corpus.questions)} questions to {args.out}")
    return paths


def cmd_stats(args):
    from .dataset_ops import split_report

    corpus = load_corpus(args.scenes, args.questions)
    report = split_report(corpus, args.threshold, args.max_objects)
    _write_json(report.to_dict(), args.json)
    print(report.table(), file=sys.stderr if args.json is None else sys.stdout)
    if args.figure:
        from .plotting import plot_split_report
        plot_split_report(report, args.figure)


def cmd_match(args):
    from .matching import compute_fi, match_report

    corpus = load_corpus(args.scenes, args.questions)
    fis, reports, skipped = [], [], 0
    for q in corpus.questions:
        if not q.annotated:
            skipped += 1
            continue
        image = corpus.image(q.image_id)
        fis.append(compute_fi(image, q, args.method).to_dict())
        reports.append(match_report(image, q).to_dict())
    write_jsonl(fis, args.fi_out)
    if args.reports:
        write_jsonl(reports, args.reports)
    print(f"{len(fis)} questions matched ({args.method}), {skipped} without relevance annotation")


def cmd_features_build(args):
    from .features import DET, ORA, build_det, build_inf, build_ora, write_store

    corpus = load_corpus(args.scenes, args.questions) if args.questions else None
    if corpus is None:
        from .scene import Corpus, load_scenes
        corpus = Corpus(load_scenes(args.scenes), [])
    emb = load_embeddings(args.embeddings, args.emb_dim)
    coords = not args.no_coords
    if args.variant == DET:
        mats = [build_det(im, emb, args.max_objects, coords) for im in corpus.images]
    elif args.variant == ORA:
        mats = [build_ora(im, emb, args.max_objects, coords) for im in corpus.images]
    else:
        if not args.questions:
            raise SystemExit("INF features need --questions")
        mats = [build_inf(corpus.image(q.image_id), q, emb, args.max_objects, coords)[0]
                for q in corpus.questions if q.annotated and q.split == "train"]
    n = write_store(args.out, mats, emb.dimension, coords)
    print(f"wrote {n} {args.variant} records to {args.out}")


def cmd_features_dump(args):
    from .features import dump_store_json

    sys.stdout.write(dump_store_json(args.store) + "\n")


def cmd_heatmap(args):
    from .heatmap import relevant_objects
    from .scene import load_scenes

    images = {im.image_id: im for im in load_scenes(args.scenes)}
    out = []
    for hm in load_heatmaps(args.heatmaps):
        if hm.image_id not in images:
            raise CorpusError(f"heat map references unknown image_id {hm.image_id!r}")
        out.append(relevant_objects(hm, images[hm.image_id], args.threshold).to_dict())
    write_jsonl(out, args.out)
    print(f"scored {len(out)} heat maps")


def cmd_train(args):
    from .plotting import plot_training_log
    from .toy_model import save_params
    from .training import TrainConfig, load_config, train

    overrides = {k: getattr(args, k) for k in ("method", "fi_source", "variant", "seed", "epochs")}
    cfg = load_config(args.config, **overrides) if args.config else TrainConfig.from_mapping(
        {k: v for k, v in overrides.items() if v is not None})
    if args.augment:
        cfg.augment = args.augment
    corpus = load_corpus(args.scenes, args.questions)
    emb = load_embeddings(args.embeddings, args.emb_dim)
    res = train(corpus, emb, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(res.params, out / "model.bin")
    res.write_log(out / "train_log.csv")
    (out / "config.txt").write_text(cfg.to_text())
    plot_training_log(res.log, out / "training.png", f"{cfg.method} / {cfg.variant} / {cfg.fi_source}")
    print(f"trained on {res.n_train} questions; best dev epoch {res.best_epoch} "
          f"({res.log[res.best_epoch - 1]['dev_acc']:.4f})")


def cmd_eval(args):
    from .dataset_ops import tvg_filter
    from .fpvg import fpvg_plus
    from .toy_model import load_params
    from .training import FeatureSource, evaluate

    corpus = load_corpus(args.scenes, args.questions)
    emb = load_embeddings(args.embeddings, args.emb_dim)
    params = load_params(args.model)
    src = FeatureSource(corpus, emb, args.max_objects, not args.no_coords)
    splits = args.splits.split(",")
    qs = [q for q in corpus.questions if q.split in splits]
    if not args.all:
        keep = tvg_filter(corpus, qs, args.max_objects)
        qs = [q for q in qs if q.question_id in keep]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.fpvg:
        res = fpvg_plus(params, src, qs, args.matching)
        (out / "fpvg_verdicts.jsonl").write_text(res.jsonl())
        summary = res.summary()
        _write_json(summary, out / "fpvg_summary.json")
        from .plotting import plot_fpvg_summary
        plot_fpvg_summary(summary, out / "fpvg.png")
        for s in summary:
            print(f"{s['split']:<9} {s['matching']:<9} FPVG+ {100 * s['fpvg_plus']:6.2f}  "
                  f"(correct {100 * s['fpvg_plus_correct']:6.2f})  evaluated {s['evaluated']}  "
                  f"excluded {s['excluded']}")
    else:
        acc = {s: evaluate(params, src, [q for q in qs if q.split == s]) for s in splits}
        _write_json({"subset": "all" if args.all else "tvg", "accuracy": acc}, out / "accuracy.json")
        for s, a in acc.items():
            print(f"{s:<9} accuracy {100 * a:6.2f}")


def cmd_bench(args):
    from .bench import BenchConfig, run_bench, summary_table, write_results

    cfg = BenchConfig.load(args.config)
    if args.seeds is not None:
        cfg.seeds = args.seeds
    results = run_bench(cfg)
    write_results(results, args.out, figures=not args.no_figures)
    print(summary_table(results))
    return 0 if all(c["pass"] for c in results["claims"].values()) else 1


def cmd_convert_gqa(args):
    from .gqa import convert_files
    from .scene import save_corpus

    corpus = convert_files(args.scene_graphs, args.gqa_questions, args.split, args.detections, args.categories)
    save_corpus(corpus, args.scenes, args.questions)
    print(f"converted {len(corpus.images)} images, {len(corpus.questions)} questions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvgkit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="GenConfig as JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-images", dest="n_images", type=int)
    p.add_argument("--objects-per-image", dest="objects_per_image", type=int)
    p.add_argument("--questions-per-image", dest="n_questions_per_image", type=int)
    p.add_argument("--p-misrecognize", dest="p_misrecognize", type=float)
    p.add_argument("--p-miss", dest="p_miss", type=float)
    p.add_argument("--p-duplicate", dest="p_duplicate", type=float)
    p.add_argument("--ood-skew", dest="ood_skew", type=float)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="TVG fractions and cue counts per split")
    _corpus_args(p)
    p.add_argument("--threshold", type=float, default=0.5, help="spatial cue threshold")
    p.add_argument("--max-objects", type=int, default=100)
    p.add_argument("--json", type=Path, help="write the report here instead of stdout")
    p.add_argument("--figure", type=Path, help="render a PNG summary")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("match", help="FI scores and match reports per question")
    _corpus_args(p)
    p.add_argument("--method", choices=("spatial", "semantic"), default="semantic")
    p.add_argument("--fi-out", required=True, type=Path)
    p.add_argument("--reports", type=Path)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("features", help="build or inspect feature stores")
    fsub = p.add_subparsers(dest="features_command", required=True)
    b = fsub.add_parser("build")
    b.add_argument("--scenes", required=True, type=Path)
    b.add_argument("--questions", type=Path, help="needed for INF")
    _emb_args(b)
    b.add_argument("--variant", choices=("DET", "ORA", "INF"), default="DET")
    b.add_argument("--max-objects", type=int, default=100)
    b.add_argument("--no-coords", action="store_true")
    b.add_argument("--out", required=True, type=Path)
    b.set_defaults(func=cmd_features_build)
    d = fsub.add_parser("dump")
    d.add_argument("store", type=Path)
    d.set_defaults(func=cmd_features_dump)

    p = sub.add_parser("heatmap-relevance", help="object relevance from heat maps")
    p.add_argument("--heatmaps", required=True, type=Path)
    p.add_argument("--scenes", required=True, type=Path)
    p.add_argument("--threshold", type=float, default=0.55)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("train-toy", help="train the toy attention model")
    _corpus_args(p)
    _emb_args(p)
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--method", choices=("none", "attalign", "hint", "scr"))
    p.add_argument("--fi-source", dest="fi_source", choices=("spatial", "semantic"))
    p.add_argument("--variant", choices=("DET", "ORA", "INF"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--augment", choices=("none", "relevant-only"))
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy or FPVG-style grounding of a trained model")
    _corpus_args(p)
    _emb_args(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--fpvg", action="store_true", help="run the ablation-based grounding check")
    p.add_argument("--matching", choices=("spatial", "semantic"), default="semantic")
    p.add_argument("--splits", default="test_id,test_ood")
    p.add_argument("--all", action="store_true", help="use full splits instead of TVG subsets")
    p.add_argument("--max-objects", type=int, default=100)
    p.add_argument("--no-coords", action="store_true")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the seeded Flawed-vs-True VG experiment")
    p.add_argument("--config", type=Path, help="bench config (default: shipped reference)")
    p.add_argument("--seeds", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("convert-gqa", help="convert GQA scene graphs/questions to corpus JSONL")
    p.add_argument("--scene-graphs", required=True, type=Path)
    p.add_argument("--gqa-questions", required=True, type=Path)
    p.add_argument("--split", required=True)
    p.add_argument("--detections", type=Path)
    p.add_argument("--categories", type=Path, help="JSON {attribute: category}")
    p.add_argument("--scenes", required=True, type=Path, help="output scene JSONL")
    p.add_argument("--questions", required=True, type=Path, help="output question JSONL")
    p.set_defaults(func=cmd_convert_gqa)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (CorpusError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return rc if isinstance(rc, int) else 0


if __name__ == "__main__":
    sys.exit(main())
