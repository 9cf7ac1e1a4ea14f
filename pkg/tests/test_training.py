import numpy as np
import pytest

from tvgkit.synth import GenConfig, generate
from tvgkit.toy_model import ModelError
from tvgkit.training import (
    FeatureSource,
    TrainConfig,
    answer_vocab,
    build_samples,
    evaluate,
    load_config,
    relevant_only,
    select_training,
    train,
)


@pytest.fixture(scope="module")
def bench():
    return generate(GenConfig(seed=0, n_images=200, emb_dim=16, ood_skew=0.6))


def quick(**kw):
    return TrainConfig(**{"epochs": 4, "hidden": 16, "lr": 0.1, **kw})


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nhidden = 8\nlr=0.2\nwith_coords=false\nmethod=hint\n")
    cfg = load_config(p, seed=3, method=None)
    assert (cfg.hidden, cfg.lr, cfg.with_coords, cfg.method, cfg.seed) == (8, 0.2, False, "hint", 3)
    assert load_config(tmp_path / "c.cfg").to_text() == cfg.to_text().replace("seed=3", "seed=0")
    p.write_text("bogus=1\n")
    with pytest.raises(ValueError, match="bogus"):
        load_config(p)
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"method": "magic"})


def test_training_filter_keeps_train_only(bench):
    qs = select_training(bench.corpus, quick())
    assert qs and all(q.split == "train" for q in qs)
    assert len(qs) < len(bench.corpus.split("train"))


def test_samples_and_relevance(bench):
    src = FeatureSource(bench.corpus, bench.embeddings)
    qs = select_training(bench.corpus, quick())
    answers = answer_vocab(bench.corpus)
    sem = build_samples(src, qs, "INF", "semantic", answers)
    # infused samples always carry a relevant row
    assert all(s.relevant.any() for s in sem)
    spa = build_samples(src, qs, "DET", "spatial", answers)
    assert all(s.fi.max() > 0.5 for s in spa)
    ro = relevant_only(sem)
    assert all(s.relevant.all() for s in ro)


@pytest.mark.parametrize("method,variant,fi", [("none", "DET", "spatial"), ("attalign", "INF", "semantic"),
                                               ("hint", "DET", "spatial"), ("scr", "INF", "semantic")])
def test_training_runs_and_is_deterministic(bench, method, variant, fi):
    cfg = quick(method=method, variant=variant, fi_source=fi)
    a = train(bench.corpus, bench.embeddings, cfg)
    b = train(bench.corpus, bench.embeddings, cfg)
    assert np.array_equal(a.params.flat(), b.params.flat())
    assert a.log == b.log
    assert 1 <= a.best_epoch <= cfg.epochs
    assert a.log[a.best_epoch - 1]["dev_acc"] == max(r["dev_acc"] for r in a.log)


def test_learns_beyond_chance(bench):
    res = train(bench.corpus, bench.embeddings, quick(epochs=20, batch_size=32, method="attalign",
                                                       variant="INF", fi_source="semantic", lam=5.0))
    src = FeatureSource(bench.corpus, bench.embeddings)
    test = bench.corpus.split("test_id")
    most_common = max(sum(q.answer == a for q in test) for a in {q.answer for q in test}) / len(test)
    assert evaluate(res.params, src, test) > most_common + 0.2


def test_log_written(bench, tmp_path):
    res = train(bench.corpus, bench.embeddings, quick(epochs=2))
    res.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,dev_acc" and len(lines) == 3


def test_augment_relevant_only(bench):
    base = train(bench.corpus, bench.embeddings, quick(epochs=1, variant="INF", fi_source="semantic"))
    aug = train(bench.corpus, bench.embeddings, quick(epochs=1, variant="INF", fi_source="semantic",
                                                      augment="relevant-only"))
    assert aug.n_train > base.n_train


def test_nothing_to_train_on():
    b = generate(GenConfig(seed=0, n_images=20, emb_dim=4, p_miss=1.0, p_misrecognize=0.0))
    with pytest.raises(ModelError):
        train(b.corpus, b.embeddings, quick())
