import numpy as np
import pytest
from hypothesis import settings

from tvgkit.geometry import BoundingBox
from tvgkit.scene import Corpus, EmbeddingTable, ImageRecord, QuestionRecord, SceneObject

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def obj(oid, box, name, **attrs):
    return SceneObject(oid, BoundingBox(*box), name, tuple(attrs.items()))


def make_image(image_id="img1", gt=(), dets=(), w=100.0, h=100.0):
    return ImageRecord(image_id, w, h, tuple(gt), tuple(dets))


@pytest.fixture(scope="session")
def emb():
    rng = np.random.default_rng(7)
    words = ["cow", "horse", "dog", "brown", "white", "black", "small", "large", "wood", "metal",
             "fire", "hydrant", "red", "what", "is", "the", "color", "of"]
    return EmbeddingTable({w: rng.standard_normal(6) for w in words}, 6)


@pytest.fixture
def tiny_corpus():
    """Two images, three questions: one TVG, one misrecognized, one missing."""
    im1 = make_image(
        "img1",
        gt=[obj("g1", (10, 10, 40, 40), "cow", color="brown"),
            obj("g2", (60, 60, 90, 90), "dog", color="white")],
        dets=[obj("d1", (11, 11, 40, 41), "horse", color="brown"),
              obj("d2", (60, 61, 90, 90), "dog", color="white", size="small"),
              obj("d3", (0, 0, 5, 5), "cow", color="black")],
    )
    im2 = make_image(
        "img2",
        gt=[obj("g3", (20, 20, 50, 50), "fire hydrant", color="red", material="metal"),
            obj("g4", (70, 10, 95, 30), "cow", color="black")],
        dets=[obj("d4", (70, 10, 95, 31), "cow", color="black")],
    )
    qs = [
        QuestionRecord("q1", "img1", ("what", "color", "is", "the", "dog"), "white", None, ("g2",), "train"),
        QuestionRecord("q2", "img1", ("what", "color", "is", "the", "cow"), "brown", None, ("g1",), "train"),
        QuestionRecord("q3", "img2", ("what", "is", "the", "hydrant"), "red", None, ("g3", "g4"), "test_id"),
    ]
    return Corpus([im1, im2], qs)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
