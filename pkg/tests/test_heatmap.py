import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_image, obj
from tvgkit.geometry import BoundingBox
from tvgkit.heatmap import (
    HeatMapError,
    align_to_image,
    importance_score,
    relevant_objects,
    resample,
)
from tvgkit.scene import HeatMap


def oracle_score(grid, box):
    """Cell-by-cell classification with explicit loops."""
    inside, outside = [], []
    h, w = grid.shape
    for i in range(h):
        for j in range(w):
            cx, cy = j + 0.5, i + 0.5
            if box.x1 <= cx < box.x2 and box.y1 <= cy < box.y2:
                inside.append(grid[i, j])
            else:
                outside.append(grid[i, j])
    e_in = sum(inside) / len(inside)
    e_out = sum(outside) / len(outside)
    return 0.0 if e_in + e_out == 0 else e_in / (e_in + e_out)


def hm(grid):
    return HeatMap("img1", "q", np.asarray(grid, float))


def test_four_by_four():
    g = np.zeros((4, 4))
    g[0:2, 0:2] = 1.0
    # inside mean 1, outside mean 0
    assert importance_score(hm(g), BoundingBox(0, 0, 2, 2)) == 1.0
    g[3, 3] = 12.0
    # outside mean 12/12 = 1
    assert importance_score(hm(g), BoundingBox(0, 0, 2, 2)) == 0.5
    assert importance_score(hm(g), BoundingBox(1, 1, 3, 3)) == pytest.approx(oracle_score(g, BoundingBox(1, 1, 3, 3)))


def test_uniform_is_half():
    for shape in ((3, 3), (4, 7), (24, 32)):
        assert importance_score(hm(np.full(shape, 0.37)), BoundingBox(0.2, 0.2, 2.1, 1.9)) == 0.5


def test_center_containment():
    g = np.arange(16.0).reshape(4, 4)
    # covers centers 0.5 and 1.5 only: 1.5 < 1.6, 2.5 >= 1.6
    a = importance_score(hm(g), BoundingBox(0, 0, 1.6, 1.6))
    b = importance_score(hm(g), BoundingBox(0, 0, 2.5, 2.5))
    assert a == b
    c = importance_score(hm(g), BoundingBox(0, 0, 2.5001, 2.5001))
    assert c != a


def test_degenerate_boxes_raise():
    g = np.ones((4, 4))
    with pytest.raises(HeatMapError):
        importance_score(hm(g), BoundingBox(0.6, 0.6, 0.9, 0.9))
    with pytest.raises(HeatMapError):
        importance_score(hm(g), BoundingBox(0, 0, 4, 4))


def test_all_zero_map():
    assert importance_score(hm(np.zeros((3, 3))), BoundingBox(0, 0, 1, 1)) == 0.0


@st.composite
def grid_and_box(draw):
    h, w = draw(st.integers(2, 8)), draw(st.integers(2, 8))
    grid = draw(arrays(np.float64, (h, w), elements=st.floats(0, 100, allow_nan=False)))
    x1 = draw(st.integers(0, w - 1))
    y1 = draw(st.integers(0, h - 1))
    x2 = draw(st.integers(x1 + 1, w))
    y2 = draw(st.integers(y1 + 1, h))
    if (x2 - x1) * (y2 - y1) == h * w:
        # leave at least one outside column
        x2 -= 1
    return grid, BoundingBox(x1, y1, x2, y2)


@given(grid_and_box())
def test_matches_oracle(gb):
    grid, box = gb
    assert abs(importance_score(hm(grid), box) - oracle_score(grid, box)) < 1e-9


@given(grid_and_box(), st.floats(1e-3, 1e3))
def test_scale_invariant(gb, c):
    grid, box = gb
    assert abs(importance_score(hm(grid * c), box) - importance_score(hm(grid), box)) < 1e-12


@given(grid_and_box())
def test_score_in_unit_interval(gb):
    grid, box = gb
    assert 0.0 <= importance_score(hm(grid), box) <= 1.0


@given(st.integers(1, 6), st.integers(2, 6), st.floats(0.1, 10), st.floats(0.1, 10))
def test_sum_rule_on_halves(half_w, h, left, right):
    # two constant halves: each side's inside mean is the other's outside mean
    g = np.concatenate([np.full((h, half_w), left), np.full((h, half_w), right)], axis=1)
    a = importance_score(hm(g), BoundingBox(0, 0, half_w, h))
    b = importance_score(hm(g), BoundingBox(half_w, 0, 2 * half_w, h))
    assert a + b == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 3))
def test_swallowing_hot_region_never_hurts(i, j, grow):
    g = np.zeros((10, 10))
    g[i:i + 2, j:j + 2] = 5.0
    small = BoundingBox(j, i, j + 2, i + 2)
    big = BoundingBox(max(j - grow, 0), max(i - grow, 0), min(j + 2 + grow, 10), min(i + 2 + grow, 10))
    assert importance_score(hm(g), big) >= importance_score(hm(g), small) - 1e-12


def test_threshold_is_strict():
    g = np.zeros((1, 4))
    g[0, 0] = 0.55
    g[0, 1:] = 0.45
    image = make_image(gt=[obj("a", (0, 0, 1, 1), "cow")], w=4, h=1)
    r = relevant_objects(hm(g), image)
    assert r.scores["a"] == pytest.approx(0.55)
    s = r.scores["a"]
    assert r.relevant["a"] == (s > 0.55)
    assert relevant_objects(hm(g), image, threshold=0.54).relevant["a"]
    assert not relevant_objects(hm(g), image, threshold=0.56).relevant["a"]


def test_exact_threshold_not_relevant():
    # 0.55 / (0.55 + 0.45) is exactly representable as the computed score
    from tvgkit.heatmap import ObjectImportance
    oi = ObjectImportance("q", {"a": 0.55, "b": 0.5500001, "c": None}, 0.55)
    assert oi.relevant == {"a": False, "b": True, "c": False}
    assert oi.relevant_ids == ["b"]


def test_resample_constant_and_identity():
    g = np.full((3, 4), 2.5)
    assert np.allclose(resample(g, 30, 40), 2.5)
    r = np.random.default_rng(0).random((3, 4))
    assert resample(r, 3, 4) is r
    up = resample(r, 6, 8)
    assert up.min() >= r.min() - 1e-12 and up.max() <= r.max() + 1e-12


def test_align_checks_aspect():
    image = make_image(w=640, h=480)
    out = align_to_image(hm(np.ones((24, 32))), image)
    assert out.grid.shape == (480, 640)
    with pytest.raises(HeatMapError, match="aspect"):
        align_to_image(hm(np.ones((32, 32))), image)


def test_relevant_objects_on_generated_maps():
    from tvgkit.synth import GenConfig, generate
    b = generate(GenConfig(seed=1, n_images=20, emb_dim=4))
    hits = 0
    for h in b.heatmaps:
        q = next(q for q in b.corpus.questions if q.question_id == h.question_id)
        r = relevant_objects(h, b.corpus.image(h.image_id))
        hits += q.relevant_gt_ids[0] in r.relevant_ids
        # the blob centers on the target object, so it scores highest
        best = max((s, oid) for oid, s in r.scores.items() if s is not None)[1]
        assert best == q.relevant_gt_ids[0]
    assert hits == len(b.heatmaps)


def test_wrong_image_rejected():
    with pytest.raises(HeatMapError):
        relevant_objects(HeatMap("other", "q", np.ones((2, 2))), make_image())
