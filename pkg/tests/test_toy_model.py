import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradcheck import KINDS, check
from tvgkit.toy_model import (
    ModelError,
    ModelParams,
    SCRState,
    attalign_loss,
    forward,
    hint_loss,
    load_params,
    loss_and_grads,
    model_fi,
    pad_batch,
    save_params,
    scr_loss,
    scr_terms,
    task_loss,
)


def setup(seed=0, N=4, e=3, D=4, h=5, A=3):
    rng = np.random.default_rng(seed)
    p = ModelParams.init(seed, e, D, h, A, [f"a{i}" for i in range(A)])
    return p, rng.standard_normal(e), rng.standard_normal((N, D))


def test_regression_locked_outputs():
    p = ModelParams.init(42, 3, 4, 5, 3)
    rng = np.random.default_rng(5)
    tr = forward(p, rng.standard_normal(3), rng.standard_normal((4, 4)))
    assert np.allclose(tr.answer_logits[0], [-0.3433633655844857, 0.09933184456192393, -0.24007478453890327],
                       rtol=0, atol=1e-12)
    assert np.allclose(tr.attention[0], [0.1089669230221635, 0.2615701411754045, 0.3371703398262651,
                                         0.292292595976167], rtol=0, atol=1e-12)


def test_single_object_gets_full_attention():
    p, q, X = setup(N=1)
    tr = forward(p, q, X)
    assert tr.attention.tolist() == [[1.0]]
    assert np.allclose(tr.v, X @ p.Wv)


def test_no_objects_rejected():
    p, q, _ = setup()
    with pytest.raises(ModelError):
        forward(p, q, np.zeros((0, 4)))


def test_duplicate_rows_share_attention():
    p, q, X = setup()
    X[2] = X[0]
    a = forward(p, q, X).attention[0]
    assert a[0] == a[2]


def test_zero_weights_give_uniform_answer():
    p, q, X = setup(A=4)
    p.Wc[:] = 0
    tr = forward(p, q, X)
    assert task_loss(tr, 1) == pytest.approx(np.log(4))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_attention_normalized_under_padding(seed, n):
    p, q, _ = setup(seed)
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((k, 4)) for k in (n, 1, 3)]
    X, mask = pad_batch(mats, 4)
    tr = forward(p, np.tile(q, (3, 1)), X, mask)
    assert np.allclose(tr.attention.sum(axis=1), 1.0)
    assert (tr.attention[~mask] == 0).all()
    # padding does not change a question's outputs
    solo = forward(p, q, mats[1])
    assert np.allclose(solo.answer_logits[0], tr.answer_logits[1])


@given(st.integers(0, 10_000))
def test_loss_ranges(seed):
    p, q, X = setup(seed)
    rng = np.random.default_rng(seed)
    tr = forward(p, q, X)
    fi = rng.random(4)
    rel = fi > 0.5
    assert 0.0 <= attalign_loss(tr, fi) <= 2.0 + 1e-12
    assert hint_loss(tr, p, fi, 0) >= 0.0
    assert scr_loss(tr, p, rel, 0) >= 0.0


def test_attalign_zero_when_aligned_or_empty():
    p, q, X = setup()
    tr = forward(p, q, X)
    assert attalign_loss(tr, tr.attention[0] * 3.0) == pytest.approx(0.0, abs=1e-12)
    assert attalign_loss(tr, np.zeros(4)) == 0.0


def test_hint_example():
    p, q, X = setup(3)
    tr = forward(p, q, X)
    m = model_fi(tr, p, 1)[0]
    # ranking that agrees with the model costs nothing
    assert hint_loss(tr, p, m, 1) == 0.0
    # the reversed ranking pays every pairwise gap once
    expected = sum(abs(m[i] - m[j]) for i in range(4) for j in range(i + 1, 4) if m[i] != m[j])
    assert hint_loss(tr, p, -m, 1) == pytest.approx(expected)


def test_scr_example():
    p, q, X = setup(4)
    tr = forward(p, q, X)
    rel = np.array([True, False, True, False])
    gold = 2
    m = model_fi(tr, p, gold)[0]
    r = max((m[i], i) for i in range(4) if rel[i])[1]
    term1 = sum(max(m[j] - m[r], 0.0) for j in range(4) if not rel[j])
    logits = tr.answer_logits[0].copy()
    logits[gold] = -np.inf
    wrong = int(np.argmax(logits))
    term2 = max(model_fi(tr, p, wrong)[0][r] - m[r], 0.0)
    assert scr_loss(tr, p, rel, gold) == pytest.approx(term1 + term2)


def test_scr_undefined_counted():
    p, q, X = setup()
    tr = forward(p, q, X)
    state = SCRState()
    loss, *_ = scr_terms(tr, p, np.ones((1, 4), bool), np.array([0]), state)
    assert loss[0] == 0.0 and state.undefined == 1


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    for trial in range(20):
        assert check(trial, kind) < 1e-4


@pytest.mark.parametrize("method", ["attalign", "hint", "scr"])
def test_zero_lambda_is_task_only(method):
    p, q, X = setup(2)
    tr = forward(p, q, X)
    fi = np.array([[0.9, 0.1, 0.7, 0.0]])
    base_loss, base = loss_and_grads(p, tr, np.array([1]))
    loss, g = loss_and_grads(p, tr, np.array([1]), method, fi=fi, relevant=fi > 0.5, lam=0.0)
    assert loss == base_loss
    for k in base:
        assert np.array_equal(g[k], base[k])


def test_init_is_deterministic():
    a = ModelParams.init(5, 3, 4, 5, 3)
    b = ModelParams.init(5, 3, 4, 5, 3)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), ModelParams.init(6, 3, 4, 5, 3).flat())


def test_checkpoint_round_trip(tmp_path):
    p, _, _ = setup()
    save_params(p, tmp_path / "m.bin")
    back = load_params(tmp_path / "m.bin")
    assert back.answers == p.answers
    assert np.array_equal(back.flat(), p.flat())
    save_params(back, tmp_path / "m2.bin")
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX")
    with pytest.raises(ModelError):
        load_params(tmp_path / "bad.bin")


def test_non_finite_params_detected():
    p, _, _ = setup()
    p.Wc[0, 0] = np.nan
    with pytest.raises(ModelError):
        p.check_finite()
