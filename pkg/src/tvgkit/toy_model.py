"""Single-hop attention VQA model in numpy with hand-written gradients.

Forward pass for a batch of B questions over up to N objects (padded, with
a mask):

    pq     = q Wq                      question projection       (B, h)
    PV     = X Wv                      object projections        (B, N, h)
    U      = tanh(pq + PV)
    s      = U wa                      attention logits          (B, N)
    alpha  = softmax(s over valid objects)
    v      = sum_i alpha_i PV_i
    logits = (pq * v) Wc + bc                                    (B, A)

Object attribution for answer a is grad(logit_a, x_i) . x_i, which reduces
to PV_i . (alpha_i g_v + gs_i (wa * (1 - U_i**2))) with g_v = Wc[:, a] * pq.
HINT and SCR penalize these attributions, so their gradients need a reverse
pass through the attribution itself (`_fi_backward`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PARAM_NAMES = ("Wq", "Wv", "wa", "Wc", "bc")


class ModelError(ValueError):
    pass


@dataclass
class ModelParams:
    Wq: np.ndarray
    Wv: np.ndarray
    wa: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    answers: tuple[str, ...] = ()

    @classmethod
    def init(cls, seed: int, q_dim: int, feat_dim: int, hidden: int, n_answers: int,
             answers: Sequence[str] = (), input_scale: float = 1.0) -> "ModelParams":
        # inputs are (means of) unit-norm embeddings, so unit-variance projection
        # weights keep pq and PV at O(1) instead of O(1/sqrt(dim))
        rng = np.random.default_rng(seed)
        return cls(
            Wq=rng.standard_normal((q_dim, hidden)) * input_scale,
            Wv=rng.standard_normal((feat_dim, hidden)) * input_scale,
            wa=rng.standard_normal(hidden) / np.sqrt(hidden),
            Wc=rng.standard_normal((hidden, n_answers)) / np.sqrt(hidden),
            bc=np.zeros(n_answers),
            answers=tuple(answers),
        )

    @property
    def hidden(self) -> int:
        return self.wa.shape[0]

    @property
    def n_answers(self) -> int:
        return self.bc.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, k).copy() for k in PARAM_NAMES), answers=self.answers)

    def check_finite(self):
        for k in PARAM_NAMES:
            if not np.isfinite(getattr(self, k)).all():
                raise ModelError(f"parameter {k} became non-finite")

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def with_flat(self, theta: np.ndarray) -> "ModelParams":
        out, pos = {}, 0
        for k in PARAM_NAMES:
            a = getattr(self, k)
            out[k] = theta[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return ModelParams(**out, answers=self.answers)


def zeros_like(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


def flat_grads(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in PARAM_NAMES])


@dataclass
class ForwardTrace:
    Q: np.ndarray
    X: np.ndarray
    mask: np.ndarray
    pq: np.ndarray
    PV: np.ndarray
    U: np.ndarray
    attention: np.ndarray
    v: np.ndarray
    f: np.ndarray
    answer_logits: np.ndarray


def pad_batch(matrices: Sequence[np.ndarray], dim: int) -> tuple[np.ndarray, np.ndarray]:
    n = max((len(m) for m in matrices), default=0)
    X = np.zeros((len(matrices), max(n, 1), dim))
    mask = np.zeros((len(matrices), max(n, 1)), dtype=bool)
    for b, m in enumerate(matrices):
        X[b, :len(m)] = m
        mask[b, :len(m)] = True
    return X, mask


def forward(params: ModelParams, Q: np.ndarray, X: np.ndarray, mask: np.ndarray | None = None) -> ForwardTrace:
    """Batched forward; Q is (B, e), X is (B, N, D), mask marks real objects.

    A single question may be passed as Q (e,) and X (N, D).
    """
    if Q.ndim == 1:
        Q, X = Q[None], X[None]
        mask = None if mask is None else mask[None]
    if mask is None:
        mask = np.ones(X.shape[:2], dtype=bool)
    if X.shape[1] == 0 or not mask.any(axis=1).all():
        raise ModelError("every question needs at least one visual object")
    pq = Q @ params.Wq
    PV = X @ params.Wv
    U = np.tanh(pq[:, None, :] + PV)
    s = U @ params.wa
    s = np.where(mask, s, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    alpha = e / e.sum(axis=1, keepdims=True)
    v = np.einsum("bn,bnh->bh", alpha, PV)
    f = pq * v
    logits = f @ params.Wc + params.bc
    return ForwardTrace(Q, X, mask, pq, PV, U, alpha, v, f, logits)


def _backward(params: ModelParams, tr: ForwardTrace, grads: dict, g_logits=None, g_alpha=None,
              g_U=None, g_PV=None, g_pq=None):
    """Accumulate parameter gradients from adjoints of forward intermediates."""
    B, N, h = tr.PV.shape
    g_PV = np.zeros_like(tr.PV) if g_PV is None else g_PV.copy()
    g_pq = np.zeros_like(tr.pq) if g_pq is None else g_pq.copy()
    g_alpha = np.zeros_like(tr.attention) if g_alpha is None else g_alpha.copy()
    g_U = np.zeros_like(tr.U) if g_U is None else g_U.copy()
    if g_logits is not None:
        grads["Wc"] += tr.f.T @ g_logits
        grads["bc"] += g_logits.sum(axis=0)
        g_f = g_logits @ params.Wc.T
        g_pq += g_f * tr.v
        g_v = g_f * tr.pq
        g_alpha += np.einsum("bh,bnh->bn", g_v, tr.PV)
        g_PV += tr.attention[:, :, None] * g_v[:, None, :]
    a = tr.attention
    g_s = a * (g_alpha - (a * g_alpha).sum(axis=1, keepdims=True))
    g_U += g_s[:, :, None] * params.wa
    grads["wa"] += np.einsum("bn,bnh->h", g_s, tr.U)
    g_Z = g_U * (1.0 - tr.U ** 2) * tr.mask[:, :, None]
    g_pq += g_Z.sum(axis=1)
    g_PV += g_Z
    grads["Wv"] += np.einsum("bnd,bnh->dh", tr.X, g_PV)
    grads["Wq"] += tr.Q.T @ g_pq
    return grads


def _fi_parts(params: ModelParams, tr: ForwardTrace, answer: np.ndarray):
    ca = params.Wc[:, answer].T
    gv = ca * tr.pq
    g_alpha = np.einsum("bnh,bh->bn", tr.PV, gv)
    gbar = (tr.attention * g_alpha).sum(axis=1, keepdims=True)
    gs = tr.attention * (g_alpha - gbar)
    T = 1.0 - tr.U ** 2
    R = T * params.wa
    k = (tr.PV * R).sum(axis=2)
    return ca, gv, g_alpha, gbar, gs, T, R, k


def model_fi(tr: ForwardTrace, params: ModelParams, answer_index) -> np.ndarray:
    """Input-gradient x input attribution of each object to the given answer logit."""
    answer = np.atleast_1d(np.asarray(answer_index))
    _, _, g_alpha, _, gs, _, _, k = _fi_parts(params, tr, answer)
    m = tr.attention * g_alpha + gs * k
    return np.where(tr.mask, m, 0.0)


def _fi_backward(params: ModelParams, tr: ForwardTrace, answer: np.ndarray, c: np.ndarray, grads: dict):
    """Gradient of sum(c * model_fi(answer)) w.r.t. the parameters."""
    a = tr.attention
    ca, gv, g_alpha, gbar, gs, T, R, k = _fi_parts(params, tr, answer)
    c = np.where(tr.mask, c, 0.0)
    bar_alpha = c * g_alpha
    bar_galpha = c * a
    bar_gs = c * k
    bar_k = c * gs
    bar_alpha += bar_gs * (g_alpha - gbar)
    bar_galpha += bar_gs * a
    bar_gbar = -(bar_gs * a).sum(axis=1, keepdims=True)
    bar_alpha += bar_gbar * g_alpha
    bar_galpha += bar_gbar * a
    bar_PV = bar_k[:, :, None] * R
    bar_R = bar_k[:, :, None] * tr.PV
    bar_T = bar_R * params.wa
    grads["wa"] += (bar_R * T).sum(axis=(0, 1))
    bar_U = bar_T * (-2.0 * tr.U)
    bar_PV += bar_galpha[:, :, None] * gv[:, None, :]
    bar_gv = np.einsum("bn,bnh->bh", bar_galpha, tr.PV)
    bar_ca = bar_gv * tr.pq
    bar_pq = bar_gv * ca
    np.add.at(grads["Wc"].T, answer, bar_ca)
    return _backward(params, tr, grads, g_alpha=bar_alpha, g_U=bar_U, g_PV=bar_PV, g_pq=bar_pq)


# -- losses ------------------------------------------------------------------
# Each *_terms function returns per-question losses and the adjoints needed
# to backpropagate their batch mean.

def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def task_terms(tr: ForwardTrace, answer: np.ndarray):
    answer = np.atleast_1d(answer)
    A = tr.answer_logits.shape[1]
    if (answer < 0).any() or (answer >= A).any():
        raise ModelError(f"answer index out of range [0, {A})")
    logp = _log_softmax(tr.answer_logits)
    B = len(answer)
    loss = -logp[np.arange(B), answer]
    g = np.exp(logp)
    g[np.arange(B), answer] -= 1.0
    return loss, g


def task_loss(tr: ForwardTrace, answer_index) -> float:
    return float(task_terms(tr, np.atleast_1d(answer_index))[0].mean())


def attalign_terms(tr: ForwardTrace, fi: np.ndarray):
    """1 - cos(attention, fi); zero (and no gradient) where fi is all zero."""
    fi = np.where(tr.mask, np.atleast_2d(fi), 0.0)
    a = tr.attention
    na = np.linalg.norm(a, axis=1)
    nf = np.linalg.norm(fi, axis=1)
    active = nf > 0
    nf_safe = np.where(active, nf, 1.0)
    dot = (a * fi).sum(axis=1)
    cos = dot / (na * nf_safe)
    loss = np.where(active, 1.0 - cos, 0.0)
    g = -(fi / (na * nf_safe)[:, None] - (dot / (na ** 3 * nf_safe))[:, None] * a)
    g = np.where(active[:, None], g, 0.0)
    return loss, g


def attalign_loss(tr: ForwardTrace, fi) -> float:
    return float(attalign_terms(tr, fi)[0].mean())


def hint_terms(tr: ForwardTrace, params: ModelParams, fi: np.ndarray, answer: np.ndarray):
    """Pairwise rank hinge: for fi_i > fi_j, penalize model_fi_j - model_fi_i > 0."""
    answer = np.atleast_1d(answer)
    fi = np.atleast_2d(fi)
    m = model_fi(tr, params, answer)
    valid = tr.mask[:, :, None] & tr.mask[:, None, :]
    pairs = (fi[:, :, None] > fi[:, None, :]) & valid  # [b, i, j]: i ranked above j
    diff = m[:, None, :] - m[:, :, None]  # m_j - m_i
    active = pairs & (diff > 0)
    loss = np.where(active, diff, 0.0).sum(axis=(1, 2))
    c = active.sum(axis=1) - active.sum(axis=2)
    return loss, c.astype(np.float64)


def hint_loss(tr: ForwardTrace, params: ModelParams, fi, answer_index) -> float:
    return float(hint_terms(tr, params, fi, answer_index)[0].mean())


@dataclass
class SCRState:
    # questions lacking a relevant or an irrelevant object
    undefined: int = 0


def scr_terms(tr: ForwardTrace, params: ModelParams, relevant: np.ndarray, answer: np.ndarray,
              state: SCRState | None = None):
    """Self-critical loss on a boolean relevant-object mask.

    term1 sums hinges of irrelevant attributions over the strongest relevant
    one (r*); term2 penalizes r* scoring higher for the most likely wrong
    answer than for the gold answer.
    """
    answer = np.atleast_1d(answer)
    relevant = np.atleast_2d(relevant) & tr.mask
    irrelevant = ~relevant & tr.mask
    B, N = relevant.shape
    defined = relevant.any(axis=1) & irrelevant.any(axis=1)
    if state is not None:
        state.undefined += int((~defined).sum())
    m_gt = model_fi(tr, params, answer)
    r_star = np.argmax(np.where(relevant, m_gt, -np.inf), axis=1)
    rows = np.arange(B)
    m_r = m_gt[rows, r_star]
    h1 = np.where(irrelevant, m_gt - m_r[:, None], 0.0)
    act1 = irrelevant & (h1 > 0)
    term1 = np.where(act1, h1, 0.0).sum(axis=1)

    probs = tr.answer_logits.copy()
    probs[rows, answer] = -np.inf
    wrong = np.argmax(probs, axis=1)
    m_wrong = model_fi(tr, params, wrong)
    h2 = m_wrong[rows, r_star] - m_r
    act2 = h2 > 0
    term2 = np.where(act2, h2, 0.0)

    loss = np.where(defined, term1 + term2, 0.0)
    c_gt = act1.astype(np.float64)
    c_gt[rows, r_star] -= act1.sum(axis=1) + act2
    c_wrong = np.zeros((B, N))
    c_wrong[rows, r_star] += act2
    c_gt *= defined[:, None]
    c_wrong *= defined[:, None]
    return loss, c_gt, c_wrong, wrong


def scr_loss(tr: ForwardTrace, params: ModelParams, relevant, answer_index) -> float:
    return float(scr_terms(tr, params, relevant, answer_index)[0].mean())


METHODS = ("none", "attalign", "hint", "scr")


def loss_and_grads(params: ModelParams, tr: ForwardTrace, answer: np.ndarray, method: str = "none",
                   fi: np.ndarray | None = None, relevant: np.ndarray | None = None, lam: float = 1.0,
                   scr_state: SCRState | None = None):
    """Batch-mean task loss plus lam * auxiliary loss, and its gradients."""
    B = len(answer)
    grads = zeros_like(params)
    task, g_logits = task_terms(tr, answer)
    total = task.mean()
    g_alpha = None
    fi_passes = []
    if method == "none" or lam == 0.0:
        pass
    elif method == "attalign":
        aux, g = attalign_terms(tr, fi)
        total = total + lam * aux.mean()
        g_alpha = g * (lam / B)
    elif method == "hint":
        aux, c = hint_terms(tr, params, fi, answer)
        total = total + lam * aux.mean()
        fi_passes.append((answer, c * (lam / B)))
    elif method == "scr":
        aux, c_gt, c_wrong, wrong = scr_terms(tr, params, relevant, answer, scr_state)
        total = total + lam * aux.mean()
        fi_passes.append((answer, c_gt * (lam / B)))
        fi_passes.append((wrong, c_wrong * (lam / B)))
    else:
        raise ValueError(f"unknown method {method!r}")
    _backward(params, tr, grads, g_logits=g_logits / B, g_alpha=g_alpha)
    for ans, c in fi_passes:
        _fi_backward(params, tr, ans, c, grads)
    return float(total), grads


def fi_functional_grads(params: ModelParams, tr: ForwardTrace, answer, c: np.ndarray) -> dict:
    """Gradient of sum(c * model_fi(answer)); exposed for gradient checking."""
    return _fi_backward(params, tr, np.atleast_1d(answer), np.atleast_2d(c), zeros_like(params))


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"TVGM"
CKPT_VERSION = 1


def save_params(params: ModelParams, path) -> None:
    """Binary checkpoint: magic, version, answer list, then each array as f64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(params.answers)))
        for a in params.answers:
            raw = a.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        for k in PARAM_NAMES:
            arr = np.ascontiguousarray(getattr(params, k), dtype="<f8")
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ModelError("not a model checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise ModelError(f"unsupported checkpoint version {version}")
    (n_ans,) = struct.unpack_from("<I", data, 8)
    pos = 12
    answers = []
    for _ in range(n_ans):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        answers.append(data[pos:pos + ln].decode("utf-8"))
        pos += ln
    arrays = {}
    for k in PARAM_NAMES:
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays[k] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return ModelParams(**arrays, answers=tuple(answers))
