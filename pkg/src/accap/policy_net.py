"""Feature-conditioned LSTM policy over next words.

The image feature enters once, as the input of a priming step from a zero
state; thereafter each step consumes the embedding of the previous word and
emits a softmax over the vocabulary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BOS, EOS, FEATURE_DIM, PAD
from .numerics import (
    LOG_FLOOR,
    LstmCellParams,
    ShapeError,
    floored_nll_grad,
    lstm_sequence,
    lstm_sequence_backward,
    lstm_step_backward,
    lstm_step_cached,
    softmax,
)

INIT_SCALE = 0.08


def uniform_params(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator, scale: float) -> dict:
    # sorted so that adding a parameter never reshuffles the others' draws
    return {k: rng.uniform(-scale, scale, size=shapes[k]) for k in sorted(shapes)}


@dataclass
class PolicyNet:
    params: dict[str, np.ndarray]
    vocab_size: int
    d_h: int
    d_e: int
    feat_dim: int = FEATURE_DIM

    @staticmethod
    def shapes(vocab_size: int, d_h: int, d_e: int, feat_dim: int = FEATURE_DIM) -> dict:
        return {
            "W_x": (d_e, feat_dim),
            "embed": (vocab_size, d_e),
            "lstm.W_ih": (4 * d_h, d_e),
            "lstm.W_hh": (4 * d_h, d_h),
            "lstm.b": (4 * d_h,),
            "W_o": (vocab_size, d_h),
            "b_o": (vocab_size,),
        }

    @classmethod
    def init(cls, vocab_size: int, d_h: int = 64, d_e: int | None = None, *, seed: int = 0,
             scale: float = INIT_SCALE, feat_dim: int = FEATURE_DIM) -> "PolicyNet":
        d_e = d_h if d_e is None else d_e
        rng = np.random.default_rng(seed)
        return cls(uniform_params(cls.shapes(vocab_size, d_h, d_e, feat_dim), rng, scale),
                   vocab_size, d_h, d_e, feat_dim)

    @classmethod
    def zeros(cls, vocab_size: int, d_h: int, d_e: int | None = None, feat_dim: int = FEATURE_DIM) -> "PolicyNet":
        d_e = d_h if d_e is None else d_e
        shapes = cls.shapes(vocab_size, d_h, d_e, feat_dim)
        return cls({k: np.zeros(s) for k, s in shapes.items()}, vocab_size, d_h, d_e, feat_dim)

    def __post_init__(self):
        expected = self.shapes(self.vocab_size, self.d_h, self.d_e, self.feat_dim)
        for k, s in expected.items():
            if k not in self.params or self.params[k].shape != s:
                got = None if k not in self.params else self.params[k].shape
                raise ShapeError(f"PolicyNet.{k}: expected {s}, got {got}")

    @property
    def cell(self) -> LstmCellParams:
        return LstmCellParams.from_params(self.params, "lstm.")


@dataclass
class DecodeState:
    feature: np.ndarray
    prefix: tuple[int, ...]
    h: np.ndarray
    c: np.ndarray
    t: int = field(default=0)


def _check_feature(net: PolicyNet, feature: np.ndarray) -> None:
    if feature.shape[-1] != net.feat_dim:
        raise ShapeError(f"feature{feature.shape} does not match W_x{net.params['W_x'].shape}")


def prime(net: PolicyNet, features: np.ndarray):
    """Priming step from a zero state on ``W_x @ feature``; batched."""
    _check_feature(net, features)
    x0 = features @ net.params["W_x"].T
    zeros = np.zeros(x0.shape[:-1] + (net.d_h,))
    return lstm_step_cached(net.cell, zeros, zeros, x0)


def init_state(net: PolicyNet, feature: np.ndarray) -> DecodeState:
    feature = np.asarray(feature, dtype=np.float64)
    h, c, _ = prime(net, feature)
    return DecodeState(feature, (), h, c, 0)


def advance(net: PolicyNet, h: np.ndarray, c: np.ndarray, words):
    """Feed ``words`` (scalar or batch) and return ``(probs, h, c)``."""
    x = net.params["embed"][words]
    h, c, _ = lstm_step_cached(net.cell, h, c, x)
    probs = softmax(h @ net.params["W_o"].T + net.params["b_o"])
    return probs, h, c


def policy_step(net: PolicyNet, state: DecodeState, prev_word: int):
    """Feed ``prev_word`` and return the next-word distribution and new state.

    Feeding a word other than BOS commits it to the state's prefix.
    """
    if not 0 <= prev_word < net.vocab_size:
        raise ValueError(f"token id {prev_word} outside vocabulary of size {net.vocab_size}")
    probs, h, c = advance(net, state.h, state.c, prev_word)
    prefix = state.prefix if prev_word == BOS and not state.prefix else state.prefix + (prev_word,)
    return probs, DecodeState(state.feature, prefix, h, c, len(prefix))


def pad_sequences(seqs: Sequence[Sequence[int]]):
    """Right-pad action sequences; returns ``(inputs, targets, mask)`` of shape
    (B, T) with inputs shifted right behind BOS."""
    T = max(len(s) for s in seqs)
    B = len(seqs)
    inputs = np.full((B, T), PAD, dtype=np.int64)
    targets = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T))
    for b, s in enumerate(seqs):
        n = len(s)
        targets[b, :n] = s
        inputs[b, 0] = BOS
        inputs[b, 1:n] = s[: n - 1]
        mask[b, :n] = 1.0
    return inputs, targets, mask


def _forward(net: PolicyNet, features: np.ndarray, inputs: np.ndarray):
    h0, c0, cache0 = prime(net, features)
    xs = net.params["embed"][inputs.T]
    hs, _, caches = lstm_sequence(net.cell, xs, h0, c0)
    probs = softmax(hs @ net.params["W_o"].T + net.params["b_o"])
    return probs, hs, caches, cache0


def log_probs(net: PolicyNet, features: np.ndarray, seqs: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Per-step ``log q(a_t | s_t)`` for each action sequence (no gradient)."""
    features = np.atleast_2d(features)
    inputs, targets, mask = pad_sequences(seqs)
    probs, *_ = _forward(net, features, inputs)
    T = inputs.shape[1]
    picked = probs[np.arange(T)[:, None], np.arange(len(seqs))[None, :], targets.T]
    return [np.log(picked[: len(s), b]) for b, s in enumerate(seqs)]


def weighted_nll(net: PolicyNet, features: np.ndarray, seqs: Sequence[Sequence[int]],
                 weights: Sequence[Sequence[float]] | None = None, entropy_weight: float = 0.0):
    """``sum_{b,t} w[b,t] * -log(q(a_t|s_t) + floor)`` with gold/sampled inputs
    fed back, and its gradient over every parameter (BPTT).

    With unit weights this is the teacher-forced loss; with advantage weights
    it is the negated policy-gradient surrogate. A positive
    ``entropy_weight`` subtracts that multiple of the summed per-step policy
    entropy.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    inputs, targets, mask = pad_sequences(seqs)
    B, T = inputs.shape
    W = mask.copy()
    if weights is not None:
        for b, w in enumerate(weights):
            W[b, : len(w)] = w
    P = net.params
    probs, hs, caches, cache0 = _forward(net, features, inputs)
    tgt = targets.T  # (T, B)
    rows_t, rows_b = np.meshgrid(np.arange(T), np.arange(B), indexing="ij")
    pt = probs[rows_t, rows_b, tgt]
    loss = float(np.sum(W.T * -np.log(pt + LOG_FLOOR)))

    dlogits = floored_nll_grad(probs.reshape(T * B, -1), tgt.reshape(-1)).reshape(probs.shape)
    dlogits *= W.T[..., None]
    if entropy_weight:
        logp = np.log(np.maximum(probs, 1e-300))
        ent = -np.sum(probs * logp, axis=-1)  # (T, B)
        loss -= entropy_weight * float(np.sum(mask.T * ent))
        dlogits += entropy_weight * mask.T[..., None] * probs * (logp + ent[..., None])
    grads = {
        "W_o": np.einsum("tbv,tbh->vh", dlogits, hs),
        "b_o": dlogits.sum(axis=(0, 1)),
    }
    dhs = dlogits @ P["W_o"]
    cell = net.cell
    dWi, dWh, db, dxs, dh0, dc0 = lstm_sequence_backward(cell, caches, dhs)
    gWi, gWh, gb, dx0, _, _ = lstm_step_backward(cell, cache0, dh0, dc0)
    grads["lstm.W_ih"] = dWi + gWi
    grads["lstm.W_hh"] = dWh + gWh
    grads["lstm.b"] = db + gb
    d_embed = np.zeros_like(P["embed"])
    np.add.at(d_embed, inputs.T, dxs)
    grads["embed"] = d_embed
    grads["W_x"] = dx0.T @ features
    return loss, grads


def teacher_forced_loss(net: PolicyNet, feature: np.ndarray, reference: Sequence[int]):
    """Summed cross entropy of ``reference`` (EOS-terminated) under gold-prefix
    feeding; returns ``(loss, grads)``."""
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    if reference[-1] != EOS:
        raise ValueError("reference must be EOS-terminated")
    return weighted_nll(net, feature, [list(reference)])
