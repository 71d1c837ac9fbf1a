"""State-value network: linear image code + LSTM prefix code -> tanh MLP head.

The head output is tanh-bounded so estimates share the [-1, 1] range of the
cosine reward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FEATURE_DIM, PAD
from .numerics import LstmCellParams, ShapeError, lstm_sequence, lstm_sequence_backward, lstm_step_cached
from .policy_net import INIT_SCALE, uniform_params


@dataclass
class ValueNet:
    params: dict[str, np.ndarray]
    vocab_size: int
    d_h: int
    d_e: int
    hidden_layers: int = 2
    feat_dim: int = FEATURE_DIM

    @staticmethod
    def shapes(vocab_size, d_h, d_e, hidden_layers=2, feat_dim=FEATURE_DIM) -> dict:
        s = {
            "W_img": (d_h, feat_dim),
            "b_img": (d_h,),
            "embed": (vocab_size, d_e),
            "lstm.W_ih": (4 * d_h, d_e),
            "lstm.W_hh": (4 * d_h, d_h),
            "lstm.b": (4 * d_h,),
        }
        width_in = 2 * d_h
        for i in range(hidden_layers):
            s[f"head{i}.W"] = (d_h, width_in)
            s[f"head{i}.b"] = (d_h,)
            width_in = d_h
        s["out.W"] = (1, width_in)
        s["out.b"] = (1,)
        return s

    @classmethod
    def init(cls, vocab_size, d_h=64, d_e=None, *, hidden_layers=2, seed=0, scale=INIT_SCALE,
             feat_dim=FEATURE_DIM) -> "ValueNet":
        d_e = d_h if d_e is None else d_e
        rng = np.random.default_rng(seed)
        shapes = cls.shapes(vocab_size, d_h, d_e, hidden_layers, feat_dim)
        return cls(uniform_params(shapes, rng, scale), vocab_size, d_h, d_e, hidden_layers, feat_dim)

    @classmethod
    def zeros(cls, vocab_size, d_h, d_e=None, *, hidden_layers=2, feat_dim=FEATURE_DIM) -> "ValueNet":
        d_e = d_h if d_e is None else d_e
        shapes = cls.shapes(vocab_size, d_h, d_e, hidden_layers, feat_dim)
        return cls({k: np.zeros(s) for k, s in shapes.items()}, vocab_size, d_h, d_e, hidden_layers, feat_dim)

    def __post_init__(self):
        expected = self.shapes(self.vocab_size, self.d_h, self.d_e, self.hidden_layers, self.feat_dim)
        if set(expected) != set(self.params):
            raise ShapeError(f"ValueNet parameter names {sorted(self.params)} != {sorted(expected)}")
        for k, s in expected.items():
            if self.params[k].shape != s:
                raise ShapeError(f"ValueNet.{k}: expected {s}, got {self.params[k].shape}")

    @property
    def cell(self) -> LstmCellParams:
        return LstmCellParams.from_params(self.params, "lstm.")


def _check_tokens(net: ValueNet, seqs) -> None:
    for s in seqs:
        for w in s:
            if not 0 <= w < net.vocab_size:
                raise ValueError(f"token id {w} outside vocabulary of size {net.vocab_size}")


def image_code(net: ValueNet, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != net.feat_dim:
        raise ShapeError(f"feature{features.shape} does not match W_img{net.params['W_img'].shape}")
    return features @ net.params["W_img"].T + net.params["b_img"]


def head(net: ValueNet, img: np.ndarray, summary: np.ndarray):
    """MLP head on ``[img, summary]``; returns ``(values, activations)``."""
    P = net.params
    a = np.concatenate([np.broadcast_to(img, summary.shape), summary], axis=-1)
    acts = [a]
    for i in range(net.hidden_layers):
        a = np.tanh(a @ P[f"head{i}.W"].T + P[f"head{i}.b"])
        acts.append(a)
    v = np.tanh(a @ P["out.W"].T + P["out.b"])[..., 0]
    return v, acts


def encoder_step(net: ValueNet, h: np.ndarray, c: np.ndarray, words):
    h, c, _ = lstm_step_cached(net.cell, h, c, net.params["embed"][words])
    return h, c


def _pad(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    T = max((len(s) for s in seqs), default=0)
    tokens = np.full((len(seqs), T), PAD, dtype=np.int64)
    for b, s in enumerate(seqs):
        tokens[b, : len(s)] = s
    return tokens


def _forward(net: ValueNet, features: np.ndarray, tokens: np.ndarray):
    B, T = tokens.shape
    img = image_code(net, features)
    zeros = np.zeros((B, net.d_h))
    if T:
        hs, _, caches = lstm_sequence(net.cell, net.params["embed"][tokens.T], zeros, zeros)
    else:
        hs, caches = np.zeros((0, B, net.d_h)), []
    summaries = np.concatenate([zeros[None], hs], axis=0)  # (T+1, B, H)
    v, acts = head(net, img[None], summaries)
    return v, acts, caches, img


def prefix_values(net: ValueNet, features: np.ndarray, seqs: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Values of every prefix ``seq[:t]`` for t = 0..len(seq)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_tokens(net, seqs)
    v, *_ = _forward(net, features, _pad(seqs))
    return [v[: len(s) + 1, b].copy() for b, s in enumerate(seqs)]


def value_estimate(net: ValueNet, feature: np.ndarray, prefix: Sequence[int]) -> float:
    return float(prefix_values(net, feature, [list(prefix)])[0][-1])


def squared_error(net: ValueNet, features: np.ndarray, seqs: Sequence[Sequence[int]],
                  targets: Sequence[Sequence[float]], weights: Sequence[Sequence[float]] | None = None):
    """``sum_{b,t} w[b,t] * (v(seq_b[:t]) - target[b,t])^2`` over prefixes
    t = 0..len(seq_b), with full gradients.

    ``targets[b]`` and ``weights[b]`` have length ``len(seqs[b]) + 1``;
    missing weights default to 1.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_tokens(net, seqs)
    tokens = _pad(seqs)
    B, T = tokens.shape
    P = net.params
    v, acts, caches, img = _forward(net, features, tokens)
    tgt = np.zeros((T + 1, B))
    W = np.zeros((T + 1, B))
    for b, s in enumerate(seqs):
        n = len(s) + 1
        tgt[:n, b] = targets[b]
        W[:n, b] = 1.0 if weights is None else weights[b]
    err = v - tgt
    loss = float(np.sum(W * err * err))

    grads = {}
    dz = 2.0 * W * err * (1.0 - v * v)  # (T+1, B)
    grads["out.W"] = np.einsum("tb,tbh->h", dz, acts[-1])[None, :]
    grads["out.b"] = np.array([dz.sum()])
    da = dz[..., None] * P["out.W"][0]
    for i in reversed(range(net.hidden_layers)):
        out = acts[i + 1]
        dpre = da * (1.0 - out * out)
        grads[f"head{i}.W"] = np.einsum("tbo,tbi->oi", dpre, acts[i])
        grads[f"head{i}.b"] = dpre.sum(axis=(0, 1))
        da = dpre @ P[f"head{i}.W"]
    H = net.d_h
    d_img = da[..., :H].sum(axis=0)
    grads["W_img"] = d_img.T @ features
    grads["b_img"] = d_img.sum(axis=0)
    d_sum = da[..., H:]
    if T:
        dWi, dWh, db, dxs, _, _ = lstm_sequence_backward(net.cell, caches, d_sum[1:])
        d_embed = np.zeros_like(P["embed"])
        np.add.at(d_embed, tokens.T, dxs)
    else:
        dWi, dWh, db = np.zeros_like(P["lstm.W_ih"]), np.zeros_like(P["lstm.W_hh"]), np.zeros_like(P["lstm.b"])
        d_embed = np.zeros_like(P["embed"])
    grads["lstm.W_ih"], grads["lstm.W_hh"], grads["lstm.b"] = dWi, dWh, db
    grads["embed"] = d_embed
    return loss, grads


def value_loss(net: ValueNet, feature: np.ndarray, prefix: Sequence[int], observed_reward: float):
    """``(v(s) - R)^2`` for a single state and its gradients."""
    if not -1.0 <= observed_reward <= 1.0:
        raise ValueError(f"observed reward {observed_reward} outside [-1, 1]")
    n = len(prefix)
    weights = [0.0] * n + [1.0]
    targets = [0.0] * n + [observed_reward]
    return squared_error(net, feature, [list(prefix)], [targets], [weights])
