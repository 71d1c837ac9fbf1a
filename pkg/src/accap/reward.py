"""Visual-semantic embedding reward.

Images go through a linear map ``l_m``, captions through an LSTM whose final
hidden state is the caption code; both are L2-normalised and the terminal
reward is their cosine similarity. The embedding is trained with a
bidirectional hinge ranking loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FEATURE_DIM, PAD
from .numerics import LstmCellParams, ShapeError, lstm_sequence, lstm_sequence_backward
from .policy_net import INIT_SCALE, uniform_params

DEGENERATE_NORM = 1e-12


@dataclass
class RewardModel:
    params: dict[str, np.ndarray]
    vocab_size: int
    d_emb: int
    d_e: int
    margin: float = 0.2
    alpha: float = 0.5
    feat_dim: int = FEATURE_DIM

    @staticmethod
    def shapes(vocab_size, d_emb, d_e, feat_dim=FEATURE_DIM) -> dict:
        return {
            "l_m": (d_emb, feat_dim),
            "embed": (vocab_size, d_e),
            "lstm.W_ih": (4 * d_emb, d_e),
            "lstm.W_hh": (4 * d_emb, d_emb),
            "lstm.b": (4 * d_emb,),
        }

    @classmethod
    def init(cls, vocab_size, d_emb=64, d_e=None, *, margin=0.2, alpha=0.5, seed=0, scale=INIT_SCALE,
             feat_dim=FEATURE_DIM) -> "RewardModel":
        d_e = d_emb if d_e is None else d_e
        rng = np.random.default_rng(seed)
        return cls(uniform_params(cls.shapes(vocab_size, d_emb, d_e, feat_dim), rng, scale),
                   vocab_size, d_emb, d_e, margin, alpha, feat_dim)

    @classmethod
    def zeros(cls, vocab_size, d_emb, d_e=None, *, margin=0.2, alpha=0.5, feat_dim=FEATURE_DIM) -> "RewardModel":
        d_e = d_emb if d_e is None else d_e
        shapes = cls.shapes(vocab_size, d_emb, d_e, feat_dim)
        return cls({k: np.zeros(s) for k, s in shapes.items()}, vocab_size, d_emb, d_e, margin, alpha, feat_dim)

    def __post_init__(self):
        if not 0.0 < self.margin < 1.0:
            raise ValueError(f"margin must lie in (0, 1), got {self.margin}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for k, s in self.shapes(self.vocab_size, self.d_emb, self.d_e, self.feat_dim).items():
            if k not in self.params or self.params[k].shape != s:
                raise ShapeError(f"RewardModel.{k}: expected {s}")

    @property
    def cell(self) -> LstmCellParams:
        return LstmCellParams.from_params(self.params, "lstm.")


def _normalize(a: np.ndarray):
    """Row-wise unit vectors; degenerate (near-zero) rows map to zero."""
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    degenerate = norm[..., 0] < DEGENERATE_NORM
    safe = np.where(norm < DEGENERATE_NORM, 1.0, norm)
    u = np.where(norm < DEGENERATE_NORM, 0.0, a / safe)
    return u, safe, degenerate


def _normalize_backward(du, u, norm, degenerate):
    da = (du - u * np.sum(u * du, axis=-1, keepdims=True)) / norm
    da[degenerate] = 0.0
    return da


def embed_image(model: RewardModel, feature: np.ndarray) -> np.ndarray:
    """Unit-norm ``l_m @ feature``; the zero vector if degenerate."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != model.feat_dim:
        raise ShapeError(f"feature{feature.shape} does not match l_m{model.params['l_m'].shape}")
    return _normalize(feature @ model.params["l_m"].T)[0]


def _encode(model: RewardModel, captions: Sequence[Sequence[int]]):
    if any(len(c) == 0 for c in captions):
        raise ValueError("caption must be non-empty")
    for c in captions:
        for w in c:
            if not 0 <= w < model.vocab_size:
                raise ValueError(f"token id {w} outside vocabulary of size {model.vocab_size}")
    B = len(captions)
    T = max(len(c) for c in captions)
    tokens = np.full((B, T), PAD, dtype=np.int64)
    for b, c in enumerate(captions):
        tokens[b, : len(c)] = c
    last = np.array([len(c) - 1 for c in captions])
    zeros = np.zeros((B, model.d_emb))
    hs, _, caches = lstm_sequence(model.cell, model.params["embed"][tokens.T], zeros, zeros)
    return hs[last, np.arange(B)], tokens, last, hs, caches


def embed_captions(model: RewardModel, captions: Sequence[Sequence[int]]) -> np.ndarray:
    return _normalize(_encode(model, captions)[0])[0]


def embed_caption(model: RewardModel, caption: Sequence[int]) -> np.ndarray:
    """Unit-norm final encoder state; the zero vector if degenerate."""
    return embed_captions(model, [list(caption)])[0]


def rewards(model: RewardModel, features: np.ndarray, captions: Sequence[Sequence[int]]):
    """Cosine rewards for matched (feature, caption) rows and degeneracy flags."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    u, _, deg_u = _normalize(features @ model.params["l_m"].T)
    c, _, deg_c = _normalize(_encode(model, captions)[0])
    r = np.clip(np.sum(u * c, axis=-1), -1.0, 1.0)
    return r, deg_u | deg_c


def reward_details(model: RewardModel, feature: np.ndarray, caption: Sequence[int]) -> tuple[float, bool]:
    r, deg = rewards(model, feature, [list(caption)])
    return float(r[0]), bool(deg[0])


def reward_rt(model: RewardModel, feature: np.ndarray, caption: Sequence[int]) -> float:
    """Terminal reward in [-1, 1]; 0 when either embedding is degenerate."""
    return reward_details(model, feature, caption)[0]


def similarity_matrix(model: RewardModel, features: np.ndarray, captions: Sequence[Sequence[int]]) -> np.ndarray:
    """``S[i, j]`` = cosine of image i and caption j."""
    u = embed_image(model, np.atleast_2d(features))
    return u @ embed_captions(model, captions).T


def margin_loss(model: RewardModel, features: np.ndarray, captions: Sequence[Sequence[int]],
                skip: np.ndarray | None = None):
    """Bidirectional hinge ranking loss, averaged over the B matched pairs.

    Anchor i contributes ``max(0, m - S_ii + S_ij)`` (wrong caption for image
    i) and ``max(0, m - S_ii + S_ji)`` (wrong image for caption i) for every
    j != i. ``skip`` is an optional boolean (B, B) mask of off-diagonal pairs
    to leave out. Returns ``(loss, grads)``.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    B = len(captions)
    if B < 2 or features.shape[0] != B:
        raise ValueError(f"margin loss needs a batch of >= 2 matched pairs, got {B}")
    P = model.params
    a = features @ P["l_m"].T
    u, nu, deg_u = _normalize(a)
    e, tokens, last, hs, caches = _encode(model, captions)
    c, nc, deg_c = _normalize(e)
    S = u @ c.T
    diag = np.diag(S)
    off = ~np.eye(B, dtype=bool)
    if skip is not None:
        off &= ~skip
    h_cap = np.maximum(0.0, model.margin - diag[:, None] + S) * off
    h_img = np.maximum(0.0, model.margin - diag[None, :] + S) * off
    loss = float(h_cap.sum() + h_img.sum()) / B

    act_cap = (h_cap > 0) / B
    act_img = (h_img > 0) / B
    dS = act_cap + act_img
    dS[np.diag_indices(B)] -= act_cap.sum(axis=1) + act_img.sum(axis=0)
    du = dS @ c
    dc = dS.T @ u
    da = _normalize_backward(du, u, nu, deg_u)
    de = _normalize_backward(dc, c, nc, deg_c)
    grads = {"l_m": da.T @ features}
    dhs = np.zeros_like(hs)
    dhs[last, np.arange(B)] = de
    dWi, dWh, db, dxs, _, _ = lstm_sequence_backward(model.cell, caches, dhs)
    grads["lstm.W_ih"], grads["lstm.W_hh"], grads["lstm.b"] = dWi, dWh, db
    d_embed = np.zeros_like(P["embed"])
    np.add.at(d_embed, tokens.T, dxs)
    grads["embed"] = d_embed
    return loss, grads


def diagnostic_lr(model: RewardModel, features: np.ndarray, captions: Sequence[Sequence[int]]) -> float:
    """``alpha * (margin loss + mean matched reward)``; logged, never optimised."""
    lm, _ = margin_loss(model, features, captions)
    r, _ = rewards(model, features, captions)
    return model.alpha * (lm + float(np.mean(r)))
