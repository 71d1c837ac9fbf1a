"""Caption decoders: greedy, sampling, value-guided beam search, and an
exhaustive search used as a test oracle.

Beam children are scored by

    beta * (cumulative log-prob / length) + (1 - beta) * v(prefix + a)

so ``beta = 1`` is length-normalised likelihood beam search and ``beta = 0``
lets the value network alone pick among the policy's expansions. Ties go to
the lexicographically smaller token sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy_net as pn
from . import value_net as vn
from .data import BOS, EOS
from .numerics import LOG_FLOOR

ORACLE_LIMIT = 10**6


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    score: float

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


def _rank_key(h: Hypothesis):
    return (-h.score, h.tokens)


def _check_max_len(max_len: int) -> None:
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")


def greedy_decode(policy: pn.PolicyNet, feature: np.ndarray, max_len: int = 16) -> list[int]:
    """Argmax decoding; ties go to the smallest token id."""
    _check_max_len(max_len)
    h, c, _ = pn.prime(policy, np.atleast_2d(feature))
    word = np.array([BOS])
    out: list[int] = []
    while len(out) < max_len:
        probs, h, c = pn.advance(policy, h, c, word)
        a = int(np.argmax(probs[0]))
        out.append(a)
        if a == EOS:
            break
        word = np.array([a])
    return out


def sample_decode(policy: pn.PolicyNet, feature: np.ndarray, rng: np.random.Generator, max_len: int = 16) -> list[int]:
    """Ancestral sampling by inverse CDF."""
    _check_max_len(max_len)
    h, c, _ = pn.prime(policy, np.atleast_2d(feature))
    word = np.array([BOS])
    out: list[int] = []
    while len(out) < max_len:
        probs, h, c = pn.advance(policy, h, c, word)
        a = inverse_cdf(probs[0], rng.random())
        out.append(a)
        if a == EOS:
            break
        word = np.array([a])
    return out


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def _log(p: np.ndarray) -> np.ndarray:
    return np.log(p + LOG_FLOOR)


def _mix(beta: float, norm_logp: np.ndarray, values: np.ndarray | None) -> np.ndarray:
    if values is None:
        return beta * norm_logp
    return beta * norm_logp + (1.0 - beta) * values


def beam_decode(policy: pn.PolicyNet, value_net: vn.ValueNet | None, feature: np.ndarray,
                k: int = 3, beta: float = 0.4, max_len: int = 16):
    """Value-guided beam search.

    Returns ``(best_tokens, ranked)`` where ``ranked`` lists every finished
    hypothesis best-first.
    """
    if k < 1:
        raise ValueError(f"beam width must be >= 1, got {k}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    _check_max_len(max_len)
    use_value = beta < 1.0
    if use_value and value_net is None:
        raise ValueError("beta < 1 requires a value network")
    feature = np.atleast_2d(np.asarray(feature, dtype=np.float64))
    V = policy.vocab_size

    h, c, _ = pn.prime(policy, feature)
    live = [Hypothesis((), 0.0, 0.0)]
    words = np.array([BOS])
    hs_p, cs_p = h, c
    if use_value:
        img = vn.image_code(value_net, feature)[0]
        hs_v = np.zeros((1, value_net.d_h))
        cs_v = np.zeros((1, value_net.d_h))
    finished: list[Hypothesis] = []
    for depth in range(1, max_len + 1):
        probs, hs_p, cs_p = pn.advance(policy, hs_p, cs_p, words)
        logp = _log(probs)  # (K, V)
        children = []
        child_values = None
        if use_value:
            K = len(live)
            all_words = np.tile(np.arange(V), K)
            hv, cv = vn.encoder_step(value_net, np.repeat(hs_v, V, axis=0), np.repeat(cs_v, V, axis=0), all_words)
            child_values, _ = vn.head(value_net, img, hv)
            child_values = child_values.reshape(K, V)
        for i, hyp in enumerate(live):
            cum = hyp.logprob + logp[i]
            score = _mix(beta, cum / depth, None if child_values is None else child_values[i])
            for a in range(V):
                children.append((Hypothesis(hyp.tokens + (a,), float(cum[a]), float(score[a])), i))
        children.sort(key=lambda ch: _rank_key(ch[0]))
        keep = children[:k]
        next_live, parents = [], []
        for hyp, parent in keep:
            if hyp.finished or depth == max_len:
                finished.append(hyp)
            else:
                next_live.append(hyp)
                parents.append(parent)
        if not next_live:
            break
        idx = np.array(parents)
        words = np.array([hyp.tokens[-1] for hyp in next_live])
        hs_p, cs_p = hs_p[idx], cs_p[idx]
        if use_value:
            sel = idx * V + words
            hs_v, cs_v = hv[sel], cv[sel]
        live = next_live
    finished.sort(key=_rank_key)
    return list(finished[0].tokens), finished


def exhaustive_oracle(policy: pn.PolicyNet, value_net: vn.ValueNet | None, feature: np.ndarray,
                      beta: float, max_len: int, V: int | None = None) -> list[int]:
    """Best combined-score caption over every EOS-terminated sequence of length
    <= max_len and every unterminated sequence of length max_len.

    Enumerates level by level without pruning; values come from a full
    re-encoding of each candidate rather than the beam's incremental state.
    """
    V = policy.vocab_size if V is None else V
    if V != policy.vocab_size:
        raise ValueError(f"V={V} does not match policy vocabulary {policy.vocab_size}")
    if V <= EOS:
        raise ValueError(f"vocabulary of size {V} has no EOS token")
    if float(V) ** max_len > ORACLE_LIMIT:
        raise ValueError(f"search space {V}^{max_len} exceeds {ORACLE_LIMIT}; refusing to enumerate")
    if beta < 1.0 and value_net is None:
        raise ValueError("beta < 1 requires a value network")
    feature = np.atleast_2d(np.asarray(feature, dtype=np.float64))
    best: Hypothesis | None = None
    h, c, _ = pn.prime(policy, feature)
    bodies: list[tuple[int, ...]] = [()]
    cums = np.zeros(1)
    words = np.array([BOS])
    for length in range(1, max_len + 1):
        probs, h, c = pn.advance(policy, h, c, words)
        logp = _log(probs)
        if length < max_len:
            ends = [EOS]
        else:
            ends = list(range(V))
        seqs = [b + (a,) for b in bodies for a in ends]
        seq_cum = np.array([cums[i] + logp[i, a] for i in range(len(bodies)) for a in ends])
        norm = seq_cum / length
        if beta < 1.0:
            feats = np.repeat(feature, len(seqs), axis=0)
            values = np.array([v[-1] for v in vn.prefix_values(value_net, feats, seqs)])
            scores = beta * norm + (1.0 - beta) * values
        else:
            scores = beta * norm
        for seq, cum, score in zip(seqs, seq_cum, scores):
            hyp = Hypothesis(seq, float(cum), float(score))
            if best is None or _rank_key(hyp) < _rank_key(best):
                best = hyp
        if length == max_len:
            break
        body_tokens = [a for a in range(V) if a != EOS]
        idx = np.repeat(np.arange(len(bodies)), len(body_tokens))
        words = np.tile(np.array(body_tokens), len(bodies))
        cums = np.array([cums[i] + logp[i, a] for i, a in zip(idx, words)])
        bodies = [bodies[i] + (int(a),) for i, a in zip(idx, words)]
        h, c = h[idx], c[idx]
    return list(best.tokens)


def decode(policy: pn.PolicyNet, value_net: vn.ValueNet | None, feature: np.ndarray, *,
           decoder: str = "beam", k: int = 3, beta: float = 0.4, max_len: int = 16,
           rng: np.random.Generator | None = None) -> list[int]:
    if decoder == "greedy":
        return greedy_decode(policy, feature, max_len)
    if decoder == "beam":
        return beam_decode(policy, value_net, feature, k, beta, max_len)[0]
    if decoder == "sample":
        return sample_decode(policy, feature, rng if rng is not None else np.random.default_rng(0), max_len)
    raise ValueError(f"unknown decoder {decoder!r}; expected greedy, beam or sample")
