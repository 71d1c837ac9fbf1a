"""Caption metrics on token sequences: corpus BLEU-n, ROUGE-L, CIDEr(-D
length penalty, no count clipping), plus a corpus-level report."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .data import BOS, EOS, PAD

BLEU_EPS = 1e-9
CIDER_SIGMA = 6.0
REPORT_FIELDS = ("bleu3", "bleu4", "rougeL", "cider", "mean_reward", "n")

Tokens = Sequence[Hashable]


@dataclass
class EvalPair:
    candidate: list
    references: list[list]

    def __post_init__(self):
        if not self.candidate or not self.references or any(len(r) == 0 for r in self.references):
            raise ValueError("candidate and references must be non-empty")


def strip_special(ids: Sequence[int]) -> list[int]:
    """Drop PAD/BOS and cut at the first EOS."""
    out = []
    for i in ids:
        if i == EOS:
            break
        if i not in (PAD, BOS):
            out.append(int(i))
    return out


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def bleu_n(pairs: Sequence[EvalPair], n: int = 4) -> float:
    if not pairs:
        raise ValueError("empty corpus")
    if n not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for pair in pairs:
        cand = list(pair.candidate)
        cand_len += len(cand)
        ref_len += _closest_ref_len(len(cand), pair.references)
        for k in range(1, n + 1):
            counts = ngrams(cand, k)
            max_ref = Counter()
            for r in pair.references:
                max_ref |= ngrams(list(r), k)
            matched[k - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[k - 1] += sum(counts.values())
    log_p = 0.0
    for m, t in zip(matched, total):
        # an order with no candidate n-grams at all has nothing to get wrong
        p = m / t if t else 1.0
        log_p += math.log(p if p > 0 else BLEU_EPS)
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_p / n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate: Tokens, references: Sequence[Tokens], beta: float = 1.2) -> float:
    best = 0.0
    for r in references:
        lcs = lcs_length(candidate, r)
        if lcs == 0:
            continue
        prec = lcs / len(candidate)
        rec = lcs / len(r)
        f = (1 + beta**2) * prec * rec / (rec + beta**2 * prec)
        best = max(best, f)
    return best


def rouge_l(pairs: Sequence[EvalPair], beta: float = 1.2) -> float:
    if not pairs:
        raise ValueError("empty corpus")
    return float(np.mean([rouge_l_pair(p.candidate, p.references, beta) for p in pairs]))


def _tfidf(tokens: Tokens, n: int, df: Counter, log_n_docs: float):
    counts = ngrams(tokens, n)
    vec = {g: c * (log_n_docs - math.log(max(1.0, df[g]))) for g, c in counts.items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def cider_scores(pairs: Sequence[EvalPair], max_n: int = 4, sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-pair CIDEr with document frequencies over this corpus' references."""
    if len(pairs) < 2:
        raise ValueError("CIDEr needs at least two examples for document frequencies")
    df = [Counter() for _ in range(max_n)]
    for p in pairs:
        for n in range(1, max_n + 1):
            seen = set()
            for r in p.references:
                seen.update(ngrams(list(r), n))
            df[n - 1].update(seen)
    log_docs = math.log(float(len(pairs)))
    scores = []
    for p in pairs:
        cand = list(p.candidate)
        per_n = np.zeros(max_n)
        for n in range(1, max_n + 1):
            vc, nc = _tfidf(cand, n, df[n - 1], log_docs)
            for r in p.references:
                vr, nr = _tfidf(list(r), n, df[n - 1], log_docs)
                dot = sum(v * vr.get(g, 0.0) for g, v in vc.items())
                sim = dot / (nc * nr) if nc > 0 and nr > 0 else 0.0
                delta = len(cand) - len(r)
                per_n[n - 1] += sim * math.exp(-(delta**2) / (2 * sigma**2))
            per_n[n - 1] /= len(p.references)
        scores.append(float(per_n.mean() * 10.0))
    return scores


def cider(pairs: Sequence[EvalPair]) -> float:
    return float(np.mean(cider_scores(pairs)))


def corpus_report(policy, value_net, examples, reward_model, *, decoder: str = "beam", k: int = 3,
                  beta: float = 0.4, max_len: int = 16) -> dict:
    """Decode every example and score it; keys are listed in ``REPORT_FIELDS``."""
    from .decoding import decode
    from .reward import rewards

    if not examples:
        raise ValueError("no examples to evaluate")
    caps = [decode(policy, value_net, e.feature, decoder=decoder, k=k, beta=beta, max_len=max_len)
            for e in examples]
    pairs = [EvalPair(strip_special(c) or [EOS], [strip_special(r) for r in e.references])
             for c, e in zip(caps, examples)]
    r, _ = rewards(reward_model, np.stack([e.feature for e in examples]), caps)
    return {
        "bleu3": bleu_n(pairs, 3),
        "bleu4": bleu_n(pairs, 4),
        "rougeL": rouge_l(pairs),
        "cider": cider(pairs) if len(pairs) >= 2 else 0.0,
        "mean_reward": float(np.mean(r)),
        "n": len(examples),
    }
