"""Staged training: supervised policy pretraining, embedding (reward) training,
value regression on policy rollouts, then joint actor-critic updates.

Rewards are terminal: R_t = 0 before the last step and the cosine reward at
the end, so every step's return is the terminal reward (no discounting).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import policy_net as pn
from . import value_net as vn
from .config import RunConfig
from .data import Corpus, Example
from .decoding import greedy_decode, inverse_cdf
from .numerics import LOG_FLOOR, ParamStore, adam_update
from .reward import RewardModel, margin_loss, rewards

log = logging.getLogger(__name__)

MAX_MEAN_ADVANTAGE = 10.0


class DivergenceError(RuntimeError):
    pass


def lr_schedule(config: RunConfig, epoch: int) -> float:
    """``lr * decay ** floor(epoch / decay_every)``, rounded once from exact
    decimal arithmetic so 5e-4 * 0.9**2 comes out as the float 4.05e-4."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    steps = epoch // config.decay_every
    return float(Fraction(repr(config.lr)) * Fraction(repr(config.lr_decay)) ** steps)


def format_log(**fields) -> str:
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


def parse_log_line(line: str) -> dict[str, str]:
    return dict(item.split("=", 1) for item in line.split())


Logger = Callable[[str], None]


def _emit(logger: Logger | None, **fields) -> None:
    line = format_log(**fields)
    log.info(line)
    if logger is not None:
        logger(line)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i : i + size]


def _scale(grads: dict, factor: float) -> dict:
    return {k: g * factor for k, g in grads.items()}


# ---------------------------------------------------------------- supervised policy


def _policy_pairs(examples: Sequence[Example]):
    feats, seqs = [], []
    for e in examples:
        for r in e.references:
            feats.append(e.feature)
            seqs.append(r)
    return np.stack(feats), seqs


def mean_sequence_loss(policy: pn.PolicyNet, features: np.ndarray, seqs, chunk: int = 512) -> float:
    total = 0.0
    for i in range(0, len(seqs), chunk):
        lps = pn.log_probs(policy, features[i : i + chunk], seqs[i : i + chunk])
        total += sum(float(-np.sum(np.log(np.exp(lp) + LOG_FLOOR))) for lp in lps)
    return total / len(seqs)


def pretrain_policy(policy: pn.PolicyNet, corpus: Corpus, config: RunConfig,
                    logger: Logger | None = None, store: ParamStore | None = None) -> list[float]:
    """Teacher-forced cross entropy on every (train image, reference) pair.

    Returns the mean per-caption loss over the train split before training
    (index 0) and after each epoch.
    """
    train = corpus.split("train")
    if not train:
        raise ValueError("corpus has no training examples")
    feats, seqs = _policy_pairs(train)
    rng = np.random.default_rng(config.seed)
    store = store or ParamStore(policy.params)
    curve = [mean_sequence_loss(policy, feats, seqs)]
    _emit(logger, stage="policy", epoch=0, lr=lr_schedule(config, 0), mean_loss=curve[0])
    for epoch in range(config.policy_epochs):
        lr = lr_schedule(config, epoch)
        for idx in _batches(len(seqs), config.batch_size, rng):
            _, grads = pn.weighted_nll(policy, feats[idx], [seqs[i] for i in idx])
            adam_update(store, _scale(grads, 1.0 / len(idx)), lr)
        curve.append(mean_sequence_loss(policy, feats, seqs))
        _emit(logger, stage="policy", epoch=epoch + 1, lr=lr, mean_loss=curve[-1])
    return curve


# ---------------------------------------------------------------- reward embedding


def reward_gap(model: RewardModel, examples: Sequence[Example]) -> tuple[float, float]:
    """Mean matched and mean mismatched reward over all (image, reference)
    pairs of ``examples``."""
    feats = np.stack([e.feature for e in examples])
    caps, owner = [], []
    for i, e in enumerate(examples):
        for r in e.references:
            caps.append(r)
            owner.append(i)
    from .reward import similarity_matrix

    S = similarity_matrix(model, feats, caps)
    owner = np.array(owner)
    match = owner[None, :] == np.arange(len(examples))[:, None]
    return float(S[match].mean()), float(S[~match].mean())


def train_reward(model: RewardModel, corpus: Corpus, config: RunConfig,
                 logger: Logger | None = None) -> list[float]:
    """Hinge ranking training of the embedding on train-split pairs.

    Each batch pairs every image with one of its references; pairs whose
    captions are token-identical are not used as negatives. Returns per-epoch
    mean batch loss.
    """
    train = corpus.split("train")
    val = corpus.split("val") or train
    rng = np.random.default_rng(config.seed + 1)
    store = ParamStore(model.params)
    feats = np.stack([e.feature for e in train])
    curve = []
    for epoch in range(config.reward_epochs):
        lr = lr_schedule(config, epoch)
        losses = []
        for idx in _batches(len(train), config.batch_size, rng):
            if len(idx) < 2:
                continue
            caps = [train[i].references[rng.integers(len(train[i].references))] for i in idx]
            keys = [tuple(c) for c in caps]
            skip = np.array([[a == b for b in keys] for a in keys])
            loss, grads = margin_loss(model, feats[idx], caps, skip=skip)
            adam_update(store, grads, lr)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
        matched, mismatched = reward_gap(model, val)
        _emit(logger, stage="reward", epoch=epoch + 1, lr=lr, mean_loss=curve[-1],
              matched_reward_val=matched, mismatched_reward_val=mismatched)
    return curve


# ---------------------------------------------------------------- rollouts


@dataclass
class Trajectory:
    feature: np.ndarray
    actions: list[int]
    log_probs: np.ndarray
    values: np.ndarray
    reward: float

    def __post_init__(self):
        T = len(self.actions)
        if not (T >= 1 and len(self.log_probs) == T and len(self.values) == T):
            raise ValueError("trajectory sequences must share one non-zero length")

    @property
    def advantages(self) -> np.ndarray:
        return self.reward - self.values


def sample_actions(policy: pn.PolicyNet, features: np.ndarray, rng: np.random.Generator,
                   max_len: int) -> tuple[list[list[int]], list[np.ndarray]]:
    """Ancestral sampling for a batch; one uniform draw per row per step."""
    from .data import BOS, EOS

    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    B = features.shape[0]
    h, c, _ = pn.prime(policy, features)
    words = np.full(B, BOS)
    actions = [[] for _ in range(B)]
    logps = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    for _ in range(max_len):
        probs, h, c = pn.advance(policy, h, c, words)
        u = rng.random(B)
        for b in range(B):
            if done[b]:
                continue
            a = inverse_cdf(probs[b], u[b])
            actions[b].append(a)
            logps[b].append(np.log(probs[b, a]))
            words[b] = a
            done[b] = a == EOS
        if done.all():
            break
    return actions, [np.array(lp) for lp in logps]


def rollouts(policy: pn.PolicyNet, features: np.ndarray, rng: np.random.Generator, max_len: int,
             value_net: vn.ValueNet | None = None, reward_model: RewardModel | None = None) -> list[Trajectory]:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    actions, logps = sample_actions(policy, features, rng, max_len)
    if value_net is not None:
        values = [v[:-1] for v in vn.prefix_values(value_net, features, actions)]
    else:
        values = [np.zeros(len(a)) for a in actions]
    if reward_model is not None:
        R, _ = rewards(reward_model, features, actions)
    else:
        R = np.zeros(len(actions))
    return [Trajectory(f, a, lp, v, float(r)) for f, a, lp, v, r in zip(features, actions, logps, values, R)]


def rollout(policy: pn.PolicyNet, feature: np.ndarray, rng: np.random.Generator, max_len: int = 16,
            value_net: vn.ValueNet | None = None, reward_model: RewardModel | None = None) -> Trajectory:
    """Sample one episode; stops at EOS or after ``max_len`` actions."""
    return rollouts(policy, feature, rng, max_len, value_net, reward_model)[0]


def _as_list(trajectories) -> list[Trajectory]:
    return [trajectories] if isinstance(trajectories, Trajectory) else list(trajectories)


def policy_grad(trajectories, policy: pn.PolicyNet, entropy_weight: float = 0.0) -> dict:
    """Ascent direction of ``sum_t log q(a_t|s_t) * (R - v(s_t))`` with the
    advantage held constant (plus the entropy bonus if requested)."""
    trajs = _as_list(trajectories)
    feats = np.stack([t.feature for t in trajs])
    _, grads = pn.weighted_nll(policy, feats, [t.actions for t in trajs],
                               [t.advantages for t in trajs], entropy_weight=entropy_weight)
    return {k: -g for k, g in grads.items()}


def value_targets(traj: Trajectory, mode: str) -> np.ndarray:
    if mode == "terminal":
        return np.full(len(traj.actions), traj.reward)
    if mode == "td0":
        return np.append(traj.values[1:], traj.reward)
    raise ValueError(f"unknown advantage mode {mode!r}")


def value_grad(trajectories, value_net: vn.ValueNet, mode: str = "terminal") -> dict:
    """Gradient of ``1/2 sum_t (v(s_t) - target_t)^2`` with detached targets;
    a descent direction."""
    trajs = _as_list(trajectories)
    feats = np.stack([t.feature for t in trajs])
    seqs, targets, weights = [], [], []
    for t in trajs:
        n = len(t.actions)
        seqs.append(t.actions)
        targets.append(np.append(value_targets(t, mode), 0.0))
        weights.append(np.append(np.full(n, 0.5), 0.0))
    _, grads = vn.squared_error(value_net, feats, seqs, targets, weights)
    return grads


# ---------------------------------------------------------------- value pretraining


def pretrain_value(value_net: vn.ValueNet, policy: pn.PolicyNet, reward_model: RewardModel, corpus: Corpus,
                   config: RunConfig, logger: Logger | None = None) -> list[float]:
    """Regress v(s_t) onto rewards of the pretrained policy's own rollouts."""
    train = corpus.split("train")
    feats = np.stack([e.feature for e in train])
    rng = np.random.default_rng(config.seed + 2)
    store = ParamStore(value_net.params)
    curve = []
    for epoch in range(config.value_epochs):
        lr = lr_schedule(config, epoch)
        sq, count = 0.0, 0
        for idx in _batches(len(train), config.batch_size, rng):
            trajs = rollouts(policy, feats[idx], rng, config.max_len, value_net, reward_model)
            for t in trajs:
                sq += float(np.sum((t.values - value_targets(t, config.advantage_mode)) ** 2))
                count += len(t.actions)
            grads = value_grad(trajs, value_net, config.advantage_mode)
            adam_update(store, _scale(grads, 1.0 / len(idx)), lr)
        curve.append(sq / count)
        _emit(logger, stage="value", epoch=epoch + 1, lr=lr, mean_loss=curve[-1])
    return curve


# ---------------------------------------------------------------- joint actor-critic


def greedy_reward(policy: pn.PolicyNet, reward_model: RewardModel, examples: Sequence[Example],
                  max_len: int) -> float:
    feats = np.stack([e.feature for e in examples])
    caps = [greedy_decode(policy, f, max_len) for f in feats]
    r, _ = rewards(reward_model, feats, caps)
    return float(np.mean(r))


@dataclass
class JointHistory:
    reward_train: list[float]
    reward_val: list[float]
    value_loss: list[float]


def joint_train(policy: pn.PolicyNet, value_net: vn.ValueNet, reward_model: RewardModel, corpus: Corpus,
                config: RunConfig, logger: Logger | None = None, train_value: bool = True,
                train_policy: bool = True) -> JointHistory:
    """Actor-critic updates on sampled captions with the frozen reward model.

    ``reward_train`` is the arithmetic mean terminal reward of each epoch's
    rollouts; ``reward_val`` is the mean greedy-decoding reward on the
    validation split (index 0 = before joint training).
    """
    train = corpus.split("train")
    val = corpus.split("val") or train
    feats = np.stack([e.feature for e in train])
    rng = np.random.default_rng(config.seed + 3)
    p_store = ParamStore(policy.params)
    v_store = ParamStore(value_net.params)
    hist = JointHistory([], [greedy_reward(policy, reward_model, val, config.max_len)], [])
    _emit(logger, stage="joint", epoch=0, lr=lr_schedule(config, 0), mean_reward_val=hist.reward_val[0])
    for epoch in range(config.joint_epochs):
        lr = lr_schedule(config, epoch)
        R_all, sq, count = [], 0.0, 0
        for idx in _batches(len(train), config.batch_size, rng):
            trajs = rollouts(policy, feats[idx], rng, config.max_len, value_net, reward_model)
            adv = np.concatenate([t.advantages for t in trajs])
            if np.mean(np.abs(adv)) > MAX_MEAN_ADVANTAGE:
                raise DivergenceError(
                    f"mean |advantage| {np.mean(np.abs(adv)):.3g} exceeds {MAX_MEAN_ADVANTAGE} "
                    f"at joint epoch {epoch + 1}"
                )
            for t in trajs:
                R_all.append(t.reward)
                sq += float(np.sum((t.values - value_targets(t, config.advantage_mode)) ** 2))
                count += len(t.actions)
            if train_policy:
                g = policy_grad(trajs, policy, config.entropy_weight)
                # Adam descends, so hand it the negated ascent direction
                adam_update(p_store, _scale(g, -1.0 / len(idx)), lr)
            if train_value:
                adam_update(v_store, _scale(value_grad(trajs, value_net, config.advantage_mode), 1.0 / len(idx)), lr)
        hist.reward_train.append(float(np.mean(R_all)))
        hist.value_loss.append(sq / count)
        hist.reward_val.append(greedy_reward(policy, reward_model, val, config.max_len))
        _emit(logger, stage="joint", epoch=epoch + 1, lr=lr, mean_reward_train=hist.reward_train[-1],
              mean_reward_val=hist.reward_val[-1], value_loss=hist.value_loss[-1])
    return hist
