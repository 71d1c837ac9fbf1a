"""Finite-difference checks of every trained objective at tiny dimensions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import policy_net as pn
from . import value_net as vn
from .data import FEATURE_DIM
from .numerics import finite_diff_check
from .reward import RewardModel, margin_loss
from .training import policy_grad, rollouts, value_grad, value_targets

TOLERANCE = 1e-4
OBJECTIVES = ("teacher_forced", "value_loss", "margin", "policy_surrogate", "value_surrogate")
# larger-than-training init so gradients are not vanishingly small
CHECK_SCALE = 0.5


@dataclass
class CheckResult:
    objective: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= TOLERANCE)


def _objective(name: str, seed: int, d_h: int, V: int, mode: str = "terminal"):
    """Return ``(f, params)`` where ``f(params) -> (value, analytic grads)``."""
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(2, FEATURE_DIM))
    if name == "teacher_forced":
        net = pn.PolicyNet.init(V, d_h, seed=seed, scale=CHECK_SCALE)
        ref = list(rng.integers(3, V, size=3)) + [2]
        return (lambda p: pn.teacher_forced_loss(net, feats[0], ref)), net.params
    if name == "value_loss":
        net = vn.ValueNet.init(V, d_h, seed=seed, scale=CHECK_SCALE)
        prefix = list(rng.integers(0, V, size=3))
        R = float(rng.uniform(-1, 1))
        return (lambda p: vn.value_loss(net, feats[0], prefix, R)), net.params
    if name == "margin":
        model = RewardModel.init(V, d_h, seed=seed, scale=CHECK_SCALE)
        caps = [list(rng.integers(0, V, size=n)) for n in (3, 4)]
        return (lambda p: margin_loss(model, feats, caps)), model.params

    policy = pn.PolicyNet.init(V, d_h, seed=seed, scale=CHECK_SCALE)
    value = vn.ValueNet.init(V, d_h, seed=seed + 1, scale=CHECK_SCALE)
    reward = RewardModel.init(V, d_h, seed=seed + 2, scale=CHECK_SCALE)
    trajs = rollouts(policy, feats, rng, 4, value, reward)
    if name == "policy_surrogate":
        def f(p):
            lps = pn.log_probs(policy, feats, [t.actions for t in trajs])
            J = sum(float(np.dot(lp, t.advantages)) for lp, t in zip(lps, trajs))
            return J, policy_grad(trajs, policy)
        return f, policy.params
    if name == "value_surrogate":
        targets = [value_targets(t, mode) for t in trajs]

        def f(p):
            vals = vn.prefix_values(value, feats, [t.actions for t in trajs])
            obj = sum(0.5 * float(np.sum((v[:-1] - tg) ** 2)) for v, tg in zip(vals, targets))
            return obj, value_grad(trajs, value, mode)
        return f, value.params
    raise ValueError(f"unknown objective {name!r}")


def _corrupt(f: Callable) -> Callable:
    def g(p):
        val, grads = f(p)
        grads = {k: v.copy() for k, v in grads.items()}
        first = sorted(grads)[0]
        grads[first].reshape(-1)[0] += 1.0
        return val, grads
    return g


def run_checks(seed: int = 0, d_h: int = 4, V: int = 6, eps: float = 1e-5,
               objectives=OBJECTIVES, inject_fault: str | None = None) -> list[CheckResult]:
    results = []
    for name in objectives:
        f, params = _objective(name, seed, d_h, V)
        if name == inject_fault:
            f = _corrupt(f)
        results.append(CheckResult(name, finite_diff_check(f, params, eps)))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'objective':<18} {'max_rel_error':>14}  status"]
    for r in results:
        lines.append(f"{r.objective:<18} {r.max_rel_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
