"""Small differentiable-op kit: affine maps, LSTM cell with BPTT, softmax,
cross entropy, Adam and a central-difference gradient checker.

Everything is float64 numpy. Functions accept a single vector or a batch of
row vectors (leading axis = batch) unless stated otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

LOG_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Tensor = np.ndarray


class ShapeError(ValueError):
    pass


class GradientConsistencyError(ValueError):
    pass


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


def sigmoid(z: Tensor) -> Tensor:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def linear_apply(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """Return ``W @ x + b`` (or ``x @ W.T + b`` for a batch of rows)."""
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"linear_apply: W{tuple(W.shape)} b{tuple(b.shape)} x{tuple(x.shape)}"
        )
    return x @ W.T + b


def softmax(z: Tensor) -> Tensor:
    z = as_tensor(z)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: Tensor, target_index: int) -> float:
    probs = as_tensor(probs)
    if not 0 <= target_index < probs.shape[-1]:
        raise ValueError(f"target index {target_index} outside [0, {probs.shape[-1]})")
    return float(-np.log(probs[target_index] + LOG_FLOOR))


def floored_nll_grad(probs: Tensor, targets: np.ndarray) -> Tensor:
    """d/dlogits of ``-log(p[target] + LOG_FLOOR)`` for rows of ``probs``."""
    probs = np.atleast_2d(probs)
    rows = np.arange(probs.shape[0])
    pt = probs[rows, targets]
    dz = probs * (pt / (pt + LOG_FLOOR))[:, None]
    dz[rows, targets] -= pt / (pt + LOG_FLOOR)
    return dz


# ---------------------------------------------------------------- LSTM


@dataclass
class LstmCellParams:
    """Gate order along the 4*D_h axis: input, forget, candidate, output."""

    W_ih: Tensor
    W_hh: Tensor
    b: Tensor

    def __post_init__(self):
        h4, d_in = self.W_ih.shape
        if h4 % 4 or self.W_hh.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(
                f"inconsistent LSTM params W_ih{self.W_ih.shape} "
                f"W_hh{self.W_hh.shape} b{self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_ih.shape[1]

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], prefix: str) -> "LstmCellParams":
        return cls(params[prefix + "W_ih"], params[prefix + "W_hh"], params[prefix + "b"])


def lstm_step_cached(p: LstmCellParams, h_prev: Tensor, c_prev: Tensor, x: Tensor):
    H = p.hidden_size
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(
            f"lstm_step: x{x.shape} h{h_prev.shape} c{c_prev.shape} "
            f"for D_in={p.input_size}, D_h={H}"
        )
    z = x @ p.W_ih.T + h_prev @ p.W_hh.T + p.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def lstm_step(p: LstmCellParams, h_prev: Tensor, c_prev: Tensor, x: Tensor):
    h, c, _ = lstm_step_cached(p, as_tensor(h_prev), as_tensor(c_prev), as_tensor(x))
    return h, c


def lstm_step_backward(p: LstmCellParams, cache, dh: Tensor, dc: Tensor):
    """Backprop one cell step.

    Returns ``(dW_ih, dW_hh, db, dx, dh_prev, dc_prev)``; weight gradients are
    summed over the batch axis.
    """
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dct * g * i * (1.0 - i),
            dct * c_prev * f * (1.0 - f),
            dct * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=-1,
    )
    dz2 = np.atleast_2d(dz)
    dW_ih = dz2.T @ np.atleast_2d(x)
    dW_hh = dz2.T @ np.atleast_2d(h_prev)
    db = dz2.sum(axis=0)
    return dW_ih, dW_hh, db, dz @ p.W_ih, dz @ p.W_hh, dct * f


def lstm_sequence(p: LstmCellParams, xs: Tensor, h0: Tensor, c0: Tensor, mask: Tensor | None = None):
    """Unroll over ``xs`` of shape (T, B, D_in).

    Rows with ``mask[t, b] == 0`` carry their state through step ``t``
    unchanged. Returns ``(hs, cs, caches)`` with hs/cs of shape (T, B, D_h).
    """
    T = xs.shape[0]
    hs = np.empty(xs.shape[:2] + (p.hidden_size,))
    cs = np.empty_like(hs)
    caches = []
    h, c = h0, c0
    for t in range(T):
        hn, cn, cache = lstm_step_cached(p, h, c, xs[t])
        if mask is not None:
            m = mask[t][:, None]
            hn = m * hn + (1.0 - m) * h
            cn = m * cn + (1.0 - m) * c
        h, c = hn, cn
        hs[t], cs[t] = h, c
        caches.append(cache)
    return hs, cs, caches


def lstm_sequence_backward(p: LstmCellParams, caches, dhs: Tensor, mask: Tensor | None = None,
                           dh_last: Tensor | None = None, dc_last: Tensor | None = None):
    """BPTT through :func:`lstm_sequence`.

    ``dhs`` (T, B, D_h) holds loss gradients w.r.t. each emitted hidden state.
    Returns ``(dW_ih, dW_hh, db, dxs, dh0, dc0)``.
    """
    T, B, H = dhs.shape
    dW_ih = np.zeros_like(p.W_ih)
    dW_hh = np.zeros_like(p.W_hh)
    db = np.zeros_like(p.b)
    dxs = np.zeros((T, B, p.input_size))
    dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
    dc = np.zeros((B, H)) if dc_last is None else dc_last.copy()
    for t in reversed(range(T)):
        dh = dh + dhs[t]
        if mask is not None:
            m = mask[t][:, None]
            dh_in, dc_in = m * dh, m * dc
        else:
            dh_in, dc_in = dh, dc
        gWi, gWh, gb, dx, dhp, dcp = lstm_step_backward(p, caches[t], dh_in, dc_in)
        dW_ih += gWi
        dW_hh += gWh
        db += gb
        dxs[t] = dx
        if mask is not None:
            dh = dhp + (1.0 - m) * dh
            dc = dcp + (1.0 - m) * dc
        else:
            dh, dc = dhp, dcp
    return dW_ih, dW_hh, db, dxs, dh, dc


# ---------------------------------------------------------------- Adam


@dataclass
class ParamStore:
    """Named parameters plus Adam moments.

    ``params`` is shared by reference with the owning network, so updates
    are visible to it immediately.
    """

    params: dict[str, Tensor]
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))


def adam_update(store: ParamStore, grads: Mapping[str, Tensor], lr: float) -> ParamStore:
    """One bias-corrected Adam step, applied in place. Returns ``store``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    missing = set(store.params) - set(grads)
    extra = set(grads) - set(store.params)
    if missing or extra:
        raise GradientConsistencyError(
            f"gradient names do not match parameters: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for k, g in grads.items():
        if g.shape != store.params[k].shape:
            raise GradientConsistencyError(f"{k}: grad{g.shape} vs param{store.params[k].shape}")
    store.step += 1
    bc1 = 1.0 - ADAM_BETA1**store.step
    bc2 = 1.0 - ADAM_BETA2**store.step
    for k in sorted(store.params):
        g = grads[k]
        m = store.m[k]
        v = store.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        store.params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return store


# ---------------------------------------------------------------- gradient check


def finite_diff_report(
    f: Callable[[dict[str, Tensor]], tuple[float, Mapping[str, Tensor]]],
    params: dict[str, Tensor],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter max relative error between analytic and central-difference
    gradients. ``f(params)`` must return ``(loss, grads)``; params are perturbed
    in place and restored.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    _, grads = f(params)
    report = {}
    for name in sorted(params):
        p = params[name]
        analytic = np.asarray(grads[name])
        flat = p.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = f(params)[0]
            flat[j] = orig - eps
            fm = f(params)[0]
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = np.unravel_index(j, p.shape)
                raise FloatingPointError(f"non-finite objective when perturbing {name}{[int(i) for i in idx]}")
            num = (fp - fm) / (2.0 * eps)
            a = float(analytic.reshape(-1)[j])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return report


def finite_diff_check(f, params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max relative gradient error over every coordinate of ``params``."""
    return max(finite_diff_report(f, params, eps).values(), default=0.0)
