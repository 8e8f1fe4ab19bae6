"""Adam with decoupled weight decay plus global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_gradients(store: ParamStore, max_norm: float = 5.0) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the applied scale (1.0 when already within bounds)."""
    total = 0.0
    for name in store.names():
        t = store.tensor(name)
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for name in store.names():
        t = store.tensor(name)
        if t.grad is not None:
            t.grad *= scale
    return scale


def adam_step(
    store: ParamStore,
    state: AdamState,
    lr: float,
    weight_decay: float = 1e-5,
    frozen: frozenset = frozenset(),
) -> None:
    """Decoupled weight decay (theta -= lr*wd*theta) followed by the
    bias-corrected Adam update. Frozen parameters are skipped entirely:
    no decay, no moment update."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in store.names():
        if name in frozen:
            continue
        t = store.tensor(name)
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if weight_decay:
            t.data -= lr * weight_decay * t.data
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
