"""Recurrent stage estimation over window-embedding sequences.

A two-layer gated recurrent network (standard i/f/g/o cell, H=128 default)
consumes g_1..g_T with h_0 = c_0 = 0; inverted dropout (rate 0.3) sits between
the layers in train mode only. The classifier head emits the 7-class stage
distribution via a max-subtracted softmax; the prediction head maps h_t to the
next-window embedding for self-supervision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .nn import (
    ParamStore,
    Tensor,
    as_tensor,
    concat,
    div,
    exp,
    gather_rows,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_cols,
    sub,
    tanh,
    transpose,
    tsum,
)

NUM_STAGES = 7


@dataclass(frozen=True)
class EstimatorConfig:
    d_g: int = 64
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.3
    num_classes: int = NUM_STAGES


def estimator_param_spec(cfg: EstimatorConfig) -> dict:
    spec = {}
    for layer in range(cfg.layers):
        in_dim = cfg.d_g if layer == 0 else cfg.hidden
        spec[f"lstm.L{layer}.Wih"] = (4 * cfg.hidden, in_dim)
        spec[f"lstm.L{layer}.Whh"] = (4 * cfg.hidden, cfg.hidden)
        spec[f"lstm.L{layer}.b"] = (4 * cfg.hidden,)
    spec["head.stage.W"] = (cfg.num_classes, cfg.hidden)
    spec["head.stage.b"] = (cfg.num_classes,)
    spec["head.next.W"] = (cfg.d_g, cfg.hidden)
    spec["head.next.b"] = (cfg.d_g,)
    return spec


def apply_forget_bias(store: ParamStore, cfg: EstimatorConfig, value: float = 1.0) -> None:
    """Initialize the forget-gate bias slice to `value` (gate order i,f,g,o)."""
    H = cfg.hidden
    for layer in range(cfg.layers):
        store.tensor(f"lstm.L{layer}.b").data[H : 2 * H] = value


def _cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
               Wih: Tensor, Whh: Tensor, b: Tensor, H: int):
    gates = matmul(x_t, transpose(Wih)) + matmul(h_prev, transpose(Whh)) + b
    i = sigmoid(slice_cols(gates, 0, H))
    f = sigmoid(slice_cols(gates, H, 2 * H))
    g = tanh(slice_cols(gates, 2 * H, 3 * H))
    o = sigmoid(slice_cols(gates, 3 * H, 4 * H))
    c = mul(f, c_prev) + mul(i, g)
    h = mul(o, tanh(c))
    return h, c


def recurrent_forward(x: Tensor, store: ParamStore, cfg: EstimatorConfig,
                      mode: str = "eval", dropout_seed: int = 0,
                      batch: int = 1) -> Tensor:
    """Run the stacked recurrence over `batch` same-length sequences.

    x: (batch*T, d_g) laid out sequence-major (row b*T + t). Returns top-layer
    hidden states with the same layout, (batch*T, H). Deterministic given
    (mode, dropout_seed).
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_tensor(x)
    total, d_in = x.data.shape
    if d_in != cfg.d_g:
        raise DimensionError(f"input width {d_in} != d_g {cfg.d_g}")
    if batch < 1 or total % batch:
        raise DimensionError(f"row count {total} not divisible by batch {batch}")
    T = total // batch
    if T < 1:
        raise DimensionError("need at least one step")
    H = cfg.hidden
    dtype = x.data.dtype

    masks = None
    if mode == "train" and cfg.dropout > 0 and cfg.layers > 1:
        rng = np.random.default_rng(dropout_seed)
        keep = 1.0 - cfg.dropout
        # one mask tensor per (layer gap, step); prefix of the stream is
        # identical for shorter T, preserving causal determinism
        masks = (rng.random((cfg.layers - 1, T, batch, H)) < keep).astype(dtype) / keep

    step_index = np.arange(batch) * T  # row of t=0 per sequence
    layer_in = x
    for layer in range(cfg.layers):
        Wih = store.tensor(f"lstm.L{layer}.Wih")
        Whh = store.tensor(f"lstm.L{layer}.Whh")
        b = store.tensor(f"lstm.L{layer}.b")
        h = as_tensor(np.zeros((batch, H), dtype=dtype))
        c = as_tensor(np.zeros((batch, H), dtype=dtype))
        outs = []
        for t in range(T):
            x_t = gather_rows(layer_in, step_index + t)
            h, c = _cell_step(x_t, h, c, Wih, Whh, b, H)
            h_out = h
            if masks is not None and layer < cfg.layers - 1:
                h_out = mul(h, as_tensor(masks[layer, t]))
            outs.append(h_out)
        stacked = concat(outs, axis=0)  # (T*batch, H), step-major
        if batch == 1:
            layer_in = stacked
        else:
            # back to sequence-major: row b*T + t <- row t*batch + b
            t_idx, b_idx = np.meshgrid(np.arange(T), np.arange(batch), indexing="ij")
            perm = (t_idx * batch + b_idx).T.ravel()
            layer_in = gather_rows(stacked, perm)
    return layer_in


def classify(h: Tensor, store: ParamStore) -> Tensor:
    """p = softmax(W_stage·h + B_stage), row-wise, max-subtracted."""
    h = as_tensor(h)
    logits = matmul(h, transpose(store.tensor("head.stage.W"))) + store.tensor("head.stage.b")
    shift = logits.data.max(axis=1, keepdims=True)  # constant; softmax is shift-invariant
    ex = exp(sub(logits, as_tensor(shift)))
    return div(ex, tsum(ex, axis=1, keepdims=True))


def predict_next(h: Tensor, store: ParamStore) -> Tensor:
    """ĝ_{t+1} = W_o·h_t + b_o, row-wise."""
    h = as_tensor(h)
    return matmul(h, transpose(store.tensor("head.next.W"))) + store.tensor("head.next.b")
