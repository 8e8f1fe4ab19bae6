from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    div,
    exp,
    gather_rows,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    segment_sum,
    set_default_dtype,
    sigmoid,
    slice_cols,
    sqrt,
    sub,
    tanh,
    transpose,
    tsum,
)
from .params import ParamStore, init_params
from .optim import AdamState, adam_step, clip_gradients
from .check import finite_diff_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "ParamStore",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "clip_gradients",
    "concat",
    "default_dtype",
    "div",
    "exp",
    "finite_diff_check",
    "gather_rows",
    "init_params",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "segment_sum",
    "set_default_dtype",
    "sigmoid",
    "slice_cols",
    "sqrt",
    "sub",
    "tanh",
    "transpose",
    "tsum",
]
