from .loops import (
    FinetuneConfig,
    FinetuneResult,
    PretrainConfig,
    PretrainResult,
    Trace,
    WindowRecord,
    class_weights,
    curriculum_length,
    finetune,
    predict_trace,
    pretrain,
    split_train_val,
)
from .losses import loss_contrastive, loss_contrastive_pooled, loss_pred, loss_supervised

__all__ = [
    "FinetuneConfig",
    "FinetuneResult",
    "PretrainConfig",
    "PretrainResult",
    "Trace",
    "WindowRecord",
    "class_weights",
    "curriculum_length",
    "finetune",
    "predict_trace",
    "pretrain",
    "split_train_val",
    "loss_contrastive",
    "loss_contrastive_pooled",
    "loss_pred",
    "loss_supervised",
]
