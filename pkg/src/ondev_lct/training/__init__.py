"""Optimizers, the label-smoothed loss and centralized train/eval loops."""

from ..tensor.ops import label_smoothed_ce
from .loop import MetricsLog, TrainConfig, evaluate, iter_batches, predict_logits, train_epochs
from .optim import OptimizerState, decays, make_optimizer, opt_step

__all__ = [
    "MetricsLog", "OptimizerState", "TrainConfig", "decays", "evaluate", "iter_batches",
    "label_smoothed_ce", "make_optimizer", "opt_step", "predict_logits", "train_epochs",
]
