"""Centralized training and evaluation loops."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ArgumentError, ConfigError, NumericError
from ..tensor import ops
from ..tensor.rng import Rng
from ..tensor.tensor import Tensor, no_grad
from .optim import OptimizerState, make_optimizer, opt_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float | None = None
    label_smoothing: float = 0.1
    seed: int = 0
    eval_every: int = 1
    eval_batch_size: int = 500
    max_steps: int | None = None
    deterministic: bool = True
    dtype: str = "f32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.optimizer not in ("adam", "adamw"):
            raise ConfigError(f"optimizer must be 'adam' or 'adamw', got {self.optimizer!r}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be 'f32' or 'f64'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def make_optimizer(self) -> OptimizerState:
        return make_optimizer(self.optimizer, self.lr, self.weight_decay)


class MetricsLog(list):
    """Per-epoch records ``{epoch, train_loss, train_acc, test_acc, wall_ms}``."""

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self)

    @property
    def final(self) -> dict:
        return self[-1] if self else {}


def iter_batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def train_epochs(model, dataset, cfg: TrainConfig, rng: Rng, test_set=None,
                 on_epoch: Callable[[dict], None] | None = None,
                 optimizer: OptimizerState | None = None) -> MetricsLog:
    """Train ``model`` in place for ``cfg.epochs`` epochs.

    Each epoch reshuffles with ``rng.child("shuffle", epoch)``; dropout
    draws from ``rng.child("dropout")``. ``on_epoch`` sees every record as
    soon as it exists, so callers can flush partial logs. The model is left
    in eval mode.
    """
    n = len(dataset)
    if n == 0:
        raise ArgumentError("cannot train on an empty dataset")
    opt = optimizer if optimizer is not None else cfg.make_optimizer()
    model.set_rng(rng.child("dropout"))
    log = MetricsLog()
    steps = 0
    images, labels = dataset.images, dataset.labels
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.child("shuffle", epoch).gen.permutation(n)
        model.train()
        loss_sum, correct, seen = 0.0, 0, 0
        for idx in iter_batches(n, cfg.batch_size, order):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            x = Tensor(images[idx], dtype=model.dtype)
            y = labels[idx]
            model.zero_grad()
            logits = model(x)
            loss = ops.label_smoothed_ce(logits, y, cfg.label_smoothing)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise NumericError(f"non-finite training loss at epoch {epoch}, step {steps}")
            loss.backward()
            opt_step(opt, model.params)
            steps += 1
            loss_sum += lv * len(idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(idx)
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / max(seen, 1),
            "train_acc": correct / max(seen, 1),
            "test_acc": None,
            "wall_ms": 0,
        }
        if test_set is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            record["test_acc"] = evaluate(model, test_set, cfg.eval_batch_size, cfg.label_smoothing)[1]
        if not cfg.deterministic:
            record["wall_ms"] = int(round((time.perf_counter() - t0) * 1000))
        log.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    model.eval()
    return log


def predict_logits(model, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = [model(Tensor(images[i], dtype=model.dtype)).data for i in iter_batches(len(images), batch_size)]
    finally:
        model.training = was_training
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes), dtype=model.dtype)


def evaluate(model, dataset, batch_size: int = 500, label_smoothing: float = 0.0) -> tuple[float, float]:
    """``(loss, top1)`` in eval mode; parameters and BN statistics are untouched.

    Argmax ties resolve to the lowest class index.
    """
    n = len(dataset)
    if n == 0:
        return float("nan"), float("nan")
    loss_sum, correct = 0.0, 0
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for idx in iter_batches(n, batch_size):
                logits = model(Tensor(dataset.images[idx], dtype=model.dtype))
                y = dataset.labels[idx]
                loss_sum += float(ops.label_smoothed_ce(logits, y, label_smoothing).data) * len(idx)
                correct += int((logits.data.argmax(axis=1) == y).sum())
    finally:
        model.training = was_training
    return loss_sum / n, correct / n
