"""Class-conditional Gaussian-blob images for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from ..tensor.rng import Rng
from .dataset import Dataset


def class_prototypes(num_classes: int, h: int, w: int, c: int, task_seed: int, bumps: int = 3) -> np.ndarray:
    """One smooth template per class: a few signed Gaussian bumps per channel."""
    gen = Rng(task_seed).child("synth", "prototypes").gen
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    protos = np.zeros((num_classes, h, w, c))
    for k in range(num_classes):
        for ch in range(c):
            for _ in range(bumps):
                cy, cx = gen.uniform(0, h), gen.uniform(0, w)
                width = gen.uniform(0.1, 0.25) * min(h, w)
                sign = gen.choice((-1.0, 1.0))
                protos[k, :, :, ch] += sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    return protos


def synth_dataset(n: int, num_classes: int = 10, h: int = 28, w: int = 28, c: int = 1, seed: int = 0,
                  task_seed: int | None = None, signal: float = 1.0, noise: float = 1.0,
                  name: str = "synthetic", split: str = "train") -> Dataset:
    """``n`` samples ``signal * prototype[label] + noise * N(0, 1)``.

    Labels are assigned round-robin and then shuffled, so every class count
    is within one of ``n / num_classes``. ``task_seed`` (default ``seed``)
    fixes the class templates. Train and test sets of one task share
    ``task_seed`` and differ in ``split`` (or ``seed``).
    """
    task_seed = seed if task_seed is None else task_seed
    protos = class_prototypes(num_classes, h, w, c, task_seed)
    gen = Rng(seed).child("synth", "samples", task_seed, split).gen
    labels = gen.permutation(np.arange(n) % num_classes)
    x = signal * protos[labels] + noise * gen.standard_normal((n, h, w, c))
    return Dataset(x.astype(np.float32), labels.astype(np.int64), num_classes, name)
