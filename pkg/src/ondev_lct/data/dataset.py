"""In-memory labelled image sets and normalization constants."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np


@dataclass
class Dataset:
    """``images`` is ``[N, H, W, C]`` float32 (normalized); ``labels`` is ``int64[N]``."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, H, W, C], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, indices, name: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.images[indices], self.labels[indices], self.num_classes, name or self.name)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))), f"{self.name}[:{n}]")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@lru_cache(maxsize=1)
def manifest() -> dict:
    text = resources.files("ondev_lct.data").joinpath("manifest.json").read_text(encoding="utf-8")
    return json.loads(text)


def normalization(name: str, raw01: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel ``(mean, std)`` for ``name``.

    Falls back to statistics of ``raw01`` (pixels already scaled to [0, 1])
    when the manifest has no fixed constants for the dataset.
    """
    entry = manifest()["datasets"].get(name)
    if entry is not None and entry.get("mean") is not None:
        return np.asarray(entry["mean"], dtype=np.float32), np.asarray(entry["std"], dtype=np.float32)
    if raw01 is None:
        raise KeyError(f"no normalization constants for {name!r}")
    axes = tuple(range(raw01.ndim - 1))
    return raw01.mean(axis=axes).astype(np.float32), raw01.std(axis=axes).astype(np.float32)


def standardize(raw_uint8: np.ndarray, name: str, stats: tuple | None = None) -> np.ndarray:
    x = raw_uint8.astype(np.float32) / np.float32(255.0)
    mean, std = stats if stats is not None else normalization(name, x)
    x -= mean
    x /= std
    return x
