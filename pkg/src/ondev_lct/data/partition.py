"""Dirichlet non-IID client partitions and their heterogeneity statistics."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, PartitionError
from ..tensor.rng import Rng


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    beta: float
    seed: int = 0
    min_samples_per_client: int = 10
    max_retries: int = 100

    def __post_init__(self):
        if not isinstance(self.num_clients, int) or self.num_clients < 1:
            raise ConfigError(f"num_clients must be a positive int, got {self.num_clients!r}")
        if not self.beta > 0:
            raise ConfigError(f"Dirichlet concentration must be positive, got {self.beta}")
        if self.min_samples_per_client < 0:
            raise ConfigError("min_samples_per_client must be nonnegative")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Partition:
    clients: list
    spec: PartitionSpec | None = None
    attempts: int = 1

    def __len__(self) -> int:
        return len(self.clients)

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.clients]

    def to_json(self) -> str:
        doc = {"spec": self.spec.to_dict() if self.spec else None,
               "clients": [[int(i) for i in c] for c in self.clients]}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        doc = json.loads(text)
        spec = PartitionSpec(**doc["spec"]) if doc.get("spec") else None
        return cls([np.asarray(c, dtype=np.int64) for c in doc["clients"]], spec)


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``total`` that track ``total * proportions``.

    Leftover units go to the largest fractional parts; ties favour the
    lower index.
    """
    raw = total * np.asarray(proportions, dtype=np.float64)
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _labels_of(data) -> np.ndarray:
    return np.asarray(data.labels if hasattr(data, "labels") else data, dtype=np.int64)


def dirichlet_partition(data, spec: PartitionSpec) -> Partition:
    """Split sample indices across clients class by class.

    For every class a client-share vector is drawn from
    ``Dirichlet(beta * 1)``; the class's (shuffled) indices are cut by those
    shares. A draw leaving any client under ``min_samples_per_client`` is
    discarded and redrawn, up to ``max_retries`` times.
    """
    labels = _labels_of(data)
    n = labels.size
    if spec.num_clients * spec.min_samples_per_client > n:
        raise PartitionError(
            f"{spec.num_clients} clients x {spec.min_samples_per_client} samples exceeds {n} samples")
    classes = np.unique(labels)
    by_class = [np.flatnonzero(labels == k) for k in classes]
    alpha = np.full(spec.num_clients, float(spec.beta))
    root = Rng(spec.seed).child("partition")
    for attempt in range(spec.max_retries):
        gen = root.child(attempt).gen
        buckets: list[list[np.ndarray]] = [[] for _ in range(spec.num_clients)]
        for idx in by_class:
            shares = gen.dirichlet(alpha)
            counts = largest_remainder(idx.size, shares)
            shuffled = gen.permutation(idx)
            for cid, part in enumerate(np.split(shuffled, np.cumsum(counts)[:-1])):
                buckets[cid].append(part)
        clients = [np.sort(np.concatenate(b)) if b else np.zeros(0, np.int64) for b in buckets]
        if min(len(c) for c in clients) >= spec.min_samples_per_client:
            return Partition(clients, spec, attempts=attempt + 1)
    raise PartitionError(
        f"no partition with >= {spec.min_samples_per_client} samples per client after {spec.max_retries} draws")


def iid_partition(n: int, num_clients: int, seed: int = 0) -> Partition:
    """Uniformly shuffled, near-equal shards (the beta -> infinity limit)."""
    perm = Rng(seed).child("iid").gen.permutation(n)
    return Partition([np.sort(p) for p in np.array_split(perm, num_clients)], None)


# -- statistics ---------------------------------------------------------

STATS_SCHEMA = {
    "type": "object",
    "required": ["num_clients", "num_classes", "sizes", "histogram", "max_share", "max_share_median",
                 "effective_classes", "effective_classes_median", "empty_classes"],
    "properties": {
        "num_clients": {"type": "integer", "minimum": 1},
        "num_classes": {"type": "integer", "minimum": 1},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "histogram": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "max_share": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "max_share_median": {"type": "number"},
        "effective_classes": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "effective_classes_median": {"type": "number"},
        "empty_classes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
    "additionalProperties": False,
}


def partition_stats(partition: Partition, data, num_classes: int | None = None) -> dict:
    """Per-client class histograms plus heterogeneity summaries.

    ``max_share`` is the largest class fraction inside a client;
    ``effective_classes`` is ``exp(entropy)`` of the client's class mix.
    """
    labels = _labels_of(data)
    if num_classes is None:
        num_classes = int(getattr(data, "num_classes", labels.max() + 1))
    hist = np.stack([np.bincount(labels[c], minlength=num_classes) for c in partition.clients])
    sizes = hist.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(sizes[:, None] > 0, hist / np.maximum(sizes[:, None], 1), 0.0)
        logs = np.where(frac > 0, np.log(np.where(frac > 0, frac, 1.0)), 0.0)
    max_share = frac.max(axis=1)
    eff = np.exp(-(frac * logs).sum(axis=1))
    return {
        "num_clients": len(partition.clients),
        "num_classes": num_classes,
        "sizes": [int(s) for s in sizes],
        "histogram": hist.astype(int).tolist(),
        "max_share": [float(v) for v in max_share],
        "max_share_median": float(np.median(max_share)),
        "effective_classes": [float(v) for v in eff],
        "effective_classes_median": float(np.median(eff)),
        "empty_classes": [int(v) for v in (hist == 0).sum(axis=1)],
    }


def stats_csv(stats: dict) -> str:
    """``client,size,class_0,...`` rows for external plotting."""
    k = stats["num_classes"]
    lines = ["client,size," + ",".join(f"class_{i}" for i in range(k))]
    for cid, row in enumerate(stats["histogram"]):
        lines.append(f"{cid},{stats['sizes'][cid]}," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
