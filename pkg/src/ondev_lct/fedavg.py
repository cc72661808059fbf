"""Single-process federated averaging simulator.

Each round samples clients, broadcasts the global flat vector, trains every
sampled client from it with a fresh optimizer, averages the results weighted
by client sample counts and evaluates the new global model. Clients run
sequentially and are reduced in id order, so a run is a pure function of its
seed, config and data.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data.dataset import Dataset
from .data.partition import Partition, PartitionSpec, dirichlet_partition
from .errors import ConfigError, DimensionError, ProtocolError
from .model.budget import flat_layout, get_flat_params, set_flat_params
from .model.config import LCTConfig
from .model.lct import LCTModel
from .tensor.rng import Rng
from .training.loop import TrainConfig, evaluate, train_epochs

log = logging.getLogger(__name__)


# -- client sampling -----------------------------------------------------

@dataclass(frozen=True)
class ClientSampler:
    """``all``, ``fixed`` (``k`` ids per round) or ``range`` (``lo..hi`` ids, count drawn uniformly)."""

    kind: str = "all"
    k: int | None = None
    lo: int | None = None
    hi: int | None = None

    def __post_init__(self):
        if self.kind not in ("all", "fixed", "range"):
            raise ConfigError(f"unknown client sampler {self.kind!r}")
        if self.kind == "fixed" and (self.k is None or self.k < 1):
            raise ConfigError("fixed sampler needs k >= 1")
        if self.kind == "range" and (self.lo is None or self.hi is None or not 1 <= self.lo <= self.hi):
            raise ConfigError("range sampler needs 1 <= lo <= hi")

    @classmethod
    def parse(cls, spec) -> "ClientSampler":
        """Accept ``"all"``, ``"fixed:10"``, ``"range:2-10"``, an int, or a dict of fields."""
        if isinstance(spec, ClientSampler):
            return spec
        if isinstance(spec, dict):
            try:
                return cls(**spec)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        if isinstance(spec, int) and not isinstance(spec, bool):
            return cls("fixed", k=spec)
        if isinstance(spec, str):
            if spec == "all":
                return cls("all")
            m = re.fullmatch(r"fixed:(\d+)", spec)
            if m:
                return cls("fixed", k=int(m.group(1)))
            m = re.fullmatch(r"range:(\d+)-(\d+)", spec)
            if m:
                return cls("range", lo=int(m.group(1)), hi=int(m.group(2)))
        raise ConfigError(f"cannot parse client sampler {spec!r}")

    def check(self, num_clients: int) -> None:
        if self.kind == "fixed" and self.k > num_clients:
            raise ConfigError(f"cannot sample {self.k} of {num_clients} clients")
        if self.kind == "range" and self.hi > num_clients:
            raise ConfigError(f"range upper bound {self.hi} exceeds {num_clients} clients")

    def to_json(self):
        if self.kind == "all":
            return "all"
        if self.kind == "fixed":
            return f"fixed:{self.k}"
        return f"range:{self.lo}-{self.hi}"


def sample_clients(strategy, num_clients: int, round_index: int, rng: Rng) -> list[int]:
    """Distinct, sorted client ids for one round, drawn from ``rng.child("sample", round_index)``."""
    sampler = ClientSampler.parse(strategy)
    sampler.check(num_clients)
    if sampler.kind == "all":
        return list(range(num_clients))
    gen = rng.child("sample", round_index).gen
    k = sampler.k if sampler.kind == "fixed" else int(gen.integers(sampler.lo, sampler.hi + 1))
    return sorted(int(i) for i in gen.choice(num_clients, size=k, replace=False))


# -- local training and aggregation --------------------------------------

@dataclass(frozen=True)
class ClientState:
    """What persists about a client across rounds: its id and its shard. Nothing else."""

    client_id: int
    indices: np.ndarray = field(compare=False)

    @property
    def num_samples(self) -> int:
        return int(len(self.indices))

    def stream(self, run_seed: int, round_index: int) -> Rng:
        return Rng(run_seed).child("client", round_index, self.client_id)


def local_update(global_flat: np.ndarray, client: ClientState, dataset: Dataset, cfg: TrainConfig,
                 model: LCTModel, rng: Rng) -> tuple[np.ndarray, int] | None:
    """Train a copy of the global model on one client's shard.

    ``model`` is scratch space: its contents are overwritten from
    ``global_flat``, which itself is never modified. Returns the trained
    flat vector and the shard size, or ``None`` for an empty shard.
    """
    if client.num_samples == 0:
        log.warning("client %d has no samples; skipped", client.client_id)
        return None
    set_flat_params(model, global_flat)
    if cfg.epochs > 0:
        train_epochs(model, dataset.subset(client.indices), cfg, rng)
    return get_flat_params(model), client.num_samples


def aggregate(updates: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Sample-count-weighted mean of flat vectors.

    A lone update is returned as is. Updates are summed in float64 in a
    canonical order (by vector bytes, then count), so the result does not
    depend on argument order at all, not even in the last ulp. The sum is
    then clipped to the elementwise min/max of the inputs. The exact mean
    always lies inside that envelope, so clipping only removes rounding
    overshoot, and identical inputs come back bit for bit.
    """
    if not updates:
        raise ProtocolError("aggregate needs at least one update")
    vecs = [np.asarray(v) for v, _ in updates]
    counts = [n for _, n in updates]
    size = vecs[0].shape
    for v in vecs:
        if v.ndim != 1 or v.shape != size:
            raise DimensionError(f"update shapes differ: {v.shape} vs {size}")
    for n in counts:
        if not n > 0:
            raise ProtocolError(f"sample counts must be positive, got {n}")
    if len(vecs) == 1:
        return vecs[0]
    dtype = vecs[0].dtype
    order = sorted(range(len(vecs)), key=lambda i: (vecs[i].astype(np.float64).tobytes(), counts[i]))
    total = float(sum(counts))
    acc = np.zeros(size, dtype=np.float64)
    for i in order:
        acc += (counts[i] / total) * vecs[i]
    stack = np.stack(vecs)
    np.clip(acc, stack.min(axis=0), stack.max(axis=0), out=acc)
    return acc.astype(dtype)


# -- full runs -----------------------------------------------------------

@dataclass(frozen=True)
class FedRunConfig:
    model: LCTConfig
    partition: PartitionSpec
    rounds: int = 10
    local_epochs: int = 5
    clients_per_round: object = "all"
    train: TrainConfig = TrainConfig()
    seed: int = 0
    halve_batch: bool = True
    aggregate_bn_stats: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        sampler = ClientSampler.parse(self.clients_per_round)
        sampler.check(self.partition.num_clients)
        object.__setattr__(self, "clients_per_round", sampler)

    def local_train(self) -> TrainConfig:
        """Per-client TrainConfig: ``local_epochs`` epochs, batch halved when ``halve_batch``."""
        batch = max(1, self.train.batch_size // 2) if self.halve_batch else self.train.batch_size
        return self.train.replace(epochs=self.local_epochs, batch_size=batch, max_steps=None)

    def replace(self, **changes) -> "FedRunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "partition": self.partition.to_dict(),
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "clients_per_round": self.clients_per_round.to_json(),
            "train": self.train.to_dict(),
            "seed": self.seed,
            "halve_batch": self.halve_batch,
            "aggregate_bn_stats": self.aggregate_bn_stats,
        }


@dataclass
class RoundRecord:
    round: int
    clients: list
    counts: list
    test_loss: float
    test_acc: float
    wall_ms: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class FedResult:
    records: list
    model: LCTModel
    initial_acc: float
    partition: Partition

    @property
    def accuracies(self) -> list[float]:
        return [r.test_acc for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)


def last_k_median(accs: Sequence[float], k: int = 5) -> float:
    return float(statistics.median(accs[-k:]))


def run(cfg: FedRunConfig, train_set: Dataset, test_set: Dataset, partition: Partition | None = None,
        on_round: Callable[[RoundRecord], None] | None = None, deterministic: bool = True) -> FedResult:
    """Execute ``cfg.rounds`` FedAvg rounds and return the records plus the final global model.

    The global model starts from ``Rng(cfg.seed)``; sampling and every
    client's local streams are separate children of the same seed.
    ``on_round`` fires after each round so callers can flush logs before a
    failure in a later round propagates.
    """
    if partition is None:
        partition = dirichlet_partition(train_set, cfg.partition)
    clients = [ClientState(cid, np.asarray(idx)) for cid, idx in enumerate(partition.clients)]
    root = Rng(cfg.seed)
    global_model = LCTModel(cfg.model, root)
    scratch = LCTModel(cfg.model, root)
    global_flat = get_flat_params(global_model)
    n_params, _ = flat_layout(global_model)
    local_cfg = cfg.local_train()
    initial_acc = evaluate(global_model, test_set, cfg.train.eval_batch_size)[1]
    records = []
    for r in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        ids = sample_clients(cfg.clients_per_round, len(clients), r, root)
        updates, used = [], []
        for cid in ids:
            out = local_update(global_flat, clients[cid], train_set, local_cfg, scratch,
                               clients[cid].stream(cfg.seed, r))
            if out is not None:
                updates.append(out)
                used.append(cid)
        if not updates:
            raise ProtocolError(f"round {r}: every sampled client was empty")
        new_flat = aggregate(updates)
        if not cfg.aggregate_bn_stats:
            new_flat = new_flat.copy()
            new_flat[n_params:] = global_flat[n_params:]
        global_flat = new_flat
        set_flat_params(global_model, global_flat)
        loss, acc = evaluate(global_model, test_set, cfg.train.eval_batch_size)
        rec = RoundRecord(r, used, [clients[c].num_samples for c in used], loss, acc,
                          0 if deterministic else int(round((time.perf_counter() - t0) * 1000)))
        records.append(rec)
        if on_round is not None:
            on_round(rec)
    return FedResult(records, global_model, initial_acc, partition)


def summarize(runs: dict, k: int = 5) -> dict:
    """Cross-run summary of per-round accuracy curves keyed by seed.

    Both readings of "best median of the last rounds over several runs" are
    reported: the best per-run median (``best_run_median``) and the best
    round of the across-run median curve (``best_round_median``).
    """
    if not runs:
        raise ProtocolError("no runs to summarize")
    per_run = {str(s): last_k_median(a, k) for s, a in runs.items()}
    curves = np.array([list(a) for a in runs.values()], dtype=np.float64)
    across = np.median(curves, axis=0)
    return {
        "window": k,
        "run_medians": per_run,
        "median_of_run_medians": float(statistics.median(per_run.values())),
        "best_run_median": max(per_run.values()),
        "best_round_median": float(across[-k:].max()),
    }
