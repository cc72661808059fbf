"""Dataset ingestion, synthetic tasks and Dirichlet client partitioning."""

from .dataset import Dataset, manifest, normalization, standardize
from .formats import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    encode_cifar,
    encode_idx,
    load_cifar_binary,
    load_idx,
    parse_cifar,
    parse_idx,
    read_idx,
    write_idx,
)
from .partition import (
    STATS_SCHEMA,
    Partition,
    PartitionSpec,
    dirichlet_partition,
    iid_partition,
    largest_remainder,
    partition_stats,
    stats_csv,
)
from .synth import class_prototypes, synth_dataset

__all__ = [
    "Dataset", "IDX_IMAGES_MAGIC", "IDX_LABELS_MAGIC", "Partition", "PartitionSpec", "STATS_SCHEMA",
    "class_prototypes", "dirichlet_partition", "encode_cifar", "encode_idx", "iid_partition",
    "largest_remainder", "load_cifar_binary", "load_idx", "manifest", "normalization", "parse_cifar",
    "parse_idx", "partition_stats", "read_idx", "standardize", "stats_csv", "synth_dataset", "write_idx",
]
