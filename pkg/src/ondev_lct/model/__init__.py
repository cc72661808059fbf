"""LCT architecture, variant registry and budget accounting."""

from . import checkpoint
from .budget import (
    BudgetReport,
    budget,
    count_macs,
    count_params,
    count_stats,
    encoder_macs,
    flat_layout,
    get_flat_params,
    set_flat_params,
)
from .config import LCTConfig, grid_variants, parse_variant
from .lct import LCTModel, build, seqpool

__all__ = [
    "BudgetReport", "LCTConfig", "LCTModel", "budget", "build", "checkpoint", "count_macs",
    "count_params", "count_stats", "encoder_macs", "flat_layout", "get_flat_params",
    "grid_variants", "parse_variant", "seqpool", "set_flat_params",
]
