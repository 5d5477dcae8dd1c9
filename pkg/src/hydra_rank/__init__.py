"""Hierarchical and dynamic rank scheduling for low-rank adapter fine-tuning.

Pipeline: profile per-layer gradient norms, partition layers into stages by
1-D k-means, allocate coarse per-stage ranks under the baseline budget,
optionally refine per-component ranks, search the schedule space with a
lightweight performance model, and export the result as a rank-pattern
config for downstream tooling.
"""

from .core import (
    Budget,
    ComponentKind,
    ComponentRanks,
    ModelShape,
    RankSchedule,
    param_count,
    rank_total,
    rank_total_all_components,
    schedule_hash,
    validate,
)

__all__ = [
    "Budget",
    "ComponentKind",
    "ComponentRanks",
    "ModelShape",
    "RankSchedule",
    "param_count",
    "rank_total",
    "rank_total_all_components",
    "schedule_hash",
    "validate",
]

__version__ = "0.1.0"
