"""Experiment grids, relative-improvement statistics, rank correlation and clustering."""

from .cluster import Merge, format_dendrogram, hierarchical_cluster
from .grid import (
    BASELINE,
    DatasetSpec,
    GridResult,
    GridSpec,
    RunRecord,
    Variant,
    apply_subset,
    plan_jobs,
    read_records,
    run_cell,
    run_grid,
    spec_from_records,
    summarize,
    write_grid_outputs,
)
from .stats import improvement_interval, kendall_tau, relative_improvement

__all__ = [
    "BASELINE",
    "DatasetSpec",
    "GridResult",
    "GridSpec",
    "Merge",
    "RunRecord",
    "Variant",
    "apply_subset",
    "format_dendrogram",
    "hierarchical_cluster",
    "improvement_interval",
    "kendall_tau",
    "plan_jobs",
    "read_records",
    "relative_improvement",
    "run_cell",
    "run_grid",
    "spec_from_records",
    "summarize",
    "write_grid_outputs",
]
