"""3D spatial hardening demo over a seeded synthetic reward grid."""

from .config import SpatialConfig
from .demo import (
    METRIC_COLUMNS,
    BasinRegression,
    IterationMetrics,
    SpatialDemo,
    SpatialOrienter,
    SpatialRedTeam,
    SpatialRun,
    format_table,
    point_cloud,
    run_fixed_bw_baseline,
    spatial_norm,
)
from .oracle import CellClass, GridOracle, classify_cell, classify_cells, expert_path, grid_centers, path_distance, reward_from_loss
from .planner import PatchPlanner, Plan, PlannedKernel, proposed_bandwidth, safe_bandwidth
from .red_team import fine_sample_params, sample_in_balls
from .surface import synthetic_loss

__all__ = [
    "BasinRegression",
    "CellClass",
    "GridOracle",
    "IterationMetrics",
    "METRIC_COLUMNS",
    "PatchPlanner",
    "Plan",
    "PlannedKernel",
    "SpatialConfig",
    "SpatialDemo",
    "SpatialOrienter",
    "SpatialRedTeam",
    "SpatialRun",
    "classify_cell",
    "classify_cells",
    "expert_path",
    "fine_sample_params",
    "format_table",
    "grid_centers",
    "path_distance",
    "point_cloud",
    "proposed_bandwidth",
    "reward_from_loss",
    "run_fixed_bw_baseline",
    "safe_bandwidth",
    "sample_in_balls",
    "spatial_norm",
    "synthetic_loss",
]
