from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping


@dataclass(frozen=True)
class SpatialConfig:
    grid_n: int = 20
    lower: float = -1.0
    upper: float = 1.0
    loss_cap: float = 0.3
    loss_prethreshold: float = 0.04
    sentinel_loss: float = 999_999.0
    sigma: float = 0.005
    basin_boundary: float = 0.34
    eta: float = 0.10
    beta_min: float = 0.03
    beta_max: float = 0.30
    bandwidth_gain: float = 0.5
    safe_shrink: float = 0.9
    max_patches: int = 200
    binary_search_steps: int = 15
    path_points: int = 20
    fine_min: int = 500
    fine_max: int = 2000
    fine_radius_min: float = 0.12
    fine_radius_max: float = 0.35
    fine_max_centers: int = 200
    max_iterations: int = 20
    fixed_bandwidth: float = 0.05
    fixed_budget: int = 60
    # synthetic surface
    tube_radius: float = 0.40
    tube_keep: float = 0.85
    pocket_count: int = 100
    pocket_radius_min: float = 0.10
    pocket_radius_max: float = 0.32
    pocket_clearance: float = 0.08
    low_loss_max: float = 0.035
    # overlay constants for spatial coverage classes
    covered_u_a: float = 0.15
    uncovered_u_a: float = 0.85
    u_a_thresh: float = 0.6

    def __post_init__(self) -> None:
        if not self.beta_min < self.beta_max:
            raise ValueError("beta_min must be below beta_max")
        if not 0 < self.sigma < self.eta < 1:
            raise ValueError("need 0 < sigma < eta < 1")
        if self.grid_n < 2 or self.path_points < 2:
            raise ValueError("grid and path need at least two points")

    @property
    def n_cells(self) -> int:
        return self.grid_n**3

    def replace(self, **changes: Any) -> "SpatialConfig":
        return SpatialConfig(**{**asdict(self), **changes})

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "SpatialConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown spatial config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "SpatialConfig":
        return cls.from_mapping(json.loads(Path(path).read_text(encoding="utf-8")))
