"""Seeded procedural loss surface standing in for a trained reward model's loss grid.

Low loss sits in a tube around the expert path (basin cells, plus a thin band
of flaw cells just past the basin boundary) and in ellipsoidal pockets away
from the path (flaw cells).  Everything else is left at a loss that the
pre-threshold turns into the sentinel.
"""

from __future__ import annotations

import numpy as np

from .config import SpatialConfig
from .oracle import expert_path, grid_centers, path_distance

HIGH_LOSS = 1.0


def synthetic_loss(cfg: SpatialConfig, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = grid_centers(cfg)
    d = path_distance(centers, expert_path(cfg))
    loss = np.full(len(centers), HIGH_LOSS)

    tube = (d <= cfg.tube_radius) & (rng.random(len(centers)) < cfg.tube_keep)
    loss[tube] = rng.uniform(0.0, cfg.low_loss_max, tube.sum())

    far_enough = cfg.basin_boundary + cfg.pocket_clearance
    placed = 0
    attempts = 0
    while placed < cfg.pocket_count and attempts < 50 * cfg.pocket_count:
        attempts += 1
        c = rng.uniform(cfg.lower, cfg.upper, 3)
        if path_distance(c[None, :], expert_path(cfg))[0] < far_enough + cfg.pocket_radius_min:
            continue
        radii = rng.uniform(cfg.pocket_radius_min, cfg.pocket_radius_max, 3)
        inside = (((centers - c) / radii) ** 2).sum(axis=1) <= 1.0
        inside &= d > far_enough
        loss[inside] = np.minimum(loss[inside], rng.uniform(0.0, cfg.low_loss_max, inside.sum()))
        placed += 1
    return loss
