from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SpatialConfig


def fine_sample_params(f_prev: int, cfg: SpatialConfig) -> tuple[int, float]:
    n = cfg.n_cells / max(1, f_prev // 50)
    n_fine = int(np.clip(n, cfg.fine_min, cfg.fine_max))
    r_fine = float(np.clip(f_prev / 5000.0, cfg.fine_radius_min, cfg.fine_radius_max))
    return n_fine, r_fine


def sample_in_balls(rng: np.random.Generator, centers: np.ndarray, n: int, radius: float, cfg: SpatialConfig) -> np.ndarray:
    """Uniform points within ``radius`` of randomly chosen centres, clipped to the cube."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    if len(centers) == 0 or n <= 0:
        return np.zeros((0, 3))
    if len(centers) > cfg.fine_max_centers:
        centers = centers[rng.choice(len(centers), cfg.fine_max_centers, replace=False)]
    pick = centers[rng.integers(0, len(centers), n)]
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return np.clip(pick + direction * r[:, None], cfg.lower, cfg.upper)


@dataclass(frozen=True)
class ScanResult:
    points: np.ndarray
    distances: np.ndarray
    scores: np.ndarray
    grid_flaws: int
    fine_samples: int
