"""Grid oracle over a precomputed reward vector with Gaussian suppression kernels."""

from __future__ import annotations

import enum
import math
from typing import Any, Mapping, Optional

import numpy as np

from ..oracle_stack import OracleEvaluation
from ..protocol import CorrectionType, LocalCorrection, Trajectory, TrajectoryKind
from .config import SpatialConfig

_CHUNK = 4096


class CellClass(str, enum.Enum):
    BASIN = "basin"
    FLAW = "flaw"
    INACTIVE = "inactive"


def grid_axis(cfg: SpatialConfig) -> np.ndarray:
    return np.linspace(cfg.lower, cfg.upper, cfg.grid_n)


def grid_centers(cfg: SpatialConfig) -> np.ndarray:
    ax = grid_axis(cfg)
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def expert_path(cfg: SpatialConfig, t: Optional[np.ndarray] = None) -> np.ndarray:
    if t is None:
        t = np.linspace(0.0, 1.0, cfg.path_points)
    t = np.asarray(t, dtype=float)
    base = -1.0 + 2.0 * t
    y = np.clip(base + 0.8 * np.sin(np.pi * t), -1.0, 1.0)
    z = np.clip(base + 0.8 * np.cos(np.pi * t), -1.0, 1.0)
    return np.stack([base, y, z], axis=-1)


def reward_from_loss(loss: Any, cfg: SpatialConfig) -> Any:
    """Losses at or above the pre-threshold become the sentinel before capping."""
    arr = np.asarray(loss, dtype=float)
    arr = np.where(arr >= cfg.loss_prethreshold, cfg.sentinel_loss, arr)
    r = 1.0 - np.minimum(arr / cfg.loss_cap, 1.0)
    return float(r) if r.ndim == 0 else r


def path_distance(points: np.ndarray, path: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(points)
    diff = pts[:, None, :] - path[None, :, :]
    return np.sqrt((diff**2).sum(-1)).min(axis=1)


def classify_cell(r: float, d: float, cfg: SpatialConfig) -> CellClass:
    if r <= cfg.sigma:
        return CellClass.INACTIVE
    return CellClass.BASIN if d <= cfg.basin_boundary else CellClass.FLAW


def classify_cells(r: np.ndarray, d: np.ndarray, cfg: SpatialConfig) -> np.ndarray:
    out = np.full(r.shape, CellClass.INACTIVE.value, dtype=object)
    active = r > cfg.sigma
    out[active & (d <= cfg.basin_boundary)] = CellClass.BASIN.value
    out[active & (d > cfg.basin_boundary)] = CellClass.FLAW.value
    return out


def snap_index(points: np.ndarray, cfg: SpatialConfig) -> np.ndarray:
    """Flat index of the nearest cell centre; exact midpoints go to the lower index."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    step = (cfg.upper - cfg.lower) / (cfg.grid_n - 1)
    t = (pts - cfg.lower) / step
    idx = np.clip(np.ceil(t - 0.5), 0, cfg.grid_n - 1).astype(int)
    n = cfg.grid_n
    return idx[:, 0] * n * n + idx[:, 1] * n + idx[:, 2]


def kernel_values(points: np.ndarray, centers: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Uncapped sum of Gaussian kernels at each point."""
    pts = np.atleast_2d(points)
    out = np.zeros(len(pts))
    if len(centers) == 0:
        return out
    inv = 1.0 / (2.0 * bandwidths**2)
    for lo in range(0, len(pts), _CHUNK):
        block = pts[lo : lo + _CHUNK]
        d2 = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        out[lo : lo + _CHUNK] = np.exp(-d2 * inv[None, :]).sum(axis=1)
    return out


def effective_radius(bandwidth: float, sigma: float) -> float:
    return bandwidth * math.sqrt(-2.0 * math.log(sigma))


class GridOracle:
    """Read-only rewards plus a growing kernel list; scores are reward minus capped suppression."""

    supported_kinds = frozenset({TrajectoryKind.SPATIAL_POINT})

    def __init__(self, rewards: np.ndarray, cfg: SpatialConfig):
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != (cfg.n_cells,):
            raise ValueError(f"expected {cfg.n_cells} rewards, got {rewards.shape}")
        if rewards.min() < 0 or rewards.max() > 1:
            raise ValueError("rewards must lie in [0, 1]")
        self.cfg = cfg
        self.rewards = rewards.copy()
        self.rewards.flags.writeable = False
        self.kernels: list[tuple[float, float, float, float, str]] = []
        self._cache: Optional[tuple[np.ndarray, np.ndarray]] = None

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            if self.kernels:
                arr = np.array([k[:4] for k in self.kernels], dtype=float)
                self._cache = (arr[:, :3], arr[:, 3])
            else:
                self._cache = (np.zeros((0, 3)), np.zeros(0))
        return self._cache

    def suppression(self, points: np.ndarray) -> np.ndarray:
        centers, bws = self.kernel_arrays()
        return np.minimum(1.0, kernel_values(points, centers, bws))

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = self.rewards[snap_index(pts, self.cfg)]
        return np.maximum(0.0, r - self.suppression(pts))

    def evaluate(self, context: Mapping[str, Any], trajectory: Trajectory) -> OracleEvaluation:
        point = np.asarray(trajectory.payload["point"], dtype=float)
        s = float(self.evaluate_many(point[None, :])[0])
        centers, bws = self.kernel_arrays()
        refs: tuple[str, ...] = ()
        if len(centers):
            vals = np.exp(-((centers - point) ** 2).sum(-1) / (2.0 * bws**2))
            refs = tuple(dict.fromkeys(self.kernels[i][4] for i in np.nonzero(vals > self.cfg.sigma)[0]))
        return OracleEvaluation(s=s, u=0.0, evidence_refs=refs)

    def add_kernel(self, center: Any, bandwidth: float, batch_id: str = "") -> None:
        x, y, z = (float(v) for v in center)
        if bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        self.kernels.append((x, y, z, float(bandwidth), batch_id))
        self._cache = None

    def apply_correction(self, correction: LocalCorrection, batch_id: str) -> bool:
        if correction.correction_type is not CorrectionType.SPATIAL_FLAW_PATCH:
            return False
        self.add_kernel(correction.payload["flaw_point"], float(correction.payload["support_radius"]), batch_id)
        return True

    def snapshot(self) -> dict[str, Any]:
        return {"kernels": [list(k) for k in self.kernels]}

    def restore(self, state: Mapping[str, Any]) -> None:
        self.kernels = [(float(a), float(b), float(c), float(d), str(e)) for a, b, c, d, e in state["kernels"]]
        self._cache = None

    def __deepcopy__(self, memo: dict) -> "GridOracle":
        twin = GridOracle.__new__(GridOracle)
        twin.cfg = self.cfg
        twin.rewards = self.rewards  # immutable, safe to share
        twin.kernels = list(self.kernels)
        twin._cache = None
        return twin
