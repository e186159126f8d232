"""Batch patch planning under a cumulative basin-suppression budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SpatialConfig
from .oracle import effective_radius


@dataclass(frozen=True)
class PlannedKernel:
    center: tuple[float, float, float]
    bandwidth: float
    distance: float
    covered: int


@dataclass(frozen=True)
class Plan:
    kernels: tuple[PlannedKernel, ...]
    rejected: int
    predicted: int
    handled: np.ndarray = field(repr=False, compare=False, default_factory=lambda: np.zeros(0, bool))


def proposed_bandwidth(d: float, cfg: SpatialConfig) -> float:
    return float(np.clip((d - cfg.basin_boundary) * cfg.bandwidth_gain, cfg.beta_min, cfg.beta_max))


def safe_bandwidth(d_near: float, cfg: SpatialConfig) -> float:
    return d_near / math.sqrt(-2.0 * math.log(cfg.eta))


def _gauss(d2: np.ndarray, bw: float) -> np.ndarray:
    return np.exp(-d2 / (2.0 * bw * bw))


class PatchPlanner:
    """Farthest-first kernel placement.

    Adaptive mode shrinks bandwidths to protect the basin and binary-searches
    when the cumulative budget binds; flaws already predicted covered by an
    accepted kernel are skipped.  Fixed mode keeps one bandwidth without
    prediction, but still rejects kernels that would break the basin budget.
    """

    def __init__(self, cfg: SpatialConfig, adaptive: bool = True, max_patches: Optional[int] = None, bandwidth: Optional[float] = None):
        self.cfg = cfg
        self.adaptive = adaptive
        self.max_patches = max_patches if max_patches is not None else (cfg.max_patches if adaptive else cfg.fixed_budget)
        self.bandwidth = bandwidth if bandwidth is not None else cfg.fixed_bandwidth

    def plan(
        self,
        flaws: np.ndarray,
        distances: np.ndarray,
        basin: np.ndarray,
        existing_centers: Optional[np.ndarray] = None,
        existing_bandwidths: Optional[np.ndarray] = None,
    ) -> Plan:
        cfg = self.cfg
        flaws = np.asarray(flaws, dtype=float).reshape(-1, 3)
        distances = np.asarray(distances, dtype=float).reshape(-1)
        basin = np.asarray(basin, dtype=float).reshape(-1, 3)
        n = len(flaws)
        handled = np.zeros(n, dtype=bool)
        if n == 0:
            return Plan((), 0, 0, handled)

        running = np.zeros(len(basin))
        if existing_centers is not None and len(existing_centers) and len(basin):
            for c, bw in zip(np.asarray(existing_centers), np.asarray(existing_bandwidths)):
                running += _gauss(((basin - c) ** 2).sum(1), float(bw))

        def fits(d2: np.ndarray, bw: float) -> bool:
            return len(d2) == 0 or float(np.max(running + _gauss(d2, bw))) <= cfg.eta

        kernels: list[PlannedKernel] = []
        rejected = 0
        predicted = np.zeros(n, dtype=bool)
        order = np.argsort(-distances, kind="stable")
        for i in order:
            if len(kernels) >= self.max_patches:
                break
            if handled[i]:
                continue
            p = flaws[i]
            d2 = ((basin - p) ** 2).sum(1) if len(basin) else np.zeros(0)
            if self.adaptive:
                bw = proposed_bandwidth(float(distances[i]), cfg)
                if len(basin):
                    bw = min(bw, cfg.safe_shrink * safe_bandwidth(float(math.sqrt(d2.min())), cfg))
                if not fits(d2, cfg.beta_min):
                    rejected += 1
                    handled[i] = True
                    continue
                if not fits(d2, bw):
                    lo, hi = cfg.beta_min / 2.0, bw
                    for _ in range(cfg.binary_search_steps):
                        mid = 0.5 * (lo + hi)
                        if fits(d2, mid):
                            lo = mid
                        else:
                            hi = mid
                    bw = lo
            else:
                bw = self.bandwidth
                if not fits(d2, bw):
                    rejected += 1
                    handled[i] = True
                    continue
            if len(basin):
                running += _gauss(d2, bw)
            if self.adaptive:
                within = np.sqrt(((flaws - p) ** 2).sum(1)) <= effective_radius(bw, cfg.sigma)
                within[i] = True
            else:
                within = np.zeros(n, dtype=bool)
                within[i] = True
            newly = within & ~predicted
            predicted |= within
            handled |= within
            kernels.append(PlannedKernel((float(p[0]), float(p[1]), float(p[2])), float(bw), float(distances[i]), int(newly.sum())))
        return Plan(tuple(kernels), rejected, int(predicted.sum()), handled)
