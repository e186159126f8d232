"""Spatial hardening loop wired through the governance roles and the knowledge base."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ..governance import (
    Bundle,
    CandidateTriage,
    ClusterTriage,
    Norm,
    NormKind,
    OodaRole,
    Refiner,
    RegressionReport,
    Role,
    TriageMode,
    Verifier,
    rollout,
    run_ooda_tick,
    submit_candidates,
)
from ..knowledge_base import KnowledgeBase
from ..oracle_stack import CoverageOverlay, OracleStack
from ..protocol import (
    CandidateFlaw,
    CorrectionType,
    GovernanceBatch,
    LocalCorrection,
    OracleRawOutput,
    StackGenesis,
    Trajectory,
    TrajectoryKind,
    TrajectoryStep,
    UnifiedQueryResult,
    VerifiedBreach,
)
from .config import SpatialConfig
from .oracle import GridOracle, classify_cells, expert_path, grid_centers, path_distance, reward_from_loss
from .planner import PatchPlanner
from .red_team import ScanResult, fine_sample_params, sample_in_balls
from .surface import synthetic_loss

SPATIAL_NORM_ID = "SPATIAL_SUPPORT_REQUIRED"
SPATIAL_CATEGORY = "spatial"
RED_ROLE = "red"


def spatial_norm(cfg: SpatialConfig) -> Norm:
    return Norm(
        SPATIAL_NORM_ID,
        NormKind.SPATIAL_BOUNDARY,
        {"field": "d", "threshold": cfg.basin_boundary},
        severity=1.0,
        description="reward outside the expert-supported region",
    )


def point_trajectory(points: np.ndarray, distances: np.ndarray, scores: Optional[np.ndarray] = None) -> Trajectory:
    steps = []
    for k, (p, d) in enumerate(zip(points, distances)):
        payload: dict[str, Any] = {"point": [float(p[0]), float(p[1]), float(p[2])], "d": float(d)}
        if scores is not None:
            payload["s"] = float(scores[k])
        steps.append(TrajectoryStep(payload))
    return Trajectory(TrajectoryKind.SPATIAL_POINT, tuple(steps))


def trajectory_points(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([st.payload["point"] for st in traj.steps], dtype=float).reshape(-1, 3)
    ds = np.array([st.payload["d"] for st in traj.steps], dtype=float)
    return pts, ds


def _spatial_candidates(kb: KnowledgeBase) -> list[CandidateFlaw]:
    return [c for c in kb.of_type(CandidateFlaw) if c.context.get("role") == RED_ROLE and c.category == SPATIAL_CATEGORY]


@dataclass
class SpatialRedTeam:
    """Full grid scan plus adaptive fine sampling around the flaws still active."""

    cfg: SpatialConfig
    centers: np.ndarray
    path: np.ndarray
    seed: int = 0
    last_scan: Optional[ScanResult] = field(default=None, repr=False)

    def observe(self, kb, stack, checkpoint):
        prior = _spatial_candidates(kb)
        iteration = len(prior) + 1
        prev_active = np.zeros((0, 3))
        if prior:
            pts, _ = trajectory_points(prior[-1].trajectory)
            scores, _ = stack.query_vectorized(pts)
            prev_active = pts[scores > self.cfg.sigma]
        return iteration, prev_active, stack

    def orient(self, obs):
        iteration, prev_active, stack = obs
        cfg = self.cfg
        pts = self.centers
        n_fine = 0
        if iteration >= 2 and len(prev_active):
            n_fine, r_fine = fine_sample_params(len(prev_active), cfg)
            rng = np.random.default_rng([self.seed, iteration])
            fine = sample_in_balls(rng, prev_active, n_fine, r_fine, cfg)
            pts = np.vstack([pts, fine])
        scores, version = stack.query_vectorized(pts)
        d = path_distance(pts, self.path)
        flaw = (scores > cfg.sigma) & (d > cfg.basin_boundary)
        n_grid = int(flaw[: len(self.centers)].sum())
        self.last_scan = ScanResult(pts[flaw], d[flaw], scores[flaw], n_grid, n_fine)
        return iteration, self.last_scan, version

    def decide(self, situation):
        return situation

    def act(self, plan, kb, stack):
        iteration, scan, version = plan
        if len(scan.points) == 0:
            return
        traj = point_trajectory(scan.points, scan.distances, scan.scores)
        signals = UnifiedQueryResult(raw=OracleRawOutput(s=float(scan.scores.max()), u=0.0, v_O=version))
        flaw = CandidateFlaw(
            context={"role": RED_ROLE, "iteration": iteration, "grid_flaws": scan.grid_flaws},
            trajectory=traj,
            signals=signals,
            v_O=version,
            category=SPATIAL_CATEGORY,
        )
        submit_candidates(kb, [flaw])


@dataclass
class SpatialOrienter:
    planner: PatchPlanner
    basin: np.ndarray
    last_plan: Any = None

    def orient(self, job, breaches: Sequence[VerifiedBreach], stack: OracleStack) -> Bundle:
        pts_list, d_list = [], []
        for b in breaches:
            p, d = trajectory_points(b.trajectory)
            pts_list.append(p)
            d_list.append(d)
        pts = np.vstack(pts_list) if pts_list else np.zeros((0, 3))
        ds = np.concatenate(d_list) if d_list else np.zeros(0)
        # running basin suppression is batch-local; the shadow regression guards the cumulative total
        plan = self.planner.plan(pts, ds, self.basin)
        self.last_plan = plan
        corrections: list[LocalCorrection] = []
        for k in plan.kernels:
            corrections.append(
                LocalCorrection(
                    CorrectionType.SPATIAL_FLAW_PATCH,
                    {"flaw_point": list(k.center), "support_radius": k.bandwidth},
                )
            )
            corrections.append(
                LocalCorrection(
                    CorrectionType.AUDIT_COVERAGE_UPDATE,
                    {"case_class": f"spatial|bw={k.bandwidth:.3f}|cov={k.covered}"},
                )
            )
        evidence = {
            "found": int(len(pts)),
            "patched": len(plan.kernels),
            "rejected": plan.rejected,
            "predicted_coverage": plan.predicted,
        }
        return Bundle(tuple(corrections), evidence)


@dataclass
class BasinRegression:
    """Every initially-basin cell must stay above the safety floor on the shadow stack."""

    basin: np.ndarray
    sigma: float

    def run(self, live: OracleStack, shadow: OracleStack) -> RegressionReport:
        scores, _ = shadow.query_vectorized(self.basin)
        kept = int((scores > self.sigma).sum())
        return RegressionReport(kept == len(self.basin), {"basin_preserved": kept, "basin_total": int(len(self.basin))})


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    found: int
    kernels: int
    predicted: int
    rejected: int
    basin: int
    flaws: int
    version: str

    def row(self) -> list[Any]:
        return [self.iteration, self.found, self.kernels, self.predicted, self.rejected, self.basin, self.flaws, self.version]


METRIC_COLUMNS = ("Iter", "Found", "Kern", "Predicted", "Reject", "Basin", "Flaws", "Oracle")


def format_table(metrics: Sequence[IterationMetrics]) -> str:
    rows = [list(METRIC_COLUMNS)] + [[str(v) for v in m.row()] for m in metrics]
    widths = [max(len(r[i]) for r in rows) for i in range(len(METRIC_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


@dataclass
class SpatialRun:
    metrics: list[IterationMetrics]
    initial_basin: int
    initial_flaws: int
    converged_at: Optional[int]
    batches: list[str]


class SpatialDemo:
    """Wires the grid oracle and the governance roles onto one KB for a spatial run."""

    def __init__(
        self,
        cfg: Optional[SpatialConfig] = None,
        seed: int = 0,
        adaptive: bool = True,
        kb: Optional[KnowledgeBase] = None,
        key: str = "spatial-demo-key",
        rewards: Optional[np.ndarray] = None,
        max_patches: Optional[int] = None,
        alarm: Optional[Callable[[str, GovernanceBatch, OracleStack], bool]] = None,
    ):
        self.cfg = cfg or SpatialConfig()
        self.seed = seed
        self.key = key
        self.alarm = alarm
        self.kb = kb if kb is not None else KnowledgeBase()
        self.centers = grid_centers(self.cfg)
        self.path = expert_path(self.cfg)
        if rewards is None:
            rewards = reward_from_loss(synthetic_loss(self.cfg, seed), self.cfg)
        self.rewards = np.asarray(rewards, dtype=float)
        self.d = path_distance(self.centers, self.path)
        classes = classify_cells(self.rewards, self.d, self.cfg)
        self.basin_mask = classes == "basin"
        self.initial_flaws = int((classes == "flaw").sum())
        self.basin = self.centers[self.basin_mask]

        overlay = CoverageOverlay(("coverage_class",), self.cfg.covered_u_a, self.cfg.uncovered_u_a, self.cfg.u_a_thresh)
        self.stack = OracleStack(GridOracle(self.rewards, self.cfg), overlay)
        self.kb.append(StackGenesis(self.stack.version, label="spatial"))

        planner = PatchPlanner(self.cfg, adaptive=adaptive, max_patches=max_patches)
        self.orienter = SpatialOrienter(planner, self.basin)
        self.red = SpatialRedTeam(self.cfg, self.centers, self.path, seed)
        norm = spatial_norm(self.cfg)
        severities = {norm.id: norm.severity}
        self.roles = [
            OodaRole(Role.RED, self.red),
            OodaRole(Role.TRIAGE, CandidateTriage(severities, TriageMode.FIFO)),
            OodaRole(Role.VERIFY, Verifier([norm])),
            OodaRole(Role.TRIAGE, ClusterTriage(severities, TriageMode.FIFO)),
            OodaRole(
                Role.REFINE,
                Refiner(self.orienter, BasinRegression(self.basin, self.cfg.sigma), self._resolved, key, capacity=1),
            ),
        ]

    def _resolved(self, breach: VerifiedBreach, stack: OracleStack) -> bool:
        pts, _ = trajectory_points(breach.trajectory)
        scores, _ = stack.query_vectorized(pts)
        return bool((scores <= self.cfg.sigma).all())

    def grid_state(self) -> tuple[int, int]:
        scores, _ = self.stack.query_vectorized(self.centers)
        active = scores > self.cfg.sigma
        return int((active & ~self.basin_mask & (self.d > self.cfg.basin_boundary)).sum()), int((active & self.basin_mask).sum())

    def iterate(self) -> IterationMetrics:
        appended: list[str] = []
        for role in self.roles:
            appended += run_ooda_tick(role, self.kb, self.stack)
        self.orienter_plan = self.orienter.last_plan
        batch = None
        for aid in appended:
            art = self.kb.get(aid)
            if isinstance(art, GovernanceBatch):
                batch = art
        kernels = predicted = rejected = 0
        if batch is not None:
            rollout(batch, self.kb, self.stack, self.key, alarm=self.alarm)
            ev = batch.regression_evidence
            kernels, predicted, rejected = int(ev["patched"]), int(ev["predicted_coverage"]), int(ev["rejected"])
        flaws, basin = self.grid_state()
        scan = self.red.last_scan
        found = 0 if scan is None else int(len(scan.points))
        iteration = len(_spatial_candidates(self.kb))
        return IterationMetrics(iteration, found, kernels, predicted, rejected, basin, flaws, self.stack.version)

    def run(self, max_iterations: Optional[int] = None, stop_at_zero: bool = True) -> SpatialRun:
        cap = max_iterations if max_iterations is not None else self.cfg.max_iterations
        metrics: list[IterationMetrics] = []
        converged = None
        for _ in range(cap):
            m = self.iterate()
            metrics.append(m)
            if m.flaws == 0 and converged is None:
                converged = len(metrics)
                if stop_at_zero:
                    break
        return SpatialRun(metrics, int(self.basin_mask.sum()), self.initial_flaws, converged, [b.batch_id for b in self.kb.of_type(GovernanceBatch)])


def run_fixed_bw_baseline(cfg: Optional[SpatialConfig] = None, seed: int = 0, max_iterations: Optional[int] = None) -> SpatialRun:
    return SpatialDemo(cfg, seed=seed, adaptive=False).run(max_iterations, stop_at_zero=True)


def point_cloud(demo: SpatialDemo) -> dict[str, Any]:
    """Per-cell scores and classes plus kernel centres, for external plotting."""
    scores, version = demo.stack.query_vectorized(demo.centers)
    centers, bws = demo.stack.oracle.kernel_arrays()
    return {
        "version": version,
        "cells": demo.centers.tolist(),
        "s": scores.tolist(),
        "class": classify_cells(scores, demo.d, demo.cfg).tolist(),
        "kernels": [{"center": c.tolist(), "bandwidth": float(b)} for c, b in zip(centers, bws)],
    }
