"""Governed oracle stack: a raw oracle and a coverage overlay behind one versioned query interface."""

from __future__ import annotations

import copy
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .protocol import (
    AuditStatus,
    CorrectionType,
    FlywheelOverlaySignals,
    GovernanceBatch,
    LocalCorrection,
    OracleRawOutput,
    ProtocolError,
    Trajectory,
    TrajectoryKind,
    UnifiedQueryResult,
    canonical_json,
    sha256_hex,
)


class OracleTimeout(ProtocolError):
    """Oracle evaluation exceeded the latency budget."""


class UnsupportedTrajectory(ProtocolError):
    pass


class BatchRejected(ProtocolError):
    pass


class CoverageKeyError(KeyError):
    pass


@dataclass(frozen=True)
class QueryFlags:
    f_s: bool = True
    f_u: bool = True
    f_ua: bool = True
    f_thresh: bool = True

    def __post_init__(self) -> None:
        if not (self.f_s or self.f_u or self.f_ua or self.f_thresh):
            raise ValueError("at least one query flag must be set")


ALL_FLAGS = QueryFlags()
SCORE_ONLY = QueryFlags(f_s=True, f_u=False, f_ua=False, f_thresh=False)


@dataclass(frozen=True)
class OracleEvaluation:
    """What a concrete oracle returns before the stack stamps version and flags."""

    s: float
    u: float
    u_thresh: Optional[float] = None
    evidence_status: Optional[str] = None
    evidence_refs: tuple[str, ...] = ()
    phi_hint: Optional[str] = None


class SafetyOracle(Protocol):
    supported_kinds: frozenset[TrajectoryKind]

    def evaluate(self, context: Mapping[str, Any], trajectory: Trajectory) -> OracleEvaluation: ...

    def apply_correction(self, correction: LocalCorrection, batch_id: str) -> bool: ...

    def snapshot(self) -> dict[str, Any]: ...

    def restore(self, state: Mapping[str, Any]) -> None: ...


class CoverageOverlay:
    """Set of audited case-class keys mapped to the covered/uncovered u_a constants."""

    def __init__(
        self,
        key_fields: Sequence[str],
        covered_u_a: float,
        uncovered_u_a: float,
        u_a_thresh: float = 0.6,
        name: str = "overlay",
    ):
        if not (0 <= covered_u_a < u_a_thresh < uncovered_u_a):
            raise ValueError("overlay constants must satisfy covered < thresh < uncovered")
        self.key_fields = tuple(key_fields)
        self.covered_u_a = covered_u_a
        self.uncovered_u_a = uncovered_u_a
        self.u_a_thresh = u_a_thresh
        self.name = name
        self.covered: dict[str, str] = {}
        self.revision = 0

    @property
    def version(self) -> str:
        return f"{self.name}:v{self.revision}"

    def coverage_key(self, trajectory: Trajectory) -> str:
        meta = trajectory.metadata
        missing = [f for f in self.key_fields if meta.get(f) in (None, "")]
        if missing:
            raise CoverageKeyError(f"trajectory metadata missing {missing}")
        return "|".join(str(meta[f]) for f in self.key_fields)

    def signals(self, trajectory: Trajectory) -> tuple[FlywheelOverlaySignals, tuple[str, ...]]:
        try:
            key = self.coverage_key(trajectory)
        except CoverageKeyError:
            key = ""
        if key and key in self.covered:
            sig = FlywheelOverlaySignals(self.covered_u_a, self.u_a_thresh, self.version, AuditStatus.COVERED, key)
            return sig, (self.covered[key],)
        sig = FlywheelOverlaySignals(self.uncovered_u_a, self.u_a_thresh, self.version, AuditStatus.UNCOVERED, key)
        return sig, ()

    def add(self, case_class: str, batch_id: str) -> None:
        if case_class not in self.covered:
            self.covered[case_class] = batch_id
            self.revision += 1

    def snapshot(self) -> dict[str, Any]:
        return {"covered": dict(sorted(self.covered.items())), "revision": self.revision}

    def restore(self, state: Mapping[str, Any]) -> None:
        self.covered = dict(state["covered"])
        self.revision = int(state["revision"])


def version_label(n: int) -> str:
    return f"oracle:v{n}"


def version_number(version: str) -> int:
    return int(version.rsplit("v", 1)[1])


class OracleStack:
    """Oracle plus overlay plus merger; the version changes only through ``apply_batch``."""

    def __init__(
        self,
        oracle: SafetyOracle,
        overlay: CoverageOverlay,
        version: str = "oracle:v0",
        latency_budget: float = 0.1,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.oracle = oracle
        self.overlay = overlay
        self.version = version
        self.latency_budget = latency_budget
        self.clock = clock
        self.norm_updates: dict[str, dict[str, Any]] = {}
        self.history: list[str] = [version]
        self._high_water = version_number(version)
        self._lock = threading.RLock()

    # queries -------------------------------------------------------------

    def query(self, context: Mapping[str, Any], trajectory: Trajectory, flags: QueryFlags = ALL_FLAGS) -> UnifiedQueryResult:
        if trajectory.kind not in self.oracle.supported_kinds:
            raise UnsupportedTrajectory(f"oracle does not support {trajectory.kind.value} trajectories")
        with self._lock:
            version = self.version
            start = self.clock()
            ev = self.oracle.evaluate(context, trajectory)
            elapsed = self.clock() - start
            if elapsed > self.latency_budget:
                raise OracleTimeout(f"oracle took {elapsed:.3f}s > budget {self.latency_budget:.3f}s")
            overlay_sig, overlay_refs = self.overlay.signals(trajectory)
        raw = OracleRawOutput(
            s=ev.s if flags.f_s else None,
            u=ev.u if flags.f_u else None,
            u_thresh=ev.u_thresh if flags.f_thresh else None,
            v_O=version,
            evidence_status=ev.evidence_status,
        )
        overlay = FlywheelOverlaySignals(
            u_a=overlay_sig.u_a if flags.f_ua else None,
            u_a_thresh=overlay_sig.u_a_thresh if flags.f_thresh else None,
            v_G=overlay_sig.v_G,
            audit_status=overlay_sig.audit_status if flags.f_ua else None,
            case_class=overlay_sig.case_class,
        )
        refs = tuple(dict.fromkeys(ev.evidence_refs + overlay_refs))
        return UnifiedQueryResult(raw=raw, overlay=overlay, phi_hint=ev.phi_hint, evidence_refs=refs)

    def query_vectorized(self, inputs: Any) -> tuple[Any, str]:
        """Bulk score-only query for oracles that expose ``evaluate_many``; returns (scores, version)."""
        fn = getattr(self.oracle, "evaluate_many", None)
        if fn is None:
            raise UnsupportedTrajectory("oracle has no vectorized evaluation")
        with self._lock:
            return fn(inputs), self.version

    def coverage_key(self, trajectory: Trajectory) -> str:
        return self.overlay.coverage_key(trajectory)

    # versions and batches ---------------------------------------------------

    def next_version(self) -> str:
        """A fresh version id; never reuses one issued earlier, even after a rollback."""
        return version_label(self._high_water + 1)

    def apply_batch(self, batch: GovernanceBatch, gate: Optional[Callable[[GovernanceBatch], bool]] = None) -> str:
        """Dispatch every correction or none; returns the new version."""
        with self._lock:
            if batch.from_oracle_version != self.version:
                raise BatchRejected(f"batch parent {batch.from_oracle_version} != active {self.version}")
            if batch.to_oracle_version in self.history or version_number(batch.to_oracle_version) <= self._high_water:
                raise BatchRejected(f"version {batch.to_oracle_version} already issued")
            if gate is not None and not gate(batch):
                raise BatchRejected("anti-rollback check failed")
            before = self.snapshot()
            try:
                for c in batch.local_corrections:
                    self._dispatch(c, batch.batch_id)
            except Exception:
                self.restore(before)
                raise
            self.version = batch.to_oracle_version
            self.history.append(self.version)
            self._high_water = version_number(self.version)
            return self.version

    def _dispatch(self, c: LocalCorrection, batch_id: str) -> None:
        if c.correction_type is CorrectionType.AUDIT_COVERAGE_UPDATE:
            self.overlay.add(str(c.payload["case_class"]), batch_id)
        elif c.correction_type is CorrectionType.NORM_UPDATE:
            norm = dict(c.payload["norm"])
            self.norm_updates[str(norm["id"])] = norm
        elif not self.oracle.apply_correction(c, batch_id):
            raise BatchRejected(f"oracle cannot apply {c.correction_type.value}")

    # state ---------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "version": self.version,
                "oracle": self.oracle.snapshot(),
                "overlay": self.overlay.snapshot(),
                "norm_updates": copy.deepcopy(self.norm_updates),
            }

    def restore(self, state: Mapping[str, Any]) -> None:
        with self._lock:
            self.version = state["version"]
            self.oracle.restore(state["oracle"])
            self.overlay.restore(state["overlay"])
            self.norm_updates = copy.deepcopy(dict(state["norm_updates"]))

    def snapshot_hash(self) -> str:
        return sha256_hex(canonical_json(self.snapshot()))

    def shadow(self) -> "OracleStack":
        """Independent copy for regression runs; mutations never reach this stack."""
        with self._lock:
            twin = OracleStack(
                copy.deepcopy(self.oracle),
                copy.deepcopy(self.overlay),
                self.version,
                self.latency_budget,
                self.clock,
            )
            twin.norm_updates = copy.deepcopy(self.norm_updates)
            twin.history = list(self.history)
            twin._high_water = self._high_water
            return twin


def effective_items(base: Iterable[Any], updates: Mapping[str, Mapping[str, Any]], build: Callable[[Mapping[str, Any]], Any]) -> list[Any]:
    """Replace base items by id with any installed updates; new ids are appended."""
    out = {item.id: item for item in base}
    for nid, spec in updates.items():
        out[nid] = build(spec)
    return list(out.values())
