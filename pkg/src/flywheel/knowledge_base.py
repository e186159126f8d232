"""Append-only event store and the state replayed from it.

All state other than the log itself (queue contents and the ledger
position along with the operational views) is derived by replaying the log, so a knowledge base
loaded from disk is indistinguishable from the one that wrote it.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import threading
from collections import Counter, defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, TypeVar

from .protocol import (
    Artifact,
    CandidateFlaw,
    CorrectionType,
    DecisionRecord,
    GovernanceBatch,
    IntegrityError,
    LinkageError,
    Notice,
    NoticeKind,
    QueueEvent,
    QueueName,
    QueueOp,
    RefinementJob,
    ReleaseRecord,
    ReleaseStatus,
    StackGenesis,
    VerificationResult,
    VerifiedBreach,
    canonical_json,
    content_id,
    dumps_record,
    link_chain,
    loads_record,
    utc_now,
    verify_batch,
)

A = TypeVar("A", bound=Artifact)

LIVE_STATUSES = (ReleaseStatus.CANARY, ReleaseStatus.EXPAND, ReleaseStatus.FULL)


class TransitionError(IntegrityError):
    pass


def legal_transition(policy: tuple[str, ...], current: Optional[ReleaseStatus], nxt: ReleaseStatus) -> bool:
    """Stages advance one step along ``policy``; rollback is allowed from any live stage."""
    if current is ReleaseStatus.ROLLED_BACK:
        return False
    if nxt is ReleaseStatus.ROLLED_BACK:
        return current is not None
    if current is None:
        return bool(policy) and nxt.value == policy[0]
    stages = list(policy)
    if current.value not in stages:
        return False
    i = stages.index(current.value)
    return i + 1 < len(stages) and stages[i + 1] == nxt.value


class _PriorityQueue:
    """Max-priority queue with FIFO tie-break on enqueue order; lazy deletion."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, str]] = []
        self._live: dict[str, tuple[float, int]] = {}

    def push(self, ref: str, priority: float, order: int) -> None:
        self._live[ref] = (priority, order)
        heapq.heappush(self._heap, (-priority, order, ref))

    def update(self, ref: str, priority: float) -> None:
        _, order = self._live[ref]
        self.push(ref, priority, order)

    def remove(self, ref: str) -> None:
        self._live.pop(ref, None)

    def peek(self) -> Optional[str]:
        while self._heap:
            neg, order, ref = self._heap[0]
            if self._live.get(ref) == (-neg, order):
                return ref
            heapq.heappop(self._heap)
        return None

    def __contains__(self, ref: str) -> bool:
        return ref in self._live

    def __len__(self) -> int:
        return len(self._live)

    def entries(self) -> list[tuple[str, float]]:
        ordered = sorted(self._live.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
        return [(ref, prio) for ref, (prio, _) in ordered]


@dataclass(frozen=True)
class OperationalView:
    candidate_counts: dict[str, int] = field(default_factory=dict)
    open_flaws: dict[str, int] = field(default_factory=dict)
    norm_coverage: dict[str, int] = field(default_factory=dict)
    active_version: Optional[str] = None
    open_clusters: tuple[tuple[str, str, int, float], ...] = ()
    rollout_state: dict[str, str] = field(default_factory=dict)
    kernels_installed: int = 0
    covered_classes: tuple[str, ...] = ()
    decisions: dict[str, dict[str, int]] = field(default_factory=dict)
    queue_depths: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "candidate_counts": dict(self.candidate_counts),
            "open_flaws": dict(self.open_flaws),
            "norm_coverage": dict(self.norm_coverage),
            "active_version": self.active_version,
            "open_clusters": [list(c) for c in self.open_clusters],
            "rollout_state": dict(self.rollout_state),
            "kernels_installed": self.kernels_installed,
            "covered_classes": list(self.covered_classes),
            "decisions": {k: dict(v) for k, v in self.decisions.items()},
            "queue_depths": dict(self.queue_depths),
        }


class KnowledgeBase:
    """The governance event store: an artifact log plus the queue and release state derived from it.

    Appends are serialized through a single lock; readers may iterate the log
    concurrently and always see a consistent prefix.
    """

    def __init__(self, path: str | Path | None = None, clock: Callable[[], str] = utc_now):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._lock = threading.RLock()
        self._log: list[Artifact] = []
        self._index: dict[str, int] = {}
        self._lines: list[str] = []
        self._queues = {QueueName.VER: _PriorityQueue(), QueueName.REF: _PriorityQueue()}
        self._release_status: dict[str, ReleaseStatus] = {}
        self._release_policy: dict[str, tuple[str, ...]] = {}
        self._ledger: list[ReleaseRecord] = []
        self._active_version: Optional[str] = None
        if self.path is not None and self.path.exists():
            self._load(self.path)

    # ------------------------------------------------------------------ log

    def _load(self, path: Path) -> None:
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    artifact = loads_record(line)
                except (ValueError, KeyError, TypeError, IntegrityError) as exc:
                    raise IntegrityError(f"{path}:{line_no}: malformed record ({exc})") from exc
                if content_id(artifact) != artifact.artifact_id:
                    raise IntegrityError(f"{path}:{line_no}: content hash mismatch for {artifact.artifact_id}")
                self._ingest(artifact, persist=False)

    @contextmanager
    def writer(self) -> Iterator["KnowledgeBase"]:
        """Hold the single-writer lock so a group of appends lands contiguously."""
        with self._lock:
            yield self

    def __len__(self) -> int:
        return len(self._log)

    def __iter__(self) -> Iterator[Artifact]:
        return iter(list(self._log))

    def __contains__(self, artifact_id: str) -> bool:
        return artifact_id in self._index

    @property
    def log(self) -> tuple[Artifact, ...]:
        return tuple(self._log)

    def get(self, artifact_id: str) -> Optional[Artifact]:
        pos = self._index.get(artifact_id)
        return None if pos is None else self._log[pos]

    def position(self, artifact_id: str) -> int:
        return self._index[artifact_id]

    def of_type(self, cls: type[A], start: int = 0) -> list[A]:
        return [a for a in self._log[start:] if isinstance(a, cls)]

    def prefix_hash(self, n: Optional[int] = None) -> str:
        lines = self._lines if n is None else self._lines[:n]
        h = hashlib.sha256()
        for line in lines:
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def append(self, artifact: Artifact) -> str:
        """Append an artifact; re-appending identical content is a no-op."""
        with self._lock:
            aid = artifact.artifact_id
            if content_id(artifact) != aid:
                raise IntegrityError(f"artifact id {aid} does not match its content")
            existing = self.get(aid)
            if existing is not None:
                if canonical_json(existing.hash_body()) != canonical_json(artifact.hash_body()):
                    raise IntegrityError(f"id collision with differing content: {aid}")
                return aid
            for parent in artifact.parents():
                if parent not in self._index:
                    raise LinkageError(f"{aid}: parent {parent} not in knowledge base")
            if hasattr(artifact, "ts") and not artifact.ts:
                artifact = artifact.with_ts(self.clock())
            self._ingest(artifact, persist=True)
            return aid

    def append_all(self, artifacts: Iterable[Artifact]) -> list[str]:
        with self._lock:
            return [self.append(a) for a in artifacts]

    def _ingest(self, artifact: Artifact, persist: bool) -> None:
        aid = artifact.artifact_id
        if isinstance(artifact, ReleaseRecord):
            self._apply_release(artifact)
        elif isinstance(artifact, QueueEvent):
            self._apply_queue_event(artifact)
        elif isinstance(artifact, StackGenesis):
            if self._active_version is None:
                self._active_version = artifact.version
        line = dumps_record(artifact)
        self._index[aid] = len(self._log)
        self._log.append(artifact)
        self._lines.append(line)
        if persist and self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    # --------------------------------------------------------------- queues

    def _apply_queue_event(self, ev: QueueEvent) -> None:
        q = self._queues[ev.queue]
        if ev.op is QueueOp.ENQUEUE:
            q.push(ev.ref, ev.priority, ev.seq)
        elif ev.op is QueueOp.REPRIORITIZE:
            q.update(ev.ref, ev.priority)
        else:
            q.remove(ev.ref)

    def enqueue(self, queue: QueueName, artifact_id: str, priority: float) -> None:
        with self._lock:
            if artifact_id not in self._index:
                raise LinkageError(f"cannot enqueue unknown artifact {artifact_id}")
            if artifact_id in self._queues[queue]:
                return
            self.append(QueueEvent(queue, QueueOp.ENQUEUE, artifact_id, float(priority), seq=len(self._log)))

    def reprioritize(self, queue: QueueName, artifact_id: str, priority: float) -> None:
        with self._lock:
            if artifact_id not in self._queues[queue]:
                raise KeyError(f"{artifact_id} not pending in {queue.value}")
            self.append(QueueEvent(queue, QueueOp.REPRIORITIZE, artifact_id, float(priority), seq=len(self._log)))

    def dequeue(self, queue: QueueName) -> Optional[str]:
        """Pop the highest-priority reference, or None when the queue is empty."""
        with self._lock:
            ref = self._queues[queue].peek()
            if ref is None:
                return None
            self.append(QueueEvent(queue, QueueOp.DEQUEUE, ref, 0.0, seq=len(self._log)))
            return ref

    def pending(self, queue: QueueName) -> list[tuple[str, float]]:
        return self._queues[queue].entries()

    # --------------------------------------------------------------- ledger

    def _apply_release(self, record: ReleaseRecord) -> None:
        current = self._release_status.get(record.release_id)
        policy = self._release_policy.get(record.release_id, record.rollout_policy)
        if not legal_transition(policy, current, record.status):
            cur = current.value if current else "none"
            raise TransitionError(f"illegal release transition {cur} -> {record.status.value} for {record.release_id}")
        batch = self.get(record.batch_id)
        if not isinstance(batch, GovernanceBatch):
            raise LinkageError(f"release {record.release_id} references unknown batch {record.batch_id}")
        self._release_status[record.release_id] = record.status
        self._release_policy[record.release_id] = policy
        self._ledger.append(record)
        if record.status is ReleaseStatus.FULL:
            self._active_version = batch.to_oracle_version
        elif record.status is ReleaseStatus.ROLLED_BACK and self._active_version == batch.to_oracle_version:
            self._active_version = batch.from_oracle_version

    def record_release(self, record: ReleaseRecord) -> str:
        with self._lock:
            current = self._release_status.get(record.release_id)
            policy = self._release_policy.get(record.release_id, record.rollout_policy)
            if not legal_transition(policy, current, record.status):
                cur = current.value if current else "none"
                raise TransitionError(f"illegal release transition {cur} -> {record.status.value}")
            return self.append(record)

    @property
    def ledger(self) -> tuple[ReleaseRecord, ...]:
        return tuple(self._ledger)

    def release_status(self, release_id: str) -> Optional[ReleaseStatus]:
        return self._release_status.get(release_id)

    def releases_of(self, batch_id: str) -> list[str]:
        seen: list[str] = []
        for rec in self._ledger:
            if rec.batch_id == batch_id and rec.release_id not in seen:
                seen.append(rec.release_id)
        return seen

    def active_version(self) -> Optional[str]:
        return self._active_version

    def anti_rollback_check(self, batch: GovernanceBatch, key: str | bytes, permissive: bool = False) -> bool:
        """Deployable iff the parent version is active and the signed batch carries evidence."""
        return (
            self._active_version is not None
            and batch.from_oracle_version == self._active_version
            and verify_batch(batch, key, permissive=permissive)
            and bool(batch.regression_evidence)
        )

    # ---------------------------------------------------------------- views

    def chain(self, artifact_id: str) -> list[str]:
        return link_chain(artifact_id, self.get)

    def views(self) -> OperationalView:
        return compute_views(self._log)


def replay(artifacts: Iterable[Artifact]) -> KnowledgeBase:
    """Rebuild an in-memory knowledge base from an artifact sequence."""
    kb = KnowledgeBase()
    for a in artifacts:
        kb._ingest(a, persist=False)
    return kb


def compute_views(log: Iterable[Artifact]) -> OperationalView:
    """Pure projection of a log prefix onto the operational views."""
    log = list(log)
    candidates: dict[str, CandidateFlaw] = {}
    verified: set[str] = set()
    norm_cov: Counter[str] = Counter()
    jobs: dict[str, RefinementJob] = {}
    consumed_jobs: set[str] = set()
    batches: dict[str, GovernanceBatch] = {}
    release_status: dict[str, ReleaseStatus] = {}
    release_batch: dict[str, str] = {}
    decisions: dict[str, Counter[str]] = defaultdict(Counter)
    queue_live: dict[QueueName, set[str]] = {QueueName.VER: set(), QueueName.REF: set()}
    active: Optional[str] = None

    for a in log:
        if isinstance(a, CandidateFlaw):
            candidates[a.id] = a
        elif isinstance(a, VerificationResult):
            verified.add(a.ref_id)
        elif isinstance(a, VerifiedBreach):
            norm_cov[a.phi_broken] += 1
        elif isinstance(a, RefinementJob):
            jobs[a.job_id] = a
        elif isinstance(a, GovernanceBatch):
            batches[a.batch_id] = a
            if a.job_ref:
                consumed_jobs.add(a.job_ref)
        elif isinstance(a, Notice) and a.notice is NoticeKind.JOB_CLOSED and a.ref:
            consumed_jobs.add(a.ref)
        elif isinstance(a, StackGenesis):
            if active is None:
                active = a.version
        elif isinstance(a, ReleaseRecord):
            release_status[a.release_id] = a.status
            release_batch[a.release_id] = a.batch_id
            b = batches.get(a.batch_id)
            if b is not None:
                if a.status is ReleaseStatus.FULL:
                    active = b.to_oracle_version
                elif a.status is ReleaseStatus.ROLLED_BACK and active == b.to_oracle_version:
                    active = b.from_oracle_version
        elif isinstance(a, DecisionRecord):
            decisions[a.v_O][a.action.value] += 1
        elif isinstance(a, QueueEvent):
            if a.op is QueueOp.ENQUEUE:
                queue_live[a.queue].add(a.ref)
            elif a.op is QueueOp.DEQUEUE:
                queue_live[a.queue].discard(a.ref)

    cand_counts: Counter[str] = Counter()
    open_flaws: Counter[str] = Counter()
    for cid, c in candidates.items():
        cat = c.category or "uncategorized"
        cand_counts[cat] += 1
        if cid not in verified:
            open_flaws[cat] += 1

    live_batches = [batches[release_batch[r]] for r, st in release_status.items() if st in LIVE_STATUSES]
    kernels = 0
    covered: set[str] = set()
    for b in live_batches:
        for c in b.local_corrections:
            if c.correction_type is CorrectionType.SPATIAL_FLAW_PATCH:
                kernels += 1
            elif c.correction_type is CorrectionType.AUDIT_COVERAGE_UPDATE:
                covered.add(str(c.payload["case_class"]))

    open_clusters = tuple(
        (j.job_id, j.cluster_id, j.size, j.risk_score) for jid, j in jobs.items() if jid not in consumed_jobs
    )
    return OperationalView(
        candidate_counts=dict(sorted(cand_counts.items())),
        open_flaws=dict(sorted(open_flaws.items())),
        norm_coverage=dict(sorted(norm_cov.items())),
        active_version=active,
        open_clusters=open_clusters,
        rollout_state={r: s.value for r, s in release_status.items()},
        kernels_installed=kernels,
        covered_classes=tuple(sorted(covered)),
        decisions={v: dict(sorted(c.items())) for v, c in sorted(decisions.items())},
        queue_depths={q.value: len(s) for q, s in queue_live.items()},
    )


def load_log_lines(path: str | Path) -> list[Artifact]:
    """Parse a log file, naming the first malformed line."""
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(loads_record(line))
            except (ValueError, KeyError, TypeError, IntegrityError, json.JSONDecodeError) as exc:
                raise IntegrityError(f"line {line_no}: malformed record ({exc})") from exc
    return out


def check_invariants(kb: KnowledgeBase) -> list[str]:
    """Ledger-level invariants over a whole log; returns one message per violation.

    Double-filter soundness: every batch that entered the release ledger links
    back to at least one verified breach and one candidate flaw. Replay
    determinism: the views rebuilt from the log equal the live views.
    """
    problems: list[str] = []
    released = dict.fromkeys(r.batch_id for r in kb.ledger)
    for batch_id in released:
        try:
            chain = [kb.get(a) for a in kb.chain(batch_id)]
        except (IntegrityError, LinkageError) as exc:
            problems.append(f"double-filter soundness: {batch_id}: {exc}")
            continue
        if not any(isinstance(a, VerifiedBreach) for a in chain):
            problems.append(f"double-filter soundness: {batch_id} reaches no VerifiedBreach")
        if not any(isinstance(a, CandidateFlaw) for a in chain):
            problems.append(f"double-filter soundness: {batch_id} reaches no CandidateFlaw")
    if replay(kb.log).views() != kb.views():
        problems.append("replay determinism: replayed views differ from live views")
    return problems
