"""Double-filter pipeline strategies: triage, verification, refinement, monitoring and rollout."""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

from ..enforcement import dangerous_certainty
from ..knowledge_base import KnowledgeBase, compute_views
from ..oracle_stack import BatchRejected, OracleStack, effective_items
from ..protocol import (
    Action,
    CandidateFlaw,
    DecisionRecord,
    GovernanceBatch,
    LocalCorrection,
    MonitoringReport,
    Notice,
    NoticeKind,
    QueueName,
    RefinementJob,
    ReleaseRecord,
    ReleaseStatus,
    VerifiedBreach,
    canonical_json,
    sha256_hex,
    signed,
)
from .norms import Norm, verify

CATEGORY_PRIORITY = ("missed_urgency", "undertriaged_med", "vulnerable_patient", "lab_no_context", "exploratory")
DEFAULT_SEVERITY = 0.5
DEFAULT_STAGES = ("canary", "expand", "full")


def category_rank(category: Optional[str]) -> int:
    """Higher is more urgent; unknown categories rank below all named ones."""
    if category in CATEGORY_PRIORITY:
        return len(CATEGORY_PRIORITY) - CATEGORY_PRIORITY.index(category)
    return 0


def sort_by_category(items: Sequence[Any], category_of: Callable[[Any], Optional[str]]) -> list[Any]:
    return sorted(items, key=lambda x: -category_rank(category_of(x)))


class TriageMode(str, enum.Enum):
    PRIORITY = "priority"
    FIFO = "fifo"


def effective_norms(base: Sequence[Norm], stack: OracleStack) -> list[Norm]:
    return effective_items(base, stack.norm_updates, Norm.from_dict)


def submit_candidates(kb: KnowledgeBase, flaws: Iterable[CandidateFlaw], priority: float = 0.0) -> list[str]:
    ids = []
    for f in flaws:
        ids.append(kb.append(f))
        kb.enqueue(QueueName.VER, f.id, priority)
    return ids


# ---------------------------------------------------------------- triage I


def candidate_priority(flaw: CandidateFlaw, severities: Mapping[str, float]) -> float:
    sev = severities.get(flaw.signals.phi_hint, DEFAULT_SEVERITY) if flaw.signals.phi_hint else DEFAULT_SEVERITY
    return sev * dangerous_certainty(flaw.signals.u, flaw.signals.u_thresh)


@dataclass
class CandidateTriage:
    """Reprioritizes the verification queue by severity-weighted dangerous certainty."""

    severities: Mapping[str, float] = field(default_factory=dict)
    mode: TriageMode = TriageMode.PRIORITY

    def observe(self, kb, stack, checkpoint):
        return [(kb.get(ref), prio) for ref, prio in kb.pending(QueueName.VER)]

    def orient(self, pending):
        if self.mode is TriageMode.FIFO:
            return [(f.id, old, 0.0) for f, old in pending]
        return [(f.id, old, candidate_priority(f, self.severities)) for f, old in pending]

    def decide(self, rows):
        return [(ref, new) for ref, old, new in rows if new != old]

    def act(self, plan, kb, stack):
        for ref, prio in plan:
            kb.reprioritize(QueueName.VER, ref, prio)


# ---------------------------------------------------------------- verification


@dataclass
class Verifier:
    norms: Sequence[Norm]
    limit: Optional[int] = None
    reviewer: str = "auto"

    def observe(self, kb, stack, checkpoint):
        n = len(kb.pending(QueueName.VER))
        return min(n, self.limit) if self.limit is not None else n

    def orient(self, n):
        return n

    def decide(self, n):
        return n

    def act(self, n, kb, stack):
        norms = effective_norms(self.norms, stack)
        for _ in range(n):
            ref = kb.dequeue(QueueName.VER)
            if ref is None:
                break
            cand = kb.get(ref)
            v = verify(cand, norms, self.reviewer)
            kb.append(v.result)
            if v.breach is not None:
                kb.append(v.breach)
            for w in v.warnings:
                kb.append(
                    Notice(
                        NoticeKind.WARNING,
                        "verify",
                        f"norm {w.norm_id} skipped: missing {', '.join(w.missing)}",
                        ref=v.result.id,
                        details={"norm": w.norm_id, "missing": list(w.missing)},
                    )
                )


# ---------------------------------------------------------------- triage II


def cluster_breaches(breaches: Sequence[VerifiedBreach]) -> list[tuple[tuple[str, str], list[VerifiedBreach]]]:
    """Exact-key clusters in order of first arrival."""
    groups: dict[tuple[str, str], list[VerifiedBreach]] = {}
    for b in breaches:
        groups.setdefault((b.phi_broken, b.category or ""), []).append(b)
    return list(groups.items())


def job_priority(job: RefinementJob, mode: TriageMode) -> float:
    if mode is TriageMode.FIFO:
        return 0.0
    return category_rank(job.category) + job.risk_score / (1.0 + job.risk_score)


@dataclass
class ClusterTriage:
    """Groups new breaches by (norm, category) into refinement jobs on the refinement queue."""

    severities: Mapping[str, float]
    mode: TriageMode = TriageMode.PRIORITY

    def observe(self, kb, stack, checkpoint):
        return [a for a in kb.log[checkpoint:] if isinstance(a, VerifiedBreach)]

    def orient(self, breaches):
        return cluster_breaches(breaches)

    def decide(self, clusters):
        jobs = []
        for (phi, category), members in clusters:
            sev = self.severities.get(phi, DEFAULT_SEVERITY)
            jobs.append(
                RefinementJob(
                    cluster_id=f"{phi}|{category}",
                    centroid_ref=members[0].breach_id,
                    size=len(members),
                    risk_score=sev * len(members),
                    sample_set_refs=tuple(m.breach_id for m in members),
                    category=category or None,
                    phi=phi,
                )
            )
        if self.mode is TriageMode.PRIORITY:
            jobs.sort(key=lambda j: -job_priority(j, self.mode))
        return jobs

    def act(self, jobs, kb, stack):
        for j in jobs:
            kb.append(j)
            kb.enqueue(QueueName.REF, j.job_id, job_priority(j, self.mode))


# ---------------------------------------------------------------- refinement


@dataclass(frozen=True)
class Bundle:
    corrections: tuple[LocalCorrection, ...]
    evidence: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RegressionReport:
    passed: bool
    evidence: dict[str, Any]


class CorrectionOrienter(Protocol):
    def orient(self, job: RefinementJob, breaches: Sequence[VerifiedBreach], stack: OracleStack) -> Bundle: ...


class RegressionSuite(Protocol):
    def run(self, live: OracleStack, shadow: OracleStack) -> RegressionReport: ...


@dataclass
class Refiner:
    orienter: CorrectionOrienter
    regression: RegressionSuite
    is_resolved: Callable[[VerifiedBreach, OracleStack], bool]
    key: str | bytes
    capacity: int = 1
    rollout_metadata: Mapping[str, Any] = field(default_factory=lambda: {"stages": list(DEFAULT_STAGES)})

    def observe(self, kb, stack, checkpoint):
        return len(kb.pending(QueueName.REF))

    def orient(self, n):
        return n

    def decide(self, n):
        return min(n, self.capacity) if n else 0

    def act(self, budget, kb, stack):
        built = 0
        while built < budget:
            queued = dict(kb.pending(QueueName.REF))
            job_id = kb.dequeue(QueueName.REF)
            if job_id is None:
                return
            job = kb.get(job_id)
            breaches = [kb.get(r) for r in job.sample_set_refs]
            if all(self.is_resolved(b, stack) for b in breaches):
                kb.append(Notice(NoticeKind.JOB_CLOSED, "refine", "breaches already resolved by active stack", ref=job_id))
                continue
            bundle = self.orienter.orient(job, breaches, stack)
            if not bundle.corrections:
                kb.append(Notice(NoticeKind.JOB_CLOSED, "refine", "orienter produced no corrections", ref=job_id))
                continue
            built += 1
            draft = GovernanceBatch(
                from_oracle_version=stack.version,
                to_oracle_version=stack.next_version(),
                local_corrections=bundle.corrections,
                rollout_metadata=dict(self.rollout_metadata),
                breach_refs=job.sample_set_refs,
                job_ref=job_id,
            )
            shadow = stack.shadow()
            shadow.apply_batch(draft)
            report = self.regression.run(stack, shadow)
            if not report.passed:
                kb.append(
                    Notice(
                        NoticeKind.REGRESSION_FAILURE,
                        "refine",
                        "shadow regression failed; batch discarded",
                        ref=job_id,
                        details=report.evidence,
                    )
                )
                kb.enqueue(QueueName.REF, job_id, 0.5 * queued[job_id])
                continue
            evidence = {**bundle.evidence, **report.evidence}
            batch = signed(replace(draft, regression_evidence=evidence, batch_id=""), self.key)
            kb.append(batch)


# ---------------------------------------------------------------- blue team


def monitoring_summary(log: Sequence[Any]) -> dict[str, Any]:
    decisions = [a for a in log if isinstance(a, DecisionRecord)]
    counts = Counter(d.action.value for d in decisions)
    per_version: dict[str, Counter[str]] = defaultdict(Counter)
    for d in decisions:
        per_version[d.v_O][d.action.value] += 1
    n = len(decisions)
    view = compute_views(log)
    return {
        "decisions": n,
        "actions": {a.value: counts.get(a.value, 0) for a in Action},
        "escalation_rate": counts.get(Action.ESCALATE.value, 0) / n if n else 0.0,
        "block_rate": counts.get(Action.BLOCK.value, 0) / n if n else 0.0,
        "per_version": {v: dict(sorted(c.items())) for v, c in sorted(per_version.items())},
        "open_flaws": view.open_flaws,
        "norm_coverage": view.norm_coverage,
    }


def blue_team_report(kb: KnowledgeBase, start: int = 0, end: Optional[int] = None) -> MonitoringReport:
    end = len(kb) if end is None else end
    return MonitoringReport(log_position=end, summary=monitoring_summary(kb.log[start:end]))


@dataclass
class BlueTeam:
    """Appends a monitoring report over the log since its checkpoint."""

    window_from_start: bool = True

    def observe(self, kb, stack, checkpoint):
        return kb.log if self.window_from_start else kb.log[checkpoint:]

    def orient(self, log):
        return monitoring_summary(log), len(log)

    def decide(self, situation):
        return situation

    def act(self, plan, kb, stack):
        summary, _ = plan
        kb.append(MonitoringReport(log_position=len(kb), summary=summary))


# ---------------------------------------------------------------- rollout

Alarm = Callable[[str, GovernanceBatch, OracleStack], bool]


def release_id_for(batch_id: str, attempt: int) -> str:
    return "release:" + sha256_hex(canonical_json({"batch": batch_id, "attempt": attempt}))[:16]


def rollout(
    batch: GovernanceBatch,
    kb: KnowledgeBase,
    stack: OracleStack,
    key: str | bytes,
    stages: Sequence[str] = DEFAULT_STAGES,
    alarm: Optional[Alarm] = None,
    permissive: bool = False,
) -> list[ReleaseRecord]:
    """Progressive release; the batch is applied at the first stage and undone on any alarm."""
    with kb.writer():
        if batch.batch_id not in kb:
            kb.append(batch)
        if not kb.anti_rollback_check(batch, key, permissive):
            raise BatchRejected(f"anti-rollback check failed for {batch.batch_id}")
        policy = tuple(stages)
        release_id = release_id_for(batch.batch_id, len(kb.releases_of(batch.batch_id)))
        pre = stack.snapshot()
        stack.apply_batch(batch, gate=lambda b: kb.anti_rollback_check(b, key, permissive))
        records = []
        for stage in policy:
            rec = ReleaseRecord(release_id, batch.batch_id, policy, ReleaseStatus(stage))
            kb.record_release(rec)
            records.append(rec)
            if alarm is not None and alarm(stage, batch, stack):
                stack.restore(pre)
                back = ReleaseRecord(release_id, batch.batch_id, policy, ReleaseStatus.ROLLED_BACK)
                kb.record_release(back)
                records.append(back)
                break
        return records
