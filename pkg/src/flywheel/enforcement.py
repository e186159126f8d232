"""Runtime gate: maps stack signals to allow/block/revise/escalate and records every decision."""

from __future__ import annotations

import enum
import random
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from .knowledge_base import KnowledgeBase
from .oracle_stack import ALL_FLAGS, OracleStack, OracleTimeout
from .protocol import (
    Action,
    CandidateFlaw,
    DecisionRecord,
    Integrity,
    OracleRawOutput,
    QueueName,
    Trajectory,
    UnifiedQueryResult,
    canonical_json,
    encode,
    sha256_hex,
    utc_now,
)

SUPPORTED = "supported"


class PolicyMode(str, enum.Enum):
    BASE = "base"
    MEDICAL = "medical"


class RiskTier(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class EnforcementPolicy:
    mode: PolicyMode = PolicyMode.BASE
    theta_s: float = 0.4
    theta_a: float = 0.85
    risk_tier: RiskTier = RiskTier.HIGH
    revise_limit: int = 2
    latency_budget: float = 0.1
    breaker_threshold: int = 3
    audit_sampling: float = 0.0
    timeout_audit_priority: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.theta_s < self.theta_a <= 1):
            raise ValueError("need 0 < theta_s < theta_a <= 1")
        if self.revise_limit < 0 or self.breaker_threshold < 1:
            raise ValueError("revise_limit >= 0 and breaker_threshold >= 1 required")
        if not (0.0 <= self.audit_sampling <= 1.0):
            raise ValueError("audit_sampling must be a probability")


def _signals(result: UnifiedQueryResult) -> Optional[tuple[float, float, float, float, float]]:
    vals = (result.s, result.u, result.u_thresh, result.u_a, result.u_a_thresh)
    if any(v is None for v in vals):
        return None
    return vals  # type: ignore[return-value]


def decide_base(result: UnifiedQueryResult, policy: EnforcementPolicy) -> Action:
    sig = _signals(result)
    if sig is None:
        return Action.ESCALATE
    s, u, u_thresh, u_a, u_a_thresh = sig
    if u >= u_thresh or u_a >= u_a_thresh:
        return Action.ESCALATE
    if s < policy.theta_s:
        return Action.BLOCK
    return Action.ALLOW


def is_weak_evidence(evidence_status: Optional[str]) -> bool:
    # anything short of "supported", unknown and missing included, is weak
    return evidence_status != SUPPORTED


def decide_medical(result: UnifiedQueryResult, policy: EnforcementPolicy, evidence_status: Optional[str]) -> Action:
    sig = _signals(result)
    if sig is None:
        return Action.ESCALATE
    s, u, u_thresh, u_a, u_a_thresh = sig
    if u >= u_thresh:
        return Action.ESCALATE
    if s < policy.theta_s:
        return Action.BLOCK
    if u_a >= u_a_thresh and is_weak_evidence(evidence_status) and s < policy.theta_a:
        return Action.ESCALATE
    return Action.ALLOW


def decide(result: UnifiedQueryResult, policy: EnforcementPolicy, evidence_status: Optional[str] = None) -> Action:
    if policy.mode is PolicyMode.MEDICAL:
        status = evidence_status if evidence_status is not None else result.raw.evidence_status
        return decide_medical(result, policy, status)
    return decide_base(result, policy)


def dangerous_certainty(u: Optional[float], u_thresh: Optional[float]) -> float:
    if u is None or u_thresh is None:
        return 0.0
    return max(0.0, u_thresh - u)


def escalation_priority(result: UnifiedQueryResult, severities: Mapping[str, float]) -> float:
    if result.phi_hint is not None and result.phi_hint in severities:
        return float(severities[result.phi_hint])
    over = 0.0
    if result.u_a is not None and result.u_a_thresh is not None:
        over = max(0.0, result.u_a - result.u_a_thresh)
    return dangerous_certainty(result.u, result.u_thresh) + over


@dataclass(frozen=True)
class EnforcementOutcome:
    action: Action
    record: DecisionRecord
    audit_case: Optional[CandidateFlaw] = None
    degraded: bool = False
    timed_out: bool = False


Reviser = Callable[[Trajectory, int], Trajectory]


@dataclass
class Enforcer:
    """Queries the stack and logs a DecisionRecord, plus an audit case when one is due."""

    stack: OracleStack
    kb: KnowledgeBase
    policy: EnforcementPolicy = field(default_factory=EnforcementPolicy)
    severities: Mapping[str, float] = field(default_factory=dict)
    reviser: Optional[Reviser] = None
    decide_fn: Optional[Callable[[UnifiedQueryResult, EnforcementPolicy, Optional[str]], Action]] = None
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    host: str = field(default_factory=socket.gethostname)
    clock: Callable[[], str] = utc_now

    def __post_init__(self) -> None:
        self._breaker_lock = threading.Lock()
        self._consecutive_timeouts = 0
        self.degraded = False

    def reset_breaker(self) -> None:
        with self._breaker_lock:
            self._consecutive_timeouts = 0
            self.degraded = False

    def _note_timeout(self) -> None:
        with self._breaker_lock:
            self._consecutive_timeouts += 1
            if self._consecutive_timeouts >= self.policy.breaker_threshold:
                self.degraded = True

    def _note_success(self) -> None:
        with self._breaker_lock:
            self._consecutive_timeouts = 0

    def _fallback_action(self) -> Action:
        return Action.BLOCK if self.policy.risk_tier is RiskTier.HIGH else Action.ALLOW

    def enforce(
        self,
        context: Mapping[str, Any],
        trajectory: Trajectory,
        request_id: str = "",
        evidence_status: Optional[str] = None,
        category: Optional[str] = None,
    ) -> EnforcementOutcome:
        context = dict(context)
        if self.degraded:
            return self._fallback(context, trajectory, request_id, category, "circuit breaker open")
        decide_fn = self.decide_fn or decide
        attempt = 0
        current = trajectory
        while True:
            try:
                result = self.stack.query(context, current, ALL_FLAGS)
            except OracleTimeout as exc:
                self._note_timeout()
                return self._fallback(context, current, request_id, category, str(exc), timed_out=True)
            self._note_success()
            action = decide_fn(result, self.policy, evidence_status)
            if action is not Action.REVISE:
                break
            if self.reviser is None or attempt >= self.policy.revise_limit:
                self._record(context, current, Action.REVISE, result, request_id, f"revise attempt {attempt}")
                action = Action.ESCALATE
                break
            self._record(context, current, Action.REVISE, result, request_id, f"revise attempt {attempt}")
            current = self.reviser(current, attempt)
            attempt += 1

        record = self._record(context, current, action, result, request_id, "")
        audit = None
        if action is Action.ESCALATE:
            audit = self._audit(context, current, result, record, category, escalation_priority(result, self.severities))
        elif action is Action.ALLOW and self.policy.audit_sampling > 0 and self.rng.random() < self.policy.audit_sampling:
            audit = self._audit(context, current, result, record, category, 0.0)
        return EnforcementOutcome(action, record, audit)

    def _fallback(self, context, trajectory, request_id, category, reason, timed_out=False) -> EnforcementOutcome:
        action = self._fallback_action()
        result = UnifiedQueryResult(raw=OracleRawOutput(v_O=self.stack.version))
        record = self._record(context, trajectory, action, result, request_id, f"fallback: {reason}")
        audit = self._audit(context, trajectory, result, record, category, self.policy.timeout_audit_priority)
        return EnforcementOutcome(action, record, audit, degraded=self.degraded, timed_out=timed_out)

    def _record(self, context, trajectory, action, result, request_id, reason) -> DecisionRecord:
        refs = tuple(r for r in result.evidence_refs if r in self.kb)
        payload = {
            "context": context,
            "trajectory": trajectory.id,
            "action": action.value,
            "signals": encode(result),
            "request_id": request_id,
        }
        ts = self.clock()
        record = DecisionRecord(
            context=context,
            trajectory=trajectory,
            action=action,
            s=result.s,
            u=result.u,
            u_thresh=result.u_thresh,
            u_a=result.u_a,
            u_a_thresh=result.u_a_thresh,
            v_O=result.v_O,
            evidence_refs=refs,
            request_id=request_id,
            reason=reason,
            integrity=Integrity(sha256_hex(canonical_json(payload)), ts, self.host),
            ts=ts,
        )
        self.kb.append(record)
        return record

    def _audit(self, context, trajectory, result, record, category, priority) -> CandidateFlaw:
        flaw = CandidateFlaw(
            context=context,
            trajectory=trajectory,
            signals=result,
            v_O=result.v_O,
            seed_ref=record.id,
            category=category,
        )
        with self.kb.writer():
            self.kb.append(flaw)
            self.kb.enqueue(QueueName.VER, flaw.id, priority)
        return flaw
