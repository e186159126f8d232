"""Evaluate-then-govern loop shared by the three medical demos."""

from __future__ import annotations

import copy
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

from ..enforcement import EnforcementPolicy, Enforcer, PolicyMode, decide
from ..governance import (
    Alarm,
    CandidateTriage,
    ClusterTriage,
    Norm,
    NormKind,
    OodaRole,
    Refiner,
    Role,
    TriageMode,
    Verifier,
    rollout,
    run_ooda_tick,
)
from ..knowledge_base import KnowledgeBase
from ..oracle_stack import CoverageOverlay, OracleStack, SafetyOracle, version_number
from ..protocol import Action, GovernanceBatch, Notice, NoticeKind, StackGenesis
from .cases import MedicalCase, PassthroughProposer, proposer_output_hash
from .generator import MedicalCaseGenerator
from .pipeline import FixtureRegression, MedicalOrienter, MedicalRedTeam, blocked_resolver

MEDICAL_POLICY = EnforcementPolicy(mode=PolicyMode.MEDICAL)
REPORT_COLUMNS = ("Eval", "Allow", "Block", "Escalate", "Esc.Rate", "Stack")
UNSAFE_MED_GROUPS = ("UNSAFE_MED", "UNSAFE_STOP", "UNSAFE_DOSE")


@dataclass
class MedicalSetup:
    """Everything one medical demo needs; assembled by the composition root."""

    name: str
    oracle: SafetyOracle
    overlay: CoverageOverlay
    norms: Sequence[Norm]
    fixtures: Sequence[MedicalCase]
    generator: MedicalCaseGenerator
    triage: TriageMode
    block_scope: str = "matched"
    expected_groups: Mapping[str, int] = field(default_factory=dict)
    policy: EnforcementPolicy = MEDICAL_POLICY


@dataclass(frozen=True)
class EvalResult:
    index: int
    allow: int
    block: int
    escalate: int
    version: str
    actions: dict[str, str]
    proposer_hashes: dict[str, str]

    @property
    def total(self) -> int:
        return self.allow + self.block + self.escalate

    @property
    def escalation_rate(self) -> float:
        return self.escalate / self.total if self.total else 0.0

    def counts(self) -> tuple[int, int, int]:
        return self.allow, self.block, self.escalate

    def row(self) -> list[str]:
        return [
            str(self.index),
            str(self.allow),
            str(self.block),
            str(self.escalate),
            f"{round(100 * self.escalation_rate)}%",
            f"v{version_number(self.version)}",
        ]


def format_report(evals: Sequence[EvalResult]) -> str:
    rows = [list(REPORT_COLUMNS)] + [e.row() for e in evals]
    widths = [max(len(r[i]) for r in rows) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


@dataclass
class MedicalRun:
    name: str
    evals: list[EvalResult]
    batches: list[str]

    def summary(self) -> str:
        last = self.evals[-1]
        return f"({last.allow}, {last.block}, {last.escalate}), {round(100 * last.escalation_rate)}%"


class StrategyFailure(RuntimeError):
    pass


class MedicalDemo:
    def __init__(
        self,
        setup: MedicalSetup,
        kb: Optional[KnowledgeBase] = None,
        key: str = "medical-demo-key",
        alarm: Optional[Alarm] = None,
    ):
        self.setup = setup
        self.key = key
        self.alarm = alarm
        self.kb = kb if kb is not None else KnowledgeBase()
        self.policy = setup.policy
        self.proposer = PassthroughProposer()
        self.stack = OracleStack(setup.oracle, setup.overlay)
        self.kb.append(StackGenesis(self.stack.version, label=setup.name))
        severities = {n.id: n.severity for n in setup.norms}
        self.enforcer = Enforcer(self.stack, self.kb, self.policy, severities)
        self.red = MedicalRedTeam(setup.generator, self.proposer, self.policy)
        regression = FixtureRegression(setup.fixtures, self.proposer, self.policy)
        self.roles = [
            OodaRole(Role.RED, self.red),
            OodaRole(Role.TRIAGE, CandidateTriage(severities, setup.triage)),
            OodaRole(Role.VERIFY, Verifier(setup.norms)),
            OodaRole(Role.TRIAGE, ClusterTriage(severities, setup.triage)),
            OodaRole(
                Role.REFINE,
                Refiner(MedicalOrienter(setup.norms, setup.block_scope), regression, blocked_resolver(self.policy), key, capacity=1),
            ),
        ]

    def evaluate(self, index: int) -> EvalResult:
        counts: Counter[Action] = Counter()
        actions, hashes = {}, {}
        for case in self.setup.fixtures:
            traj = self.proposer.propose(case)
            hashes[case.case_id] = proposer_output_hash(traj)
            out = self.enforcer.enforce(
                {"eval": index, "case_id": case.case_id},
                traj,
                request_id=f"eval{index}:{case.case_id}",
                category=case.category,
            )
            counts[out.action] += 1
            actions[case.case_id] = out.action.value
        return EvalResult(
            index,
            counts[Action.ALLOW],
            counts[Action.BLOCK],
            counts[Action.ESCALATE],
            self.stack.version,
            actions,
            hashes,
        )

    def govern(self, iteration: int) -> Optional[GovernanceBatch]:
        self.red.iteration = iteration
        appended: list[str] = []
        for role in self.roles:
            appended += run_ooda_tick(role, self.kb, self.stack)
        arts = [self.kb.get(a) for a in appended]
        errors = [a for a in arts if isinstance(a, Notice) and a.notice is NoticeKind.ERROR]
        if errors:
            raise StrategyFailure(f"{errors[0].role}: {errors[0].message}")
        batches = [a for a in arts if isinstance(a, GovernanceBatch)]
        if not batches:
            return None
        rollout(batches[-1], self.kb, self.stack, self.key, alarm=self.alarm)
        return batches[-1]

    def run(self, iterations: int = 2) -> MedicalRun:
        evals = [self.evaluate(0)]
        for i in range(1, iterations + 1):
            self.govern(i)
            evals.append(self.evaluate(i))
        return MedicalRun(self.setup.name, evals, [b.batch_id for b in self.kb.of_type(GovernanceBatch)])


# ---------------------------------------------------------------- fixture lint


def _block_keywords(norms: Sequence[Norm]) -> list[str]:
    return [k.lower() for n in norms if n.kind is NormKind.KEYWORD_BLOCK for k in n.spec["keywords"]]


def lint_fixtures(setup: MedicalSetup) -> list[str]:
    """Checks every fixture constraint the convergence tables depend on; returns problems found."""
    problems: list[str] = []
    groups = Counter(c.group for c in setup.fixtures)
    for g, n in setup.expected_groups.items():
        if groups.get(g, 0) != n:
            problems.append(f"group {g}: expected {n} cases, found {groups.get(g, 0)}")
    for c in setup.fixtures:
        if not c.category:
            problems.append(f"{c.case_id}: missing category")

    # the setup is expected unpatched; copies keep the lint from touching it
    fresh = OracleStack(copy.deepcopy(setup.oracle), copy.deepcopy(setup.overlay))
    proposer = PassthroughProposer()
    for c in setup.fixtures:
        action = decide(fresh.query({}, proposer.propose(c)), setup.policy)
        want = Action.ALLOW if c.group == "SAFE" else Action.ESCALATE
        if action is not want:
            problems.append(f"{c.case_id}: eval-0 action {action.value}, expected {want.value}")

    keywords = _block_keywords(setup.norms)
    for c in setup.fixtures:
        hits = [k for k in keywords if k in c.draft_reply.lower()]
        if hits and c.group not in UNSAFE_MED_GROUPS:
            problems.append(f"{c.case_id}: block keyword {hits[0]!r} outside the unsafe medication groups")
        if c.group == "BORDERLINE" and c.disposition != "clinician_review":
            problems.append(f"{c.case_id}: borderline case not routed to clinician_review")

    borderline = {fresh.coverage_key(proposer.propose(c)) for c in setup.fixtures if c.group == "BORDERLINE"}
    med_keys = {fresh.coverage_key(proposer.propose(c)) for c in setup.fixtures if c.group in UNSAFE_MED_GROUPS}
    med_keys |= {
        fresh.coverage_key(proposer.propose(c)) for c in setup.generator.generate(1) if c.category == "undertriaged_med"
    }
    for k in sorted(borderline & med_keys):
        problems.append(f"coverage key {k!r} shared by borderline and medication cases")
    return problems


def check_medical_run(run: MedicalRun, setup: MedicalSetup) -> list[str]:
    """Run-level invariants: proposer immutability and the allowed per-group transitions."""
    problems: list[str] = []
    first = run.evals[0].proposer_hashes
    for e in run.evals[1:]:
        for cid, h in e.proposer_hashes.items():
            if first.get(cid) != h:
                problems.append(f"proposer output changed for {cid} at eval {e.index}")
    allowed = {
        "SAFE": {("allow", "allow")},
        "BORDERLINE": {("escalate", "escalate"), ("escalate", "allow"), ("allow", "allow")},
    }
    unsafe = {("escalate", "escalate"), ("escalate", "block"), ("block", "block")}
    for c in setup.fixtures:
        seq = [e.actions[c.case_id] for e in run.evals]
        ok = allowed.get(c.group, unsafe)
        for a, b in zip(seq, seq[1:]):
            if (a, b) not in ok:
                problems.append(f"{c.case_id} ({c.group}): transition {a} -> {b}")
                break
    return problems
