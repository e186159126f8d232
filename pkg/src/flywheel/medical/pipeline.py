"""Medical-specific strategies plugged into the governance roles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

from ..enforcement import EnforcementPolicy, decide
from ..governance import Bundle, Norm, NormKind, RegressionReport, effective_norms, sort_by_category, submit_candidates
from ..oracle_stack import OracleStack
from ..protocol import Action, CandidateFlaw, CorrectionType, LocalCorrection, RefinementJob, VerifiedBreach
from .cases import WEAK_EVIDENCE, MedicalCase, PassthroughProposer, case_fields
from .generator import MedicalCaseGenerator

# minimum disposition installed per case type when a cluster of that type is refined
OVERRIDE_MINIMUMS = {"medication": "clinician_review", "lab": "nurse_review"}
RED_ROLE = "red"


def stack_action(stack: OracleStack, trajectory, policy: EnforcementPolicy) -> Action:
    return decide(stack.query({}, trajectory), policy)


@dataclass
class MedicalRedTeam:
    """Generates a case batch, drops what the stack already blocks, submits the rest by category."""

    generator: MedicalCaseGenerator
    proposer: PassthroughProposer
    policy: EnforcementPolicy
    iteration: int = 1

    def observe(self, kb, stack, checkpoint):
        return self.iteration, self.generator.generate(self.iteration), stack

    def orient(self, obs):
        iteration, cases, stack = obs
        rows = []
        for case in cases:
            traj = self.proposer.propose(case)
            result = stack.query({}, traj)
            if decide(result, self.policy) is Action.BLOCK:
                continue
            rows.append((iteration, case, traj, result))
        return rows

    def decide(self, rows):
        return sort_by_category(rows, lambda r: r[1].category)

    def act(self, plan, kb, stack):
        flaws = [
            CandidateFlaw(
                context={"role": RED_ROLE, "iteration": it, "case_id": case.case_id},
                trajectory=traj,
                signals=result,
                v_O=result.v_O,
                category=case.category,
            )
            for it, case, traj, result in plan
        ]
        submit_candidates(kb, flaws)


@dataclass
class MedicalOrienter:
    """Maps a cluster's centroid breach to one correction bundle for the stack.

    ``block_scope`` is ``"matched"`` (block only the norm keywords present in the
    centroid draft) or ``"family"`` (block every keyword of the violated norm).
    """

    norms: Sequence[Norm]
    block_scope: str = "matched"
    minimums: Mapping[str, str] = field(default_factory=lambda: dict(OVERRIDE_MINIMUMS))

    def __post_init__(self) -> None:
        if self.block_scope not in ("matched", "family"):
            raise ValueError(f"unknown block scope {self.block_scope!r}")

    def orient(self, job: RefinementJob, breaches: Sequence[VerifiedBreach], stack: OracleStack) -> Bundle:
        centroid = next(b for b in breaches if b.breach_id == job.centroid_ref)
        norms = {n.id: n for n in effective_norms(self.norms, stack)}
        norm = norms[centroid.phi_broken]
        f = case_fields(centroid.trajectory)
        corrections: list[LocalCorrection] = []
        if norm.kind is NormKind.KEYWORD_BLOCK:
            draft = str(f.get("draft_reply", "")).lower()
            keywords = [k.lower() for k in norm.spec["keywords"]]
            if self.block_scope == "matched":
                keywords = [k for k in keywords if k in draft]
            for k in keywords:
                corrections.append(LocalCorrection(CorrectionType.MEDICAL_HARD_BLOCK, {"keyword": k}))
        case_type = str(f.get("case_type"))
        if case_type in self.minimums:
            for ev in WEAK_EVIDENCE:
                corrections.append(
                    LocalCorrection(
                        CorrectionType.THRESHOLD_ADJUSTMENT,
                        {"key": f"{case_type}|{ev}", "min_disposition": self.minimums[case_type]},
                    )
                )
        corrections.append(LocalCorrection(CorrectionType.AUDIT_COVERAGE_UPDATE, {"case_class": stack.coverage_key(centroid.trajectory)}))
        evidence = {"centroid": centroid.breach_id, "phi": norm.id, "cluster_size": len(breaches)}
        return Bundle(tuple(corrections), evidence)


@dataclass
class FixtureRegression:
    """A batch passes if no fixture outcome that is definitive on the live stack changes on the shadow."""

    fixtures: Sequence[MedicalCase]
    proposer: PassthroughProposer
    policy: EnforcementPolicy

    def run(self, live: OracleStack, shadow: OracleStack) -> RegressionReport:
        flips = []
        definitive = 0
        for case in self.fixtures:
            traj = self.proposer.propose(case)
            before = stack_action(live, traj, self.policy)
            if before not in (Action.ALLOW, Action.BLOCK):
                continue
            definitive += 1
            after = stack_action(shadow, traj, self.policy)
            if after is not before:
                flips.append(case.case_id)
        evidence: dict[str, Any] = {"fixtures_checked": len(self.fixtures), "definitive": definitive, "flips": flips}
        return RegressionReport(not flips, evidence)


def blocked_resolver(policy: EnforcementPolicy) -> Callable[[VerifiedBreach, OracleStack], bool]:
    def resolved(breach: VerifiedBreach, stack: OracleStack) -> bool:
        return stack_action(stack, breach.trajectory, policy) is Action.BLOCK

    return resolved
