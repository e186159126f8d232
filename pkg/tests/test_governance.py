from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flywheel.governance import (
    CATEGORY_PRIORITY,
    BlueTeam,
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
    blue_team_report,
    candidate_priority,
    category_rank,
    cluster_breaches,
    evaluate_norm,
    job_priority,
    load_norms,
    monitoring_summary,
    rollout,
    run_ooda_tick,
    sort_by_category,
    verify,
)
from flywheel.governance.norms import select_violation
from flywheel.knowledge_base import KnowledgeBase, check_invariants
from flywheel.medical.cases import NORM_DIR
from flywheel.oracle_stack import BatchRejected, CoverageOverlay, OracleStack
from flywheel.protocol import (
    Action,
    CandidateFlaw,
    CorrectionType,
    DecisionRecord,
    FlywheelOverlaySignals,
    GovernanceBatch,
    LocalCorrection,
    MonitoringReport,
    Notice,
    NoticeKind,
    OracleRawOutput,
    QueueName,
    RefinementJob,
    ReleaseStatus,
    StackGenesis,
    Trajectory,
    TrajectoryKind,
    TrajectoryStep,
    UnifiedQueryResult,
    VerificationResult,
    VerifiedBreach,
    signed,
)
from flywheel.spatial import GridOracle, SpatialConfig

KEY = "gov-key"
CFG = SpatialConfig()


def msg(draft="", disposition="reply_only", **meta) -> Trajectory:
    md = {"case_type": "medication", "evidence_status": "conflicting", "acuity": "routine", **meta}
    return Trajectory(TrajectoryKind.MESSAGE, (TrajectoryStep({"draft_reply": draft, "patient_message": "hi", "disposition": disposition}),), md)


def flaw(traj=None, u=0.1, ut=0.5, category=None, hint=None, i=0) -> CandidateFlaw:
    sig = UnifiedQueryResult(OracleRawOutput(0.5, u, ut, "oracle:v0"), FlywheelOverlaySignals(0.9, 0.6), phi_hint=hint)
    return CandidateFlaw({"i": i}, traj or msg(f"draft {i}"), sig, "oracle:v0", category=category)


def breach_of(f: CandidateFlaw, phi: str) -> tuple[VerificationResult, VerifiedBreach]:
    v = VerificationResult(f.id, True, phi)
    return v, VerifiedBreach(f.id, v.id, f.context, f.trajectory, phi, f.signals, f.v_O, category=f.category)


PORTAL_NORMS = load_norms(NORM_DIR / "portal.json")


# ---------------------------------------------------------------- norms


def test_keyword_block_with_weak_evidence_is_violation():
    norm = next(n for n in PORTAL_NORMS if n.kind is NormKind.KEYWORD_BLOCK)
    assert evaluate_norm(norm, msg("You could stop taking warfarin.")).violated
    assert not evaluate_norm(norm, msg("You could stop taking warfarin.", evidence_status="supported")).violated
    assert not evaluate_norm(norm, msg("Keep taking warfarin.")).violated


def test_spatial_boundary_norm():
    norm = Norm("SPATIAL", NormKind.SPATIAL_BOUNDARY, {"field": "d", "threshold": 0.34}, severity=1.0)
    far = Trajectory(TrajectoryKind.SPATIAL_POINT, (TrajectoryStep({"point": [0.73, -0.42, 0.81], "d": 0.72}),))
    near = Trajectory(TrajectoryKind.SPATIAL_POINT, (TrajectoryStep({"point": [0, 0, 0], "d": 0.34}),))
    assert evaluate_norm(norm, far).violated
    assert not evaluate_norm(norm, near).violated


def test_predicate_rank_comparison():
    norm = Norm("LAB", NormKind.PREDICATE, {"min_disposition": "nurse_review"})
    assert not evaluate_norm(norm, msg(disposition="clinician_review")).violated
    assert not evaluate_norm(norm, msg(disposition="nurse_review")).violated
    assert evaluate_norm(norm, msg(disposition="reply_only")).violated


def test_regex_and_threshold_rule_kinds():
    rx = Norm("RX", NormKind.REGEX, {"pattern": r"\b\d+\s*mg\b"})
    assert evaluate_norm(rx, msg("take 50 mg daily")).violated
    assert not evaluate_norm(rx, msg("take it daily")).violated
    tr = Norm("TR", NormKind.THRESHOLD_RULE, {"any": [{"attribute": "medications", "op": ">=", "value": 2}], "evidence_standard": "supported"})
    assert evaluate_norm(tr, msg(medications=["a", "b"])).violated
    assert not evaluate_norm(tr, msg(medications=["a", "b"], evidence_status="supported")).violated
    assert not evaluate_norm(tr, msg(medications=["a"])).violated


def test_missing_field_gives_warning_not_violation():
    norm = Norm("AGE", NormKind.THRESHOLD_RULE, {"any": [{"attribute": "age", "op": ">=", "value": 65}], "evidence_standard": "supported"})
    verdict = evaluate_norm(norm, msg())
    assert not verdict.violated and verdict.missing == ("age",)
    ver = verify(flaw(msg()), [norm])
    assert not ver.result.is_violation and ver.breach is None
    assert [w.norm_id for w in ver.warnings] == ["AGE"]


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.sampled_from(["case_type", "evidence_status", "acuity", "disposition", "age"]), st.none(), max_size=5))
def test_absent_data_never_produces_a_violation(blanks):
    md = {"case_type": "medication", "evidence_status": "conflicting", "acuity": "routine", "age": 70}
    md.update(blanks)
    payload = {"draft_reply": "fine", "patient_message": "hi", "disposition": None if "disposition" in blanks else "reply_only"}
    traj = Trajectory(TrajectoryKind.MESSAGE, (TrajectoryStep(payload),), {k: v for k, v in md.items() if v is not None})
    norms = PORTAL_NORMS + [Norm("AGE", NormKind.THRESHOLD_RULE, {"any": [{"attribute": "age", "value": 65}], "evidence_standard": "supported"})]
    for n in norms:
        v = evaluate_norm(n, traj)
        if v.missing:
            assert not v.violated


def test_violation_selection_by_severity_then_id():
    a = Norm("B_NORM", NormKind.PREDICATE, {"min_disposition": "nurse_review"}, severity=0.9)
    b = Norm("A_NORM", NormKind.PREDICATE, {"min_disposition": "nurse_review"}, severity=0.9)
    c = Norm("C_NORM", NormKind.PREDICATE, {"min_disposition": "nurse_review"}, severity=0.95)
    traj = msg()
    assert select_violation([a, b], [evaluate_norm(n, traj) for n in (a, b)]).id == "A_NORM"
    assert verify(flaw(traj), [a, b, c]).result.phi_broken == "C_NORM"


def test_norm_validation_and_round_trip():
    with pytest.raises(ValueError):
        Norm("X", NormKind.KEYWORD_BLOCK, {"keywords": ["a"]})
    with pytest.raises(ValueError):
        Norm("X", NormKind.PREDICATE, {"min_disposition": "nope"})
    with pytest.raises(ValueError):
        Norm("X", NormKind.REGEX, {"pattern": "x"}, severity=0.0)
    for n in PORTAL_NORMS:
        assert Norm.from_dict(n.to_dict()) == n


def test_verify_requires_norms():
    with pytest.raises(ValueError):
        verify(flaw(), [])


# ---------------------------------------------------------------- triage


def test_dangerous_certainty_priority_examples():
    assert candidate_priority(flaw(u=0.05, ut=0.30), {}) == pytest.approx(0.5 * 0.25)
    assert candidate_priority(flaw(u=0.30, ut=0.30), {}) == 0.0
    a = flaw(u=0.05, ut=0.30, hint="SEV1", i=1)
    b = flaw(u=0.10, ut=0.50, hint="SEV05", i=2)
    sev = {"SEV1": 1.0, "SEV05": 0.5}
    assert candidate_priority(a, sev) == pytest.approx(0.25)
    assert candidate_priority(b, sev) == pytest.approx(0.20)


def test_candidate_triage_reorders_queue():
    kb = KnowledgeBase()
    sev = {"SEV1": 1.0, "SEV05": 0.5}
    b = flaw(u=0.10, ut=0.50, hint="SEV05", i=2)
    a = flaw(u=0.05, ut=0.30, hint="SEV1", i=1)
    for f in (b, a):
        kb.append(f)
        kb.enqueue(QueueName.VER, f.id, 0.0)
    run_ooda_tick(OodaRole(Role.TRIAGE, CandidateTriage(sev)), kb, None)
    assert kb.dequeue(QueueName.VER) == a.id


def test_fifo_triage_keeps_arrival_order():
    kb = KnowledgeBase()
    fs = [flaw(u=0.4 - 0.1 * i, ut=0.5, i=i) for i in range(3)]
    for f in fs:
        kb.append(f)
        kb.enqueue(QueueName.VER, f.id, 0.0)
    assert run_ooda_tick(OodaRole(Role.TRIAGE, CandidateTriage({}, TriageMode.FIFO)), kb, None) == []
    assert [kb.dequeue(QueueName.VER) for _ in fs] == [f.id for f in fs]


def test_exact_key_clustering_sizes():
    breaches = []
    for i in range(5):
        f = flaw(i=i, category="undertriaged_med")
        breaches.append(breach_of(f, "NORM_A" if i < 3 else "NORM_B")[1])
    clusters = cluster_breaches(breaches)
    assert [(k, len(m)) for k, m in clusters] == [(("NORM_A", "undertriaged_med"), 3), (("NORM_B", "undertriaged_med"), 2)]


def test_risk_score_is_severity_times_size():
    breaches = [breach_of(flaw(i=i), "N")[1] for i in range(4)]
    (job,) = ClusterTriage({"N": 0.9}).decide(cluster_breaches(breaches))
    assert job.size == 4 and job.risk_score == pytest.approx(3.6)


def test_category_order_for_equal_sized_clusters():
    lab = [breach_of(flaw(i=i, category="lab_no_context"), "LAB")[1] for i in range(2)]
    med = [breach_of(flaw(i=10 + i, category="undertriaged_med"), "MED")[1] for i in range(2)]
    jobs = ClusterTriage({"LAB": 0.8, "MED": 0.8}).decide(cluster_breaches(lab + med))
    assert [j.category for j in jobs] == ["undertriaged_med", "lab_no_context"]
    assert job_priority(jobs[0], TriageMode.PRIORITY) > job_priority(jobs[1], TriageMode.PRIORITY)
    assert job_priority(jobs[0], TriageMode.FIFO) == 0.0


def test_category_priority_sort():
    cats = ["exploratory", "lab_no_context", "missed_urgency", None, "undertriaged_med", "vulnerable_patient"]
    assert sort_by_category(cats, lambda c: c) == list(CATEGORY_PRIORITY[:2]) + ["vulnerable_patient", "lab_no_context", "exploratory", None]
    assert category_rank("missed_urgency") > category_rank("undertriaged_med") > category_rank(None)


def test_triage_is_deterministic(medical_runs):
    for _, demo, _ in medical_runs.values():
        breaches = demo.kb.of_type(VerifiedBreach)
        triage = ClusterTriage(demo.roles[3].strategy.severities, TriageMode.PRIORITY)
        first = [j.job_id for j in triage.decide(cluster_breaches(breaches))]
        assert first == [j.job_id for j in triage.decide(cluster_breaches(breaches))]


# ---------------------------------------------------------------- ooda engine


class Boom:
    def observe(self, kb, stack, checkpoint):
        raise RuntimeError("observer crashed")

    def orient(self, x):
        return x

    def decide(self, x):
        return x

    def act(self, plan, kb, stack):
        pass


def test_failing_strategy_leaves_error_notice_and_advances():
    kb = KnowledgeBase()
    role = OodaRole(Role.RED, Boom())
    ids = run_ooda_tick(role, kb, None)
    (note,) = [kb.get(i) for i in ids]
    assert isinstance(note, Notice) and note.notice is NoticeKind.ERROR and "observer crashed" in note.message
    assert role.checkpoint == len(kb)


def test_verify_tick_on_empty_queue_appends_nothing():
    stack = OracleStack(NullOracle(), CoverageOverlay(("case_type",), 0.2, 0.9))
    assert run_ooda_tick(OodaRole(Role.VERIFY, Verifier(PORTAL_NORMS)), KnowledgeBase(), stack) == []


def test_rerunning_cluster_tick_from_same_checkpoint_is_idempotent():
    kb = KnowledgeBase()
    for i in range(3):
        f = flaw(i=i, category="undertriaged_med")
        v, b = breach_of(f, "N")
        kb.append_all([f, v, b])
    role = OodaRole(Role.TRIAGE, ClusterTriage({"N": 1.0}))
    first = run_ooda_tick(role, kb, None)
    assert first
    role.checkpoint = 0
    assert run_ooda_tick(role, kb, None) == []


def test_checkpoint_beyond_log_is_refused():
    with pytest.raises(ValueError):
        run_ooda_tick(OodaRole(Role.BLUE, BlueTeam(), checkpoint=5), KnowledgeBase(), None)


# ---------------------------------------------------------------- refinement


class CoverOrienter:
    def orient(self, job, breaches, stack):
        return Bundle((LocalCorrection(CorrectionType.AUDIT_COVERAGE_UPDATE, {"case_class": job.cluster_id}),), {"source": "test"})


class EmptyOrienter:
    def orient(self, job, breaches, stack):
        return Bundle(())


class Regression:
    def __init__(self, passed):
        self.passed = passed

    def run(self, live, shadow):
        return RegressionReport(self.passed, {"checked": 1})


class NullOracle:
    supported_kinds = frozenset({TrajectoryKind.MESSAGE})

    def evaluate(self, context, trajectory):
        raise AssertionError("not queried")

    def apply_correction(self, c, batch_id):
        return False

    def snapshot(self):
        return {}

    def restore(self, state):
        pass


def refine_setup(priority=2.0):
    kb = KnowledgeBase()
    stack = OracleStack(NullOracle(), CoverageOverlay(("case_type",), 0.2, 0.9))
    kb.append(StackGenesis(stack.version))
    f = flaw(category="undertriaged_med")
    v, b = breach_of(f, "N")
    kb.append_all([f, v, b])
    job = RefinementJob("N|undertriaged_med", b.breach_id, 1, 1.0, (b.breach_id,), category="undertriaged_med", phi="N")
    kb.append(job)
    kb.enqueue(QueueName.REF, job.job_id, priority)
    return kb, stack, job


def tick_refiner(kb, stack, orienter, regression):
    role = OodaRole(Role.REFINE, Refiner(orienter, regression, lambda b, s: False, KEY))
    return [kb.get(i) for i in run_ooda_tick(role, kb, stack)]


def test_refiner_builds_signed_batch_with_evidence_and_leaves_stack_alone():
    kb, stack, job = refine_setup()
    h = stack.snapshot_hash()
    arts = tick_refiner(kb, stack, CoverOrienter(), Regression(True))
    (batch,) = [a for a in arts if isinstance(a, GovernanceBatch)]
    assert batch.job_ref == job.job_id and batch.from_oracle_version == "oracle:v0" and batch.to_oracle_version == "oracle:v1"
    assert batch.regression_evidence == {"source": "test", "checked": 1}
    assert kb.anti_rollback_check(batch, KEY)
    assert stack.snapshot_hash() == h


def test_empty_ref_queue_builds_no_batch():
    kb = KnowledgeBase()
    stack = OracleStack(NullOracle(), CoverageOverlay(("case_type",), 0.2, 0.9))
    assert tick_refiner(kb, stack, CoverOrienter(), Regression(True)) == []


def test_regression_failure_discards_batch_and_requeues_at_half_priority():
    kb, stack, job = refine_setup(priority=2.0)
    arts = tick_refiner(kb, stack, CoverOrienter(), Regression(False))
    assert not any(isinstance(a, GovernanceBatch) for a in arts)
    notes = [a for a in arts if isinstance(a, Notice)]
    assert [n.notice for n in notes] == [NoticeKind.REGRESSION_FAILURE]
    assert kb.pending(QueueName.REF) == [(job.job_id, 1.0)]
    assert kb.ledger == ()


def test_empty_bundle_closes_job():
    kb, stack, job = refine_setup()
    arts = tick_refiner(kb, stack, EmptyOrienter(), Regression(True))
    assert [a.notice for a in arts if isinstance(a, Notice)] == [NoticeKind.JOB_CLOSED]
    assert kb.views().open_clusters == ()


def test_medication_job_bundle_contents(medical_runs):
    _, demo, _ = medical_runs["patient_portal"]
    first = demo.kb.of_type(GovernanceBatch)[0]
    kinds = [c.correction_type for c in first.local_corrections]
    assert CorrectionType.MEDICAL_HARD_BLOCK in kinds
    overrides = sorted(c.payload["key"] for c in first.local_corrections if c.correction_type is CorrectionType.THRESHOLD_ADJUSTMENT)
    assert overrides == ["medication|conflicting", "medication|insufficient", "medication|unknown"]
    assert kinds.count(CorrectionType.AUDIT_COVERAGE_UPDATE) == 1


# ---------------------------------------------------------------- blue team


def test_portal_eval_zero_escalation_rate(medical_runs):
    _, demo, _ = medical_runs["patient_portal"]
    log = demo.kb.log
    last = max(i for i, a in enumerate(log) if isinstance(a, DecisionRecord) and a.context.get("eval") == 0)
    summary = monitoring_summary(log[: last + 1])
    assert summary["decisions"] == 15
    assert summary["escalation_rate"] == pytest.approx(0.6)
    assert summary["block_rate"] == 0.0


def test_empty_log_report_has_zero_rates():
    rep = blue_team_report(KnowledgeBase())
    assert isinstance(rep, MonitoringReport)
    assert rep.summary["decisions"] == 0 and rep.summary["escalation_rate"] == 0.0


def test_per_version_distribution_matches_hand_count():
    rng = np.random.default_rng(3)
    traj = msg("x")
    records, expected = [], {}
    for i in range(20):
        v = f"oracle:v{int(rng.integers(0, 3))}"
        a = [Action.ALLOW, Action.BLOCK, Action.ESCALATE][int(rng.integers(0, 3))]
        records.append(DecisionRecord({"i": i}, traj, a, 0.5, 0.1, 0.5, 0.2, 0.6, v))
        expected.setdefault(v, {}).setdefault(a.value, 0)
        expected[v][a.value] += 1
    summary = monitoring_summary(records)
    assert summary["per_version"] == {v: dict(sorted(c.items())) for v, c in sorted(expected.items())}
    assert sum(summary["actions"].values()) == 20


def test_blue_team_tick_appends_report():
    kb = KnowledgeBase()
    kb.append(flaw())
    (rid,) = run_ooda_tick(OodaRole(Role.BLUE, BlueTeam()), kb, None)
    assert kb.get(rid).summary["open_flaws"] == {"uncategorized": 1}


# ---------------------------------------------------------------- rollout


def rollout_setup():
    kb = KnowledgeBase()
    stack = OracleStack(GridOracle(np.full(CFG.n_cells, 0.68), CFG), CoverageOverlay(("coverage_class",), 0.15, 0.85))
    kb.append(StackGenesis(stack.version))
    return kb, stack


def spatial_batch(stack, center=(0.73, -0.42, 0.81)):
    corr = (LocalCorrection(CorrectionType.SPATIAL_FLAW_PATCH, {"flaw_point": list(center), "support_radius": 0.19}),)
    return signed(GovernanceBatch(stack.version, stack.next_version(), corr, regression_evidence={"basin_ok": 1}), KEY)


def test_clean_rollout_reaches_full():
    kb, stack = rollout_setup()
    batch = spatial_batch(stack)
    recs = rollout(batch, kb, stack, KEY)
    assert [r.status for r in recs] == [ReleaseStatus.CANARY, ReleaseStatus.EXPAND, ReleaseStatus.FULL]
    assert kb.active_version() == stack.version == "oracle:v1"
    assert kb.views().kernels_installed == 1


def test_canary_alarm_rolls_back_to_identical_snapshot():
    kb, stack = rollout_setup()
    pre = stack.snapshot_hash()
    batch = spatial_batch(stack)
    recs = rollout(batch, kb, stack, KEY, alarm=lambda stage, b, s: stage == "canary")
    assert [r.status for r in recs] == [ReleaseStatus.CANARY, ReleaseStatus.ROLLED_BACK]
    assert stack.snapshot_hash() == pre
    assert kb.active_version() == "oracle:v0"
    assert kb.views().kernels_installed == 0


def test_rerelease_after_rollback_is_accepted():
    kb, stack = rollout_setup()
    rollout(spatial_batch(stack), kb, stack, KEY, alarm=lambda stage, b, s: stage == "expand")
    fixed = spatial_batch(stack, center=(0.8, 0.8, -0.8))
    assert fixed.from_oracle_version == "oracle:v0" and fixed.to_oracle_version == "oracle:v2"
    recs = rollout(fixed, kb, stack, KEY)
    assert recs[-1].status is ReleaseStatus.FULL
    assert kb.active_version() == "oracle:v2"


def test_unsigned_or_stale_batch_is_refused():
    kb, stack = rollout_setup()
    batch = spatial_batch(stack)
    with pytest.raises(BatchRejected):
        rollout(batch, kb, stack, "wrong-key")
    rollout(batch, kb, stack, KEY)
    with pytest.raises(BatchRejected):
        rollout(batch, kb, stack, KEY)


def test_demo_logs_have_no_unreleased_failure_batches(medical_runs):
    for _, demo, _ in medical_runs.values():
        assert check_invariants(demo.kb) == []
        released = {r.batch_id for r in demo.kb.ledger}
        for b in demo.kb.of_type(GovernanceBatch):
            assert b.batch_id in released
