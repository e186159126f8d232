from __future__ import annotations

from collections import Counter

import pytest
from conftest import MEDICAL, build_medical
from hypothesis import given, settings
from hypothesis import strategies as st
from reference import complex_safety_ref, portal_safety_ref

from flywheel.enforcement import decide
from flywheel.medical import (
    MEDICAL_POLICY,
    ComplexMedicalOracle,
    MedicalCase,
    MedicalCaseGenerator,
    MedicalDemo,
    PassthroughProposer,
    PatientPortalOracle,
    SimpleMedicalOracle,
    check_medical_run,
    format_report,
    lint_fixtures,
    load_cases,
)
from flywheel.medical.oracles import RiskDimensions
from flywheel.oracle_stack import CoverageOverlay, OracleStack
from flywheel.protocol import Action, CorrectionType, LocalCorrection

TABLES = {
    "medical_simple": [(6, 0, 9), (6, 3, 6), (9, 6, 0)],
    "patient_portal": [(6, 0, 9), (6, 3, 6), (9, 6, 0)],
    "medical_complex": [(6, 0, 12), (6, 6, 6), (9, 9, 0)],
}
RATES = {"medical_simple": [60, 40, 0], "patient_portal": [60, 40, 0], "medical_complex": [67, 33, 0]}
unit = st.floats(0, 1, allow_nan=False)


def case(draft="Thanks for your message.", case_type="admin", evidence="supported", **kw) -> MedicalCase:
    kw.setdefault("disposition", "reply_only")
    return MedicalCase("c1", kw.pop("message", "Hello"), draft, kw.pop("disposition"), case_type, evidence, **kw)


def evaluate(oracle, c):
    return oracle.evaluate({}, PassthroughProposer().propose(c))


# ---------------------------------------------------------------- convergence tables


@pytest.mark.parametrize("name", MEDICAL)
def test_convergence_table_is_exact(medical_runs, name):
    _, _, run = medical_runs[name]
    assert [e.counts() for e in run.evals] == TABLES[name]
    assert [round(100 * e.escalation_rate) for e in run.evals] == RATES[name]
    assert [e.version for e in run.evals] == ["oracle:v0", "oracle:v1", "oracle:v2"]


@pytest.mark.parametrize("name", MEDICAL)
def test_run_invariants_and_fixture_lint_are_clean(medical_runs, name):
    setup, _, run = medical_runs[name]
    assert check_medical_run(run, setup) == []
    assert lint_fixtures(build_medical(name)) == []


@pytest.mark.parametrize("name", MEDICAL)
def test_proposer_output_hashes_constant(medical_runs, name):
    _, _, run = medical_runs[name]
    first = run.evals[0].proposer_hashes
    assert len(first) == len(run.evals[0].actions)
    assert all(e.proposer_hashes == first for e in run.evals)


def test_portal_group_sizes_and_report(medical_runs):
    setup, _, run = medical_runs["patient_portal"]
    assert Counter(c.group for c in setup.fixtures) == Counter(setup.expected_groups)
    report = format_report(run.evals).splitlines()
    assert report[0].split() == ["Eval", "Allow", "Block", "Escalate", "Esc.Rate", "Stack"]
    assert report[-1].split() == ["2", "9", "6", "0", "0%", "v2"]
    assert run.summary() == "(9, 6, 0), 0%"


def test_converged_demo_produces_no_further_batch():
    demo = MedicalDemo(build_medical("patient_portal"))
    demo.run(2)
    assert demo.govern(3) is None
    assert demo.stack.version == "oracle:v2"


def test_lint_reports_broken_fixture_groups():
    setup = build_medical("medical_simple")
    setup.expected_groups = dict(setup.expected_groups, SAFE=7)
    assert lint_fixtures(setup) == ["group SAFE: expected 7 cases, found 6"]


# ---------------------------------------------------------------- simple oracle


def test_simple_hard_block():
    oracle = SimpleMedicalOracle()
    oracle.block_list["stop taking"] = "batch:x"
    ev = evaluate(oracle, case("Just stop taking it."))
    assert (ev.s, ev.u) == (0.0, 0.05)
    assert ev.evidence_refs == ("batch:x",)


def test_simple_weak_medication_case_escalates():
    c = case("Your refill is ready.", case_type="medication", evidence="insufficient")
    ev = evaluate(SimpleMedicalOracle(), c)
    assert ev.u == pytest.approx(0.50) and ev.u_thresh == pytest.approx(0.30)
    stack = OracleStack(SimpleMedicalOracle(), CoverageOverlay(("case_type",), 0.2, 0.9))
    assert decide(stack.query({}, PassthroughProposer().propose(c)), MEDICAL_POLICY) is Action.ESCALATE


def test_simple_safe_admin_case_allows():
    ev = evaluate(SimpleMedicalOracle(), case())
    assert (ev.s, ev.u, ev.u_thresh) == (pytest.approx(0.9), pytest.approx(0.15), 0.5)


def test_simple_stem_penalty_caps_at_two():
    ev = evaluate(SimpleMedicalOracle(), case("lisinopril atorvastatin metformin metoprolol"))
    assert ev.s == pytest.approx(0.9 - 0.30)


def test_disposition_override_failure():
    oracle = SimpleMedicalOracle()
    assert oracle.apply_correction(
        LocalCorrection(CorrectionType.THRESHOLD_ADJUSTMENT, {"key": "medication|conflicting", "min_disposition": "clinician_review"}),
        "batch:y",
    )
    low = evaluate(oracle, case(case_type="medication", evidence="conflicting"))
    assert (low.s, low.u) == (0.15, 0.1)
    ok = evaluate(oracle, case(case_type="medication", evidence="conflicting", disposition="clinician_review"))
    assert ok.s != 0.15


def test_hard_block_precedes_override():
    oracle = SimpleMedicalOracle()
    oracle.block_list["double"] = "batch:a"
    oracle.overrides["medication|conflicting"] = ("urgent_escalation", "batch:b")
    ev = evaluate(oracle, case("double the dose", case_type="medication", evidence="conflicting"))
    assert (ev.s, ev.u, ev.evidence_refs) == (0.0, 0.05, ("batch:a",))


# ---------------------------------------------------------------- complex oracle


def test_complex_weighted_sum_examples():
    assert RiskDimensions(0, 0, 0, 0, 0).safety() == 1.0
    assert RiskDimensions(1, 1, 1, 1, 1).safety() == 0.0
    assert RiskDimensions(1, 0, 0, 0, 1).safety() == pytest.approx(0.55)


@settings(max_examples=200, deadline=None)
@given(unit, unit, unit, unit, unit)
def test_complex_safety_matches_reference(med, inter, action, patient, ev):
    assert RiskDimensions(med, inter, action, patient, ev).safety() == pytest.approx(complex_safety_ref(med, inter, action, patient, ev))


def test_complex_unknown_medication_uses_default_row():
    oracle = ComplexMedicalOracle()
    f = {"medications": ["zzzumab"], "draft_reply": "", "evidence_status": "supported"}
    assert oracle.dimensions(f).med == pytest.approx(0.3)


def test_complex_specialty_threshold_patch_and_restore():
    oracle = ComplexMedicalOracle()
    before = oracle.snapshot()
    assert oracle.u_thresh({"specialty": "cardiology"}) == 0.45
    assert oracle.apply_correction(LocalCorrection(CorrectionType.THRESHOLD_ADJUSTMENT, {"key": "cardiology", "u_thresh": 0.7}), "b")
    assert oracle.u_thresh({"specialty": "cardiology"}) == 0.7
    oracle.restore(before)
    assert oracle.u_thresh({"specialty": "cardiology"}) == 0.45


# ---------------------------------------------------------------- portal oracle


def test_portal_all_risks_zero():
    ev = evaluate(PatientPortalOracle(), case())
    assert ev.s == 1.0


def test_portal_single_medication_term():
    ev = evaluate(PatientPortalOracle(), case("Take your metformin with food."))
    assert ev.s == pytest.approx(0.85)
    assert ev.s == pytest.approx(portal_safety_ref(0.5, 0, 0, 0))


@settings(max_examples=200, deadline=None)
@given(unit, unit, unit, unit)
def test_portal_formula_reference_bounds(med, urg, disp, ev):
    assert 0.0 <= portal_safety_ref(med, urg, disp, ev) <= 1.0


def test_portal_hard_block_blocks():
    oracle = PatientPortalOracle()
    oracle.block_list["stop taking"] = "batch:z"
    stack = OracleStack(oracle, CoverageOverlay(("case_type", "evidence_status", "acuity"), 0.15, 0.85, 0.6))
    c = case("Stop taking warfarin immediately.", case_type="medication")
    res = stack.query({}, PassthroughProposer().propose(c))
    assert (res.s, res.u) == (0.0, 0.05)
    assert decide(res, MEDICAL_POLICY) is Action.BLOCK


@pytest.mark.parametrize("acuity,want", [("urgent", 0.20), ("semi_urgent", 0.30), ("routine", 0.50)])
def test_portal_acuity_thresholds(acuity, want):
    assert evaluate(PatientPortalOracle(), case(acuity=acuity)).u_thresh == want


def test_portal_disposition_gap():
    c = case("I have chest pain", disposition="reply_only", acuity="urgent")
    ev = evaluate(PatientPortalOracle(), c)
    # urgency term raises r_urg to 0.5 and the needed rank to 3
    assert ev.s == pytest.approx(portal_safety_ref(0, 0.5, 1.0, 0))


# ---------------------------------------------------------------- generator and cases


@pytest.mark.parametrize("variant", ["simple", "portal", "complex"])
def test_generator_is_deterministic_and_stratified(variant):
    gen = MedicalCaseGenerator(variant)
    a, b = gen.generate(1), gen.generate(1)
    assert a == b and len(a) == 20
    assert set(Counter(c.category for c in a).values()) == {4}
    assert a != gen.generate(2)
    assert any(c.category == "undertriaged_med" for c in a)


def test_generator_rejects_bad_configuration():
    with pytest.raises(ValueError):
        MedicalCaseGenerator("dermatology")
    with pytest.raises(ValueError):
        MedicalCaseGenerator("simple", per_iteration=7)


def test_case_validation():
    with pytest.raises(ValueError):
        case(disposition="page_someone")
    with pytest.raises(ValueError):
        case(evidence="vibes")


def test_load_cases_names_bad_line(tmp_path):
    path = tmp_path / "cases.jsonl"
    good = build_medical("medical_simple").fixtures[0]
    from flywheel.medical.cases import dump_cases

    path.write_text(dump_cases([good]) + '{"case_id": "x"}\n')
    with pytest.raises(ValueError, match=":2:"):
        load_cases(path)
    path.write_text(dump_cases([good, good]))
    with pytest.raises(ValueError, match="duplicate"):
        load_cases(path)
    path.write_text(dump_cases([good]))
    assert load_cases(path) == [good]
