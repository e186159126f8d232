"""Medical governance demos over proxy oracles and fixed fixture sets."""

from .cases import FIXTURE_DIR, NORM_DIR, WEAK_EVIDENCE, MedicalCase, PassthroughProposer, load_cases, proposer_output_hash
from .demo import MEDICAL_POLICY, EvalResult, MedicalDemo, MedicalRun, MedicalSetup, StrategyFailure, check_medical_run, format_report, lint_fixtures
from .generator import MedicalCaseGenerator
from .oracles import ComplexMedicalOracle, PatchableMedicalOracle, PatientPortalOracle, SimpleMedicalOracle
from .pipeline import FixtureRegression, MedicalOrienter, MedicalRedTeam

__all__ = [
    "ComplexMedicalOracle",
    "EvalResult",
    "FIXTURE_DIR",
    "FixtureRegression",
    "MEDICAL_POLICY",
    "MedicalCase",
    "MedicalCaseGenerator",
    "MedicalDemo",
    "MedicalOrienter",
    "MedicalRedTeam",
    "MedicalRun",
    "MedicalSetup",
    "NORM_DIR",
    "PassthroughProposer",
    "PatchableMedicalOracle",
    "PatientPortalOracle",
    "SimpleMedicalOracle",
    "StrategyFailure",
    "WEAK_EVIDENCE",
    "check_medical_run",
    "format_report",
    "lint_fixtures",
    "load_cases",
    "proposer_output_hash",
]
