"""OODA role engine and the double-filter governance pipeline."""

from .norms import DISPOSITION_RANK, Norm, NormKind, NormVerdict, Verification, evaluate_norm, load_norms, verify
from .ooda import OodaRole, OodaStrategy, Role, run_ooda_tick
from .pipeline import (
    CATEGORY_PRIORITY,
    Alarm,
    BlueTeam,
    Bundle,
    CandidateTriage,
    ClusterTriage,
    CorrectionOrienter,
    Refiner,
    RegressionReport,
    RegressionSuite,
    TriageMode,
    Verifier,
    blue_team_report,
    candidate_priority,
    category_rank,
    cluster_breaches,
    effective_norms,
    job_priority,
    monitoring_summary,
    release_id_for,
    rollout,
    sort_by_category,
    submit_candidates,
)

__all__ = [
    "Alarm",
    "BlueTeam",
    "Bundle",
    "CATEGORY_PRIORITY",
    "CandidateTriage",
    "ClusterTriage",
    "CorrectionOrienter",
    "DISPOSITION_RANK",
    "Norm",
    "NormKind",
    "NormVerdict",
    "OodaRole",
    "OodaStrategy",
    "Refiner",
    "RegressionReport",
    "RegressionSuite",
    "Role",
    "TriageMode",
    "Verification",
    "Verifier",
    "blue_team_report",
    "candidate_priority",
    "category_rank",
    "cluster_breaches",
    "effective_norms",
    "evaluate_norm",
    "job_priority",
    "load_norms",
    "monitoring_summary",
    "release_id_for",
    "rollout",
    "run_ooda_tick",
    "sort_by_category",
    "submit_candidates",
    "verify",
]
