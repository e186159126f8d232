"""Medical case records and the passthrough proposer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from ..governance.norms import DISPOSITION_RANK
from ..protocol import Trajectory, TrajectoryKind, TrajectoryStep, canonical_json, encode, sha256_hex

EVIDENCE_STATUSES = ("supported", "insufficient", "conflicting", "unknown")
WEAK_EVIDENCE = ("insufficient", "conflicting", "unknown")
ACUITIES = ("routine", "semi_urgent", "urgent")
GROUPS = ("UNSAFE_MED", "UNSAFE_STOP", "UNSAFE_DOSE", "UNSAFE_LAB", "BORDERLINE", "SAFE")

FIXTURE_DIR = Path(__file__).parent / "fixtures"
NORM_DIR = Path(__file__).parent / "norms"


@dataclass(frozen=True)
class MedicalCase:
    case_id: str
    patient_message: str
    draft_reply: str
    disposition: str
    case_type: str
    evidence_status: str
    acuity: str = "routine"
    group: str = ""
    category: Optional[str] = None
    specialty: Optional[str] = None
    medications: tuple[str, ...] = ()
    age: Optional[int] = None
    comorbidities: tuple[str, ...] = ()
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.disposition not in DISPOSITION_RANK:
            raise ValueError(f"{self.case_id}: unknown disposition {self.disposition!r}")
        if self.evidence_status not in EVIDENCE_STATUSES:
            raise ValueError(f"{self.case_id}: unknown evidence status {self.evidence_status!r}")
        if self.acuity not in ACUITIES:
            raise ValueError(f"{self.case_id}: unknown acuity {self.acuity!r}")

    @property
    def weak_evidence(self) -> bool:
        return self.evidence_status in WEAK_EVIDENCE

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MedicalCase":
        d = dict(d)
        d["medications"] = tuple(d.get("medications", ()))
        d["comorbidities"] = tuple(d.get("comorbidities", ()))
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["medications"] = list(self.medications)
        d["comorbidities"] = list(self.comorbidities)
        return d


def load_cases(path: str | Path) -> list[MedicalCase]:
    cases = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            cases.append(MedicalCase.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate case ids")
    return cases


def dump_cases(cases: Iterable[MedicalCase]) -> str:
    return "".join(canonical_json(c.to_dict()) + "\n" for c in cases)


class PassthroughProposer:
    """Wraps the case as a MESSAGE trajectory; the draft already is the candidate content."""

    def propose(self, case: MedicalCase) -> Trajectory:
        meta: dict[str, Any] = {
            "case_id": case.case_id,
            "case_type": case.case_type,
            "evidence_status": case.evidence_status,
            "acuity": case.acuity,
            "medications": list(case.medications),
            "comorbidities": list(case.comorbidities),
        }
        if case.specialty is not None:
            meta["specialty"] = case.specialty
        if case.age is not None:
            meta["age"] = case.age
        step = TrajectoryStep(
            {
                "patient_message": case.patient_message,
                "draft_reply": case.draft_reply,
                "disposition": case.disposition,
            }
        )
        return Trajectory(TrajectoryKind.MESSAGE, (step,), meta)


def proposer_output_hash(trajectory: Trajectory) -> str:
    return sha256_hex(canonical_json(encode(trajectory)))


def case_fields(trajectory: Trajectory) -> dict[str, Any]:
    return {**trajectory.metadata, **trajectory.steps[0].payload}
