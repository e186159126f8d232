"""Typed norms and their verifier semantics."""

from __future__ import annotations

import enum
import json
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from ..protocol import CandidateFlaw, Trajectory, VerificationResult, VerifiedBreach

DISPOSITION_RANK = {"reply_only": 0, "nurse_review": 1, "clinician_review": 2, "urgent_escalation": 3}
DEFAULT_TEXT_FIELDS = ("draft_reply",)

_OPS = {
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
    "==": operator.eq,
    "!=": operator.ne,
}


class NormKind(str, enum.Enum):
    KEYWORD_BLOCK = "keyword_block"
    REGEX = "regex"
    PREDICATE = "predicate"
    SPATIAL_BOUNDARY = "spatial_boundary"
    THRESHOLD_RULE = "threshold_rule"


_REQUIRED_SPEC = {
    NormKind.KEYWORD_BLOCK: ("keywords", "evidence_condition"),
    NormKind.REGEX: ("pattern",),
    NormKind.PREDICATE: ("min_disposition",),
    NormKind.SPATIAL_BOUNDARY: ("threshold",),
    NormKind.THRESHOLD_RULE: ("any", "evidence_standard"),
}


@dataclass(frozen=True)
class Norm:
    id: str
    kind: NormKind
    spec: dict[str, Any]
    severity: float = 0.5
    weight: float = 1.0
    description: str = ""

    def __post_init__(self) -> None:
        if not (0 < self.severity <= 1):
            raise ValueError(f"{self.id}: severity must be in (0, 1]")
        missing = [k for k in _REQUIRED_SPEC[self.kind] if k not in self.spec]
        if missing:
            raise ValueError(f"{self.id}: {self.kind.value} spec missing {missing}")
        if self.kind is NormKind.PREDICATE and self.spec["min_disposition"] not in DISPOSITION_RANK:
            raise ValueError(f"{self.id}: unknown disposition {self.spec['min_disposition']}")
        if self.kind is NormKind.REGEX:
            re.compile(self.spec["pattern"])

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Norm":
        return cls(
            id=str(d["id"]),
            kind=NormKind(str(d["kind"]).lower()),
            spec=dict(d.get("spec", {})),
            severity=float(d.get("severity", 0.5)),
            weight=float(d.get("weight", 1.0)),
            description=str(d.get("description", "")),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "spec": self.spec,
            "severity": self.severity,
            "weight": self.weight,
            "description": self.description,
        }


def load_norms(path: str | Path) -> list[Norm]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["norms"] if isinstance(doc, dict) else doc
    return [Norm.from_dict(d) for d in items]


class MissingField(KeyError):
    pass


@dataclass(frozen=True)
class NormVerdict:
    norm_id: str
    violated: bool
    missing: tuple[str, ...] = ()


def step_fields(trajectory: Trajectory, index: int = 0) -> dict[str, Any]:
    return {**trajectory.metadata, **trajectory.steps[index].payload}


def _get(rec: Mapping[str, Any], name: str) -> Any:
    if name not in rec or rec[name] is None:
        raise MissingField(name)
    return rec[name]


def _text(rec: Mapping[str, Any], fields: Sequence[str]) -> str:
    return " ".join(str(_get(rec, f)) for f in fields).lower()


def _matches(value: Any, expected: Any) -> bool:
    if isinstance(expected, (list, tuple)):
        return value in expected
    return value == expected


def _keyword_block(spec: Mapping[str, Any], rec: Mapping[str, Any]) -> bool:
    text = _text(rec, spec.get("fields", DEFAULT_TEXT_FIELDS))
    if not any(k.lower() in text for k in spec["keywords"]):
        return False
    condition = spec["evidence_condition"]
    return not condition or _get(rec, "evidence_status") in condition


def _regex(spec: Mapping[str, Any], rec: Mapping[str, Any]) -> bool:
    text = _text(rec, spec.get("fields", DEFAULT_TEXT_FIELDS))
    return re.search(spec["pattern"], text, flags=re.IGNORECASE) is not None


def _predicate(spec: Mapping[str, Any], rec: Mapping[str, Any]) -> bool:
    for name, expected in spec.get("when", {}).items():
        if not _matches(_get(rec, name), expected):
            return False
    keywords = spec.get("keywords_any")
    if keywords:
        text = _text(rec, spec.get("fields", ("patient_message", "draft_reply")))
        if not any(k.lower() in text for k in keywords):
            return False
    proposed = _get(rec, spec.get("disposition_field", "disposition"))
    if proposed not in DISPOSITION_RANK:
        raise MissingField("disposition")
    return DISPOSITION_RANK[proposed] < DISPOSITION_RANK[spec["min_disposition"]]


def _threshold_rule(spec: Mapping[str, Any], rec: Mapping[str, Any]) -> bool:
    triggered = False
    for cond in spec["any"]:
        value = _get(rec, cond["attribute"])
        if isinstance(value, (list, tuple)):
            value = len(value)
        if _OPS[cond.get("op", ">=")](value, cond["value"]):
            triggered = True
            break
    if not triggered:
        return False
    return _get(rec, "evidence_status") != spec["evidence_standard"]


_EVALUATORS = {
    NormKind.KEYWORD_BLOCK: _keyword_block,
    NormKind.REGEX: _regex,
    NormKind.PREDICATE: _predicate,
    NormKind.THRESHOLD_RULE: _threshold_rule,
}


def evaluate_norm(norm: Norm, trajectory: Trajectory) -> NormVerdict:
    """Missing data never produces a violation; it is reported for a warning instead."""
    try:
        if norm.kind is NormKind.SPATIAL_BOUNDARY:
            name = norm.spec.get("field", "d")
            threshold = float(norm.spec["threshold"])
            hit = any(float(_get(step_fields(trajectory, i), name)) > threshold for i in range(len(trajectory.steps)))
            return NormVerdict(norm.id, hit)
        return NormVerdict(norm.id, _EVALUATORS[norm.kind](norm.spec, step_fields(trajectory)))
    except MissingField as exc:
        return NormVerdict(norm.id, False, (str(exc.args[0]),))


def select_violation(norms: Iterable[Norm], verdicts: Iterable[NormVerdict]) -> Optional[Norm]:
    by_id = {n.id: n for n in norms}
    hits = [by_id[v.norm_id] for v in verdicts if v.violated]
    if not hits:
        return None
    return min(hits, key=lambda n: (-n.severity, n.id))


@dataclass(frozen=True)
class Verification:
    result: VerificationResult
    breach: Optional[VerifiedBreach]
    warnings: tuple[NormVerdict, ...] = field(default=())


def verify(candidate: CandidateFlaw, norms: Sequence[Norm], reviewer: str = "auto") -> Verification:
    if not norms:
        raise ValueError("norm set is empty")
    verdicts = [evaluate_norm(n, candidate.trajectory) for n in norms]
    chosen = select_violation(norms, verdicts)
    warnings = tuple(v for v in verdicts if v.missing)
    result = VerificationResult(
        ref_id=candidate.id,
        is_violation=chosen is not None,
        phi_broken=chosen.id if chosen else None,
        reviewer_ref=reviewer,
    )
    breach = None
    if chosen is not None:
        breach = VerifiedBreach(
            ref_id=candidate.id,
            verification_ref=result.id,
            context=candidate.context,
            trajectory=candidate.trajectory,
            phi_broken=chosen.id,
            signals=candidate.signals,
            v_O=candidate.v_O,
            category=candidate.category,
        )
    return Verification(result, breach, warnings)
