"""Typed governance artifacts, canonical serialization, content ids and batch signing.

Every record exchanged between governance roles is an immutable dataclass.
Identity is a content hash over a canonical text rendering of the record's
logical content; timestamps and reviewer identity stay in the stored record
but are kept out of the hash preimage so that retries are idempotent.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
import json
import math
import numbers
import types
import typing
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, ClassVar, Mapping, Optional, Union

PLACEHOLDER_SIGNATURE = "regression-verified"


class ProtocolError(Exception):
    """Base class for protocol-level failures."""


class NonCanonicalValue(ProtocolError, ValueError):
    pass


class SigningRefused(ProtocolError):
    pass


class IntegrityError(ProtocolError):
    pass


class LinkageError(IntegrityError):
    pass


# ---------------------------------------------------------------------------
# enums


class TrajectoryKind(str, enum.Enum):
    MESSAGE = "message"
    SPATIAL_POINT = "spatial_point"
    PLAN = "plan"


class AuditStatus(str, enum.Enum):
    COVERED = "covered"
    UNCOVERED = "uncovered"


class CorrectionType(str, enum.Enum):
    SPATIAL_FLAW_PATCH = "spatial_flaw_patch"
    AUDIT_COVERAGE_UPDATE = "audit_coverage_update"
    THRESHOLD_ADJUSTMENT = "threshold_adjustment"
    MEDICAL_HARD_BLOCK = "medical_hard_block"
    NORM_UPDATE = "norm_update"


class ReleaseStatus(str, enum.Enum):
    CANARY = "canary"
    EXPAND = "expand"
    FULL = "full"
    ROLLED_BACK = "rolled_back"


class Action(str, enum.Enum):
    ALLOW = "allow"
    BLOCK = "block"
    REVISE = "revise"
    ESCALATE = "escalate"


class QueueName(str, enum.Enum):
    VER = "ver"
    REF = "ref"


class QueueOp(str, enum.Enum):
    ENQUEUE = "enqueue"
    DEQUEUE = "dequeue"
    REPRIORITIZE = "reprioritize"


class NoticeKind(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"
    REGRESSION_FAILURE = "regression_failure"
    JOB_CLOSED = "job_closed"
    PRIORITY_HINT = "priority_hint"


# ---------------------------------------------------------------------------
# canonical rendering


def canonical_float(x: float) -> str:
    """Render a real at 12 significant digits.

    ``%.12g`` switches to exponent notation exactly outside [1e-4, 1e12).
    """
    if isinstance(x, bool):
        raise NonCanonicalValue("bool is not a real")
    x = float(x)
    if not math.isfinite(x):
        raise NonCanonicalValue(f"non-finite real {x!r} cannot be canonicalized")
    if x == 0.0:
        return "0"
    return format(x, ".12g")


def canonical_json(obj: Any) -> str:
    """Deterministic text form used for hashing and signing."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, enum.Enum):
        return canonical_json(obj.value)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, numbers.Integral):
        return str(int(obj))
    if isinstance(obj, numbers.Real):
        return canonical_float(float(obj))
    if isinstance(obj, Mapping):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k)}:{canonical_json(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    raise NonCanonicalValue(f"cannot canonicalize value of type {type(obj).__name__}")


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


# ---------------------------------------------------------------------------
# generic encode / decode driven by type hints


def encode(value: Any) -> Any:
    """Convert artifacts into plain JSON-compatible structures."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: encode(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        v = float(value)
        if not math.isfinite(v):
            raise NonCanonicalValue(f"non-finite real {v!r}")
        return v
    raise NonCanonicalValue(f"cannot encode value of type {type(value).__name__}")


_HINT_CACHE: dict[type, dict[str, Any]] = {}


def _hints(cls: type) -> dict[str, Any]:
    if cls not in _HINT_CACHE:
        _HINT_CACHE[cls] = typing.get_type_hints(cls)
    return _HINT_CACHE[cls]


def decode(tp: Any, data: Any) -> Any:
    """Inverse of :func:`encode` for a target type annotation."""
    origin = typing.get_origin(tp)
    if tp is Any:
        return data
    if origin in (Union, types.UnionType):
        args = typing.get_args(tp)
        if data is None and type(None) in args:
            return None
        for arg in args:
            if arg is type(None):
                continue
            return decode(arg, data)
    if origin is tuple:
        (inner, *_rest) = typing.get_args(tp)
        return tuple(decode(inner, v) for v in data)
    if origin is list:
        (inner,) = typing.get_args(tp)
        return [decode(inner, v) for v in data]
    if origin in (dict, Mapping):
        _k, inner = typing.get_args(tp)
        return {str(k): decode(inner, v) for k, v in data.items()}
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(data)
    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        hints = _hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise IntegrityError(f"{tp.__name__}: unknown fields {unknown}")
        kwargs = {f.name: decode(hints[f.name], data[f.name]) for f in dataclasses.fields(tp) if f.name in data}
        return tp(**kwargs)
    if tp is float:
        return float(data)
    if tp is int:
        return int(data)
    return data


# ---------------------------------------------------------------------------
# artifact base


ARTIFACT_TYPES: dict[str, type] = {}


class Artifact:
    """Mixin for content-addressed records.

    Subclasses are frozen dataclasses that declare an id field (empty by
    default) and optionally a ``ts`` field.  The id is filled in from the
    content hash when left empty.
    """

    artifact_kind: ClassVar[str] = ""
    prefix: ClassVar[str] = ""
    id_field: ClassVar[str] = "id"
    hash_exclude: ClassVar[frozenset[str]] = frozenset({"ts"})

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        if cls.artifact_kind:
            ARTIFACT_TYPES[cls.artifact_kind] = cls

    def __post_init__(self) -> None:
        self._validate()
        if not getattr(self, self.id_field):
            object.__setattr__(self, self.id_field, content_id(self))

    def _validate(self) -> None:
        pass

    @property
    def artifact_id(self) -> str:
        return getattr(self, self.id_field)

    def hash_body(self) -> dict[str, Any]:
        body = encode(self)
        for name in self.hash_exclude | {self.id_field}:
            body.pop(name, None)
        return body

    def parents(self) -> tuple[str, ...]:
        return ()

    def with_ts(self, ts: str | None = None):
        return dataclasses.replace(self, ts=ts or utc_now())


def content_id(artifact: Artifact) -> str:
    """Deterministic id from the artifact's logical content."""
    preimage = canonical_json({"kind": artifact.artifact_kind, "body": artifact.hash_body()})
    return f"{artifact.prefix}:{sha256_hex(preimage)[:32]}"


def _check_unit(name: str, value: Optional[float]) -> None:
    if value is not None and not (0.0 <= value <= 1.0):
        raise ValueError(f"{name}={value} outside [0, 1]")


# ---------------------------------------------------------------------------
# trajectories and oracle signals


@dataclass(frozen=True)
class TrajectoryStep:
    payload: dict[str, Any]


@dataclass(frozen=True)
class Trajectory(Artifact):
    kind: TrajectoryKind
    steps: tuple[TrajectoryStep, ...]
    metadata: dict[str, Any] = field(default_factory=dict)
    id: str = ""

    artifact_kind: ClassVar[str] = "trajectory"
    prefix: ClassVar[str] = "traj"

    def _validate(self) -> None:
        if not self.steps:
            raise ValueError("trajectory must have at least one step")

    @property
    def payload(self) -> dict[str, Any]:
        return self.steps[0].payload


@dataclass(frozen=True)
class OracleRawOutput:
    s: Optional[float] = None
    u: Optional[float] = None
    u_thresh: Optional[float] = None
    v_O: str = ""
    evidence_status: Optional[str] = None

    def __post_init__(self) -> None:
        _check_unit("s", self.s)
        if self.u is not None and self.u < 0:
            raise ValueError(f"u={self.u} must be >= 0")
        if self.u_thresh is not None and self.u_thresh <= 0:
            raise ValueError(f"u_thresh={self.u_thresh} must be > 0")


@dataclass(frozen=True)
class FlywheelOverlaySignals:
    u_a: Optional[float] = None
    u_a_thresh: Optional[float] = None
    v_G: str = ""
    audit_status: Optional[AuditStatus] = None
    case_class: str = ""

    def __post_init__(self) -> None:
        if self.u_a is not None and self.u_a < 0:
            raise ValueError(f"u_a={self.u_a} must be >= 0")
        if self.u_a_thresh is not None and self.u_a_thresh <= 0:
            raise ValueError(f"u_a_thresh={self.u_a_thresh} must be > 0")


@dataclass(frozen=True)
class UnifiedQueryResult:
    raw: OracleRawOutput
    overlay: FlywheelOverlaySignals = field(default_factory=FlywheelOverlaySignals)
    phi_hint: Optional[str] = None
    evidence_refs: tuple[str, ...] = ()

    @property
    def s(self) -> Optional[float]:
        return self.raw.s

    @property
    def u(self) -> Optional[float]:
        return self.raw.u

    @property
    def u_thresh(self) -> Optional[float]:
        return self.raw.u_thresh

    @property
    def u_a(self) -> Optional[float]:
        return self.overlay.u_a

    @property
    def u_a_thresh(self) -> Optional[float]:
        return self.overlay.u_a_thresh

    @property
    def v_O(self) -> str:
        return self.raw.v_O


# ---------------------------------------------------------------------------
# protocol records (P1-P5)


@dataclass(frozen=True)
class CandidateFlaw(Artifact):
    context: dict[str, Any]
    trajectory: Trajectory
    signals: UnifiedQueryResult
    v_O: str
    seed_ref: Optional[str] = None
    category: Optional[str] = None
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "candidate_flaw"
    prefix: ClassVar[str] = "flaw"

    def _validate(self) -> None:
        if self.signals.v_O != self.v_O:
            raise ValueError("signals.v_O must equal v_O")

    def parents(self) -> tuple[str, ...]:
        return (self.seed_ref,) if self.seed_ref else ()


@dataclass(frozen=True)
class VerificationResult(Artifact):
    ref_id: str
    is_violation: bool
    phi_broken: Optional[str] = None
    evidence_ref: Optional[str] = None
    reviewer_ref: str = "auto"
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "verification_result"
    prefix: ClassVar[str] = "vres"
    hash_exclude: ClassVar[frozenset[str]] = frozenset({"ts", "reviewer_ref"})

    def _validate(self) -> None:
        if self.is_violation != (self.phi_broken is not None):
            raise ValueError("phi_broken must be present iff is_violation")

    def parents(self) -> tuple[str, ...]:
        return (self.ref_id,)


@dataclass(frozen=True)
class VerifiedBreach(Artifact):
    ref_id: str
    verification_ref: str
    context: dict[str, Any]
    trajectory: Trajectory
    phi_broken: str
    signals: UnifiedQueryResult
    v_O: str
    category: Optional[str] = None
    evidence_ref: Optional[str] = None
    breach_id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "verified_breach"
    prefix: ClassVar[str] = "breach"
    id_field: ClassVar[str] = "breach_id"

    def parents(self) -> tuple[str, ...]:
        return (self.verification_ref,)


@dataclass(frozen=True)
class RefinementJob(Artifact):
    cluster_id: str
    centroid_ref: str
    size: int
    risk_score: float
    sample_set_refs: tuple[str, ...]
    category: Optional[str] = None
    phi: Optional[str] = None
    job_id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "refinement_job"
    prefix: ClassVar[str] = "job"
    id_field: ClassVar[str] = "job_id"

    def _validate(self) -> None:
        if self.size < 1 or self.size != len(self.sample_set_refs):
            raise ValueError("size must equal len(sample_set_refs) >= 1")
        if self.risk_score < 0:
            raise ValueError("risk_score must be >= 0")

    def parents(self) -> tuple[str, ...]:
        return self.sample_set_refs


_REQUIRED_PAYLOAD = {
    CorrectionType.SPATIAL_FLAW_PATCH: ("flaw_point", "support_radius"),
    CorrectionType.MEDICAL_HARD_BLOCK: ("keyword",),
    CorrectionType.THRESHOLD_ADJUSTMENT: ("key",),
    CorrectionType.AUDIT_COVERAGE_UPDATE: ("case_class",),
    CorrectionType.NORM_UPDATE: ("norm",),
}


@dataclass(frozen=True)
class LocalCorrection(Artifact):
    correction_type: CorrectionType
    payload: dict[str, Any]
    correction_id: str = ""

    artifact_kind: ClassVar[str] = "local_correction"
    prefix: ClassVar[str] = "corr"
    id_field: ClassVar[str] = "correction_id"

    def _validate(self) -> None:
        missing = [k for k in _REQUIRED_PAYLOAD[self.correction_type] if k not in self.payload]
        if missing:
            raise ValueError(f"{self.correction_type.value} payload missing {missing}")
        if self.correction_type is CorrectionType.THRESHOLD_ADJUSTMENT:
            if "min_disposition" not in self.payload and "u_thresh" not in self.payload:
                raise ValueError("threshold_adjustment needs min_disposition or u_thresh")
        if self.correction_type is CorrectionType.SPATIAL_FLAW_PATCH:
            if len(self.payload["flaw_point"]) != 3:
                raise ValueError("flaw_point must have 3 coordinates")
            if not self.payload["support_radius"] > 0:
                raise ValueError("support_radius must be > 0")


@dataclass(frozen=True)
class GovernanceBatch(Artifact):
    from_oracle_version: str
    to_oracle_version: str
    local_corrections: tuple[LocalCorrection, ...]
    regression_evidence: dict[str, Any] = field(default_factory=dict)
    rollout_metadata: dict[str, Any] = field(default_factory=dict)
    breach_refs: tuple[str, ...] = ()
    job_ref: Optional[str] = None
    signature: str = ""
    batch_id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "governance_batch"
    prefix: ClassVar[str] = "batch"
    id_field: ClassVar[str] = "batch_id"
    hash_exclude: ClassVar[frozenset[str]] = frozenset({"ts", "signature"})

    def _validate(self) -> None:
        if self.from_oracle_version == self.to_oracle_version:
            raise ValueError("to_oracle_version must differ from from_oracle_version")

    def parents(self) -> tuple[str, ...]:
        refs = (self.job_ref,) if self.job_ref else ()
        return refs + tuple(r for r in self.breach_refs if r != self.job_ref)

    def to_wire(self) -> dict[str, Any]:
        """External batch document; provenance refs travel as extra keys."""
        doc = {
            "batch_id": self.batch_id,
            "from_oracle_version": self.from_oracle_version,
            "to_oracle_version": self.to_oracle_version,
            "local_corrections": [
                {
                    "correction_id": c.correction_id,
                    "correction_type": c.correction_type.value,
                    "payload": encode(c.payload),
                }
                for c in self.local_corrections
            ],
            "regression_evidence": encode(self.regression_evidence),
            "rollout_metadata": encode(self.rollout_metadata),
            "signature": self.signature,
            "timestamp": self.ts,
        }
        if self.breach_refs:
            doc["breach_refs"] = list(self.breach_refs)
        if self.job_ref:
            doc["job_ref"] = self.job_ref
        return doc

    @classmethod
    def from_wire(cls, doc: Mapping[str, Any]) -> "GovernanceBatch":
        corrections = tuple(
            LocalCorrection(
                correction_type=CorrectionType(c["correction_type"]),
                payload=dict(c["payload"]),
                correction_id=c.get("correction_id", ""),
            )
            for c in doc["local_corrections"]
        )
        return cls(
            from_oracle_version=doc["from_oracle_version"],
            to_oracle_version=doc["to_oracle_version"],
            local_corrections=corrections,
            regression_evidence=dict(doc.get("regression_evidence", {})),
            rollout_metadata=dict(doc.get("rollout_metadata", {})),
            breach_refs=tuple(doc.get("breach_refs", ())),
            job_ref=doc.get("job_ref"),
            signature=doc.get("signature", ""),
            batch_id=doc.get("batch_id", ""),
            ts=doc.get("timestamp", ""),
        )


@dataclass(frozen=True)
class ReleaseRecord(Artifact):
    release_id: str
    batch_id: str
    rollout_policy: tuple[str, ...]
    status: ReleaseStatus
    canary_metrics_ref: Optional[str] = None
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "release_record"
    prefix: ClassVar[str] = "rel"

    def parents(self) -> tuple[str, ...]:
        return (self.batch_id,)


@dataclass(frozen=True)
class Integrity:
    payload_hash: str
    timestamp: str = ""
    host: str = ""


@dataclass(frozen=True)
class DecisionRecord(Artifact):
    context: dict[str, Any]
    trajectory: Trajectory
    action: Action
    s: Optional[float]
    u: Optional[float]
    u_thresh: Optional[float]
    u_a: Optional[float]
    u_a_thresh: Optional[float]
    v_O: str
    evidence_refs: tuple[str, ...] = ()
    request_id: str = ""
    reason: str = ""
    integrity: Integrity = field(default_factory=lambda: Integrity(payload_hash=""))
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "decision_record"
    prefix: ClassVar[str] = "dec"

    def hash_body(self) -> dict[str, Any]:
        body = super().hash_body()
        body["integrity"] = {"payload_hash": self.integrity.payload_hash}
        return body

    def parents(self) -> tuple[str, ...]:
        return self.evidence_refs


# ---------------------------------------------------------------------------
# control-plane records


@dataclass(frozen=True)
class StackGenesis(Artifact):
    version: str
    label: str = ""
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "stack_genesis"
    prefix: ClassVar[str] = "genesis"


@dataclass(frozen=True)
class QueueEvent(Artifact):
    queue: QueueName
    op: QueueOp
    ref: str
    priority: float = 0.0
    seq: int = 0
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "queue_event"
    prefix: ClassVar[str] = "qev"

    def parents(self) -> tuple[str, ...]:
        return (self.ref,)


@dataclass(frozen=True)
class Notice(Artifact):
    notice: NoticeKind
    role: str
    message: str
    ref: Optional[str] = None
    details: dict[str, Any] = field(default_factory=dict)
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "notice"
    prefix: ClassVar[str] = "note"

    def parents(self) -> tuple[str, ...]:
        return (self.ref,) if self.ref else ()


@dataclass(frozen=True)
class MonitoringReport(Artifact):
    log_position: int
    summary: dict[str, Any]
    id: str = ""
    ts: str = ""

    artifact_kind: ClassVar[str] = "monitoring_report"
    prefix: ClassVar[str] = "report"


GovernanceArtifact = Union[
    CandidateFlaw,
    VerificationResult,
    VerifiedBreach,
    RefinementJob,
    GovernanceBatch,
    ReleaseRecord,
    DecisionRecord,
    StackGenesis,
    QueueEvent,
    Notice,
    MonitoringReport,
]


# ---------------------------------------------------------------------------
# records on disk


def to_record(artifact: Artifact) -> dict[str, Any]:
    return {"kind": artifact.artifact_kind, "id": artifact.artifact_id, "body": encode(artifact)}


def dumps_record(artifact: Artifact) -> str:
    """One artifact per line; floats use repr so that loading is lossless."""
    return json.dumps(to_record(artifact), sort_keys=True, separators=(",", ":"), allow_nan=False)


def from_record(record: Mapping[str, Any]) -> Artifact:
    cls = ARTIFACT_TYPES.get(record.get("kind", ""))
    if cls is None:
        raise IntegrityError(f"unknown artifact kind {record.get('kind')!r}")
    artifact = decode(cls, record["body"])
    if artifact.artifact_id != record["id"]:
        raise IntegrityError(f"record id {record['id']} does not match body id {artifact.artifact_id}")
    if artifact.artifact_id != content_id(artifact):
        raise IntegrityError(f"record id {record['id']} does not match its content hash")
    return artifact


def loads_record(line: str) -> Artifact:
    return from_record(json.loads(line))


def verify_content_id(artifact: Artifact) -> bool:
    return artifact.artifact_id == content_id(artifact)


# ---------------------------------------------------------------------------
# signing


def _signing_preimage(batch: GovernanceBatch) -> bytes:
    # ts is stamped on append, after signing
    body = encode(batch)
    body.pop("signature")
    body.pop("ts")
    return canonical_json(body).encode("utf-8")


def _key_bytes(key: str | bytes) -> bytes:
    return key.encode("utf-8") if isinstance(key, str) else key


def sign_batch(batch: GovernanceBatch, key: str | bytes) -> str:
    """Keyed hash (HMAC-SHA256) over every field except the signature and timestamp."""
    if not batch.local_corrections:
        raise SigningRefused("batch has no local corrections; nothing to govern")
    return hmac.new(_key_bytes(key), _signing_preimage(batch), hashlib.sha256).hexdigest()


def signed(batch: GovernanceBatch, key: str | bytes) -> GovernanceBatch:
    return dataclasses.replace(batch, signature=sign_batch(batch, key))


def verify_batch(batch: GovernanceBatch, key: str | bytes, permissive: bool = False) -> bool:
    if permissive and batch.signature == PLACEHOLDER_SIGNATURE:
        return True
    if not batch.local_corrections or not batch.signature:
        return False
    expected = hmac.new(_key_bytes(key), _signing_preimage(batch), hashlib.sha256).hexdigest()
    return hmac.compare_digest(expected, batch.signature)


# ---------------------------------------------------------------------------
# causal chains


def link_chain(artifact_id: str, lookup: Callable[[str], Optional[Artifact]]) -> list[str]:
    """Return the artifact followed by all ancestors, depth-first in parent order."""
    chain: list[str] = []
    seen: set[str] = set()
    on_path: set[str] = set()

    def visit(aid: str, child: Optional[str]) -> None:
        if aid in on_path:
            raise IntegrityError(f"cycle through {aid}")
        if aid in seen:
            return
        artifact = lookup(aid)
        if artifact is None:
            where = f" (parent of {child})" if child else ""
            raise LinkageError(f"dangling reference: {aid}{where}")
        seen.add(aid)
        chain.append(aid)
        on_path.add(aid)
        for parent in artifact.parents():
            visit(parent, aid)
        on_path.discard(aid)

    visit(artifact_id, None)
    return chain
