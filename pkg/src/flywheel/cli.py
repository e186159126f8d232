"""Composition root and command-line entry point.

This is the only module that picks concrete oracles and demo runners by name;
everything else receives its collaborators through constructors.
"""

from __future__ import annotations

import argparse
import enum
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .enforcement import EnforcementPolicy, PolicyMode, RiskTier
from .governance import TriageMode, load_norms
from .knowledge_base import KnowledgeBase, check_invariants, compute_views, load_log_lines, replay
from .medical import (
    FIXTURE_DIR,
    NORM_DIR,
    ComplexMedicalOracle,
    MedicalCaseGenerator,
    MedicalDemo,
    MedicalSetup,
    PatientPortalOracle,
    SimpleMedicalOracle,
    StrategyFailure,
    check_medical_run,
    format_report,
    lint_fixtures,
    load_cases,
)
from .oracle_stack import CoverageOverlay
from .protocol import IntegrityError, LinkageError
from .spatial import SpatialConfig, SpatialDemo, format_table

CONFIG_DIR = Path(__file__).parent / "configs"
LOG_NAME = "kb.ndjson"


class Demo(str, enum.Enum):
    SPATIAL_ADAPTIVE = "spatial_adaptive"
    SPATIAL_FIXED_BW = "spatial_fixed_bw"
    MEDICAL_SIMPLE = "medical_simple"
    MEDICAL_COMPLEX = "medical_complex"
    PATIENT_PORTAL = "patient_portal"


SPATIAL_DEMOS = (Demo.SPATIAL_ADAPTIVE, Demo.SPATIAL_FIXED_BW)
MEDICAL_DEMOS = (Demo.MEDICAL_SIMPLE, Demo.MEDICAL_COMPLEX, Demo.PATIENT_PORTAL)

ORACLES: Mapping[str, Callable[[], Any]] = {
    "simple": SimpleMedicalOracle,
    "complex": ComplexMedicalOracle,
    "portal": PatientPortalOracle,
}
TRIAGE = {m.value: m for m in TriageMode}
PLANNERS = {"adaptive": True, "fixed": False}
BLOCK_SCOPES = ("matched", "family")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CompositionConfig:
    """Registry keys plus constants for one demo run."""

    demo: Demo
    seed: int = 0
    iterations: Optional[int] = None
    # spatial
    planner: str = "adaptive"
    spatial: Mapping[str, Any] = field(default_factory=dict)
    # medical
    oracle: Optional[str] = None
    overlay: Mapping[str, Any] = field(default_factory=dict)
    triage: str = "fifo"
    block_scope: str = "matched"
    generator: Optional[str] = None
    norms: Optional[str] = None
    fixtures: Optional[str] = None
    expected_groups: Mapping[str, int] = field(default_factory=dict)
    policy: Mapping[str, Any] = field(default_factory=dict)
    # output
    out: Optional[str] = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "demo", Demo(self.demo))
        except ValueError:
            raise ConfigError(f"unknown demo {self.demo!r}") from None
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.demo in SPATIAL_DEMOS:
            if self.planner not in PLANNERS:
                raise ConfigError(f"unknown planner {self.planner!r}")
            return
        for name, value, registry in (
            ("oracle", self.oracle, ORACLES),
            ("triage", self.triage, TRIAGE),
            ("generator", self.generator, ORACLES),
            ("block_scope", self.block_scope, BLOCK_SCOPES),
        ):
            if value not in registry:
                raise ConfigError(f"unknown {name} {value!r}")
        for name in ("norms", "fixtures"):
            if getattr(self, name) is None:
                raise ConfigError(f"{self.demo.value}: {name} path required")
        for name in ("key_fields", "covered_u_a", "uncovered_u_a"):
            if name not in self.overlay:
                raise ConfigError(f"overlay.{name} required")

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "CompositionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "demo" not in doc:
            raise ConfigError("config needs a demo")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "CompositionConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(doc)

    @classmethod
    def default(cls, demo: str) -> "CompositionConfig":
        try:
            name = Demo(demo).value
        except ValueError:
            raise ConfigError(f"unknown demo {demo!r}") from None
        return cls.load(CONFIG_DIR / f"{name}.json")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["demo"] = self.demo.value
        return d


def enforcement_policy(overrides: Mapping[str, Any]) -> EnforcementPolicy:
    doc = dict(overrides)
    if "mode" in doc:
        doc["mode"] = PolicyMode(doc["mode"])
    if "risk_tier" in doc:
        doc["risk_tier"] = RiskTier(doc["risk_tier"])
    try:
        return EnforcementPolicy(**doc)
    except TypeError as exc:
        raise ConfigError(f"policy: {exc}") from exc


def _resolve(name: str, package_dir: Path) -> Path:
    p = Path(name)
    return p if p.is_absolute() or p.exists() else package_dir / name


def medical_setup(cfg: CompositionConfig) -> MedicalSetup:
    ov = cfg.overlay
    overlay = CoverageOverlay(tuple(ov["key_fields"]), ov["covered_u_a"], ov["uncovered_u_a"], ov.get("u_a_thresh", 0.6))
    return MedicalSetup(
        name=cfg.demo.value,
        oracle=ORACLES[cfg.oracle](),
        overlay=overlay,
        norms=load_norms(_resolve(cfg.norms, NORM_DIR)),
        fixtures=load_cases(_resolve(cfg.fixtures, FIXTURE_DIR)),
        generator=MedicalCaseGenerator(cfg.generator, seed=cfg.seed),
        triage=TRIAGE[cfg.triage],
        block_scope=cfg.block_scope,
        expected_groups=dict(cfg.expected_groups),
        policy=enforcement_policy(cfg.policy),
    )


# ------------------------------------------------------------------ runners


@dataclass
class Report:
    table: str
    records: list[dict[str, Any]]
    summary: str
    problems: list[str]


def run_spatial(cfg: CompositionConfig, kb: KnowledgeBase) -> Report:
    spatial_cfg = SpatialConfig.from_mapping(dict(cfg.spatial))
    adaptive = PLANNERS[cfg.planner]
    demo = SpatialDemo(spatial_cfg, seed=cfg.seed, adaptive=adaptive, kb=kb)
    run = demo.run(cfg.iterations, stop_at_zero=True)
    problems = [
        f"basin preservation: iteration {m.iteration} kept {m.basin}/{run.initial_basin}"
        for m in run.metrics
        if m.basin != run.initial_basin
    ]
    last = run.metrics[-1]
    if run.converged_at is not None:
        outcome = f"converged at iteration {run.converged_at}"
    else:
        outcome = f"not converged after {len(run.metrics)} iterations"
    summary = (
        f"{cfg.demo.value} seed={cfg.seed}: {outcome}; "
        f"flaws {run.initial_flaws} -> {last.flaws}; basin {last.basin}/{run.initial_basin}"
    )
    records = [asdict(m) for m in run.metrics]
    return Report(format_table(run.metrics), records, summary, problems)


def run_medical(cfg: CompositionConfig, kb: KnowledgeBase) -> Report:
    setup = medical_setup(cfg)
    demo = MedicalDemo(setup, kb=kb)
    try:
        run = demo.run(cfg.iterations if cfg.iterations is not None else 2)
    except StrategyFailure as exc:
        return Report("", [], f"{cfg.demo.value}: strategy failure", [f"role error: {exc}"])
    records = [
        {
            "eval": e.index,
            "allow": e.allow,
            "block": e.block,
            "escalate": e.escalate,
            "escalation_rate": e.escalation_rate,
            "version": e.version,
        }
        for e in run.evals
    ]
    summary = f"{cfg.demo.value}: {run.summary()}"
    return Report(format_report(run.evals), records, summary, check_medical_run(run, setup))


RUNNERS: Mapping[Demo, Callable[[CompositionConfig, KnowledgeBase], Report]] = {
    **{d: run_spatial for d in SPATIAL_DEMOS},
    **{d: run_medical for d in MEDICAL_DEMOS},
}


def run_demo(cfg: CompositionConfig, out_dir: Path) -> tuple[int, Report]:
    """Run one demo into ``out_dir``; returns (exit status, report)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME
    if log_path.exists():
        raise ConfigError(f"{log_path} exists; choose a fresh --out directory")
    kb = KnowledgeBase(log_path)
    report = RUNNERS[cfg.demo](cfg, kb)
    report.problems.extend(check_invariants(kb))
    (out_dir / "metrics.txt").write_text(report.table + "\n", encoding="utf-8")
    (out_dir / "metrics.json").write_text(json.dumps(report.records, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = [report.summary] + [f"INVARIANT VIOLATED: {p}" for p in report.problems]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return (1 if report.problems else 0), report


# ----------------------------------------------------------------- inspect


def describe(artifact) -> str:
    kind = artifact.artifact_kind
    detail = ""
    for attr in ("action", "phi_broken", "status", "category", "notice"):
        value = getattr(artifact, attr, None)
        if value is not None:
            detail = f" {attr}={getattr(value, 'value', value)}"
            break
    return f"{kind}{detail}"


def inspect_log(log_path: Path, artifact_id: Optional[str]) -> str:
    artifacts = load_log_lines(log_path)
    kb = replay(artifacts)
    lines: list[str] = []
    if artifact_id is not None:
        if artifact_id not in kb:
            raise LookupError(f"unknown artifact id {artifact_id!r}")
        lines.append("chain:")
        for depth, aid in enumerate(kb.chain(artifact_id)):
            lines.append(f"  {'root' if depth == 0 else 'from'} {aid}  {describe(kb.get(aid))}")
    lines.append("views:")
    lines.append(json.dumps(compute_views(artifacts).as_dict(), indent=2, sort_keys=True))
    return "\n".join(lines)


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flywheel", description="Governed safety-patch demos.")
    sub = parser.add_subparsers(dest="command", required=True)
    demos = [d.value for d in Demo]

    run = sub.add_parser("run", help="run a demo and write the log, metrics and summary")
    run.add_argument("--demo", choices=demos)
    run.add_argument("--config", type=Path, help="composition config (JSON); defaults to the demo's bundled config")
    run.add_argument("--seed", type=int)
    run.add_argument("--iterations", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--policy-mode", choices=[m.value for m in PolicyMode])
    run.add_argument("--risk-tier", choices=[t.value for t in RiskTier])

    ins = sub.add_parser("inspect", help="print an artifact's link chain and the operational views")
    ins.add_argument("--log", type=Path, required=True)
    ins.add_argument("--id", dest="artifact_id")

    lint = sub.add_parser("lint-fixtures", help="check the fixture constraints of a medical demo")
    lint.add_argument("--demo", choices=[d.value for d in MEDICAL_DEMOS], required=True)
    return parser


def _config_from_args(args: argparse.Namespace) -> CompositionConfig:
    if args.config is not None:
        cfg = CompositionConfig.load(args.config)
        if args.demo is not None and Demo(args.demo) is not cfg.demo:
            raise ConfigError(f"--demo {args.demo} disagrees with config demo {cfg.demo.value}")
    elif args.demo is not None:
        cfg = CompositionConfig.default(args.demo)
    else:
        raise ConfigError("run needs --demo or --config")
    changes: dict[str, Any] = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    if args.out is not None:
        changes["out"] = str(args.out)
    policy = dict(cfg.policy)
    if args.policy_mode is not None:
        policy["mode"] = args.policy_mode
    if args.risk_tier is not None:
        policy["risk_tier"] = args.risk_tier
    if policy != dict(cfg.policy):
        changes["policy"] = policy
    return replace(cfg, **changes) if changes else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            enforcement_policy(cfg.policy)
            out = Path(cfg.out) if cfg.out else Path("runs") / f"{cfg.demo.value}-seed{cfg.seed}"
            start = time.perf_counter()
            status, report = run_demo(cfg, out)
            print(report.table)
            print(report.summary)
            for p in report.problems:
                print(f"INVARIANT VIOLATED: {p}", file=sys.stderr)
            print(f"wrote {out} in {time.perf_counter() - start:.1f}s")
            return status
        if args.command == "inspect":
            print(inspect_log(args.log, args.artifact_id))
            return 0
        problems = lint_fixtures(medical_setup(CompositionConfig.default(args.demo)))
        for p in problems:
            print(p)
        print(f"{args.demo}: {'ok' if not problems else f'{len(problems)} problem(s)'}")
        return 1 if problems else 0
    except ConfigError as exc:
        parser.error(str(exc))
    except (LookupError, IntegrityError, LinkageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
