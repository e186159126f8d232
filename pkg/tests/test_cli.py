from __future__ import annotations

import json

import pytest

from flywheel.cli import CompositionConfig, ConfigError, main
from flywheel.knowledge_base import load_log_lines
from flywheel.protocol import Action, CorrectionType, DecisionRecord, GovernanceBatch


def run(tmp_path, demo, *extra):
    out = tmp_path / demo
    status = main(["run", "--demo", demo, "--out", str(out), *extra])
    return status, out


def test_portal_run_summary(tmp_path, capsys):
    status, out = run(tmp_path, "patient_portal")
    assert status == 0
    summary = (out / "summary.txt").read_text().strip()
    assert summary.endswith("(9, 6, 0), 0%")
    assert "(9, 6, 0), 0%" in capsys.readouterr().out
    records = json.loads((out / "metrics.json").read_text())
    assert [(r["allow"], r["block"], r["escalate"]) for r in records] == [(6, 0, 9), (6, 3, 6), (9, 6, 0)]


def test_reruns_give_identical_metrics(tmp_path):
    _, a = run(tmp_path / "a", "medical_complex")
    _, b = run(tmp_path / "b", "medical_complex")
    for name in ("metrics.txt", "metrics.json", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_spatial_run_converges(tmp_path):
    status, out = run(tmp_path, "spatial_adaptive", "--iterations", "20")
    assert status == 0
    records = json.loads((out / "metrics.json").read_text())
    assert records[-1]["flaws"] == 0
    assert len({r["basin"] for r in records}) == 1
    assert "converged at iteration" in (out / "summary.txt").read_text()


def test_unknown_demo_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--demo", "nope", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_run_needs_demo_or_config():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_existing_log_is_refused(tmp_path):
    run(tmp_path, "medical_simple")
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "medical_simple")
    assert exc.value.code == 2


def test_config_file_and_overrides(tmp_path):
    cfg = CompositionConfig.default("medical_simple")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert CompositionConfig.load(path) == cfg
    status = main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--risk-tier", "low"])
    assert status == 0
    with pytest.raises(SystemExit):
        main(["run", "--config", str(path), "--demo", "patient_portal", "--out", str(tmp_path / "x")])
    with pytest.raises(ConfigError):
        CompositionConfig.from_mapping({**cfg.to_dict(), "demo": "medical_simple", "bogus": 1})


def test_inspect_block_chain_reaches_hard_block_batch(tmp_path, capsys):
    _, out = run(tmp_path, "patient_portal")
    log = out / "kb.ndjson"
    arts = load_log_lines(log)
    first_batch = next(a for a in arts if isinstance(a, GovernanceBatch))
    assert any(c.correction_type is CorrectionType.MEDICAL_HARD_BLOCK for c in first_batch.local_corrections)
    blocked = next(a for a in arts if isinstance(a, DecisionRecord) and a.action is Action.BLOCK and a.context["eval"] == 1)
    capsys.readouterr()
    assert main(["inspect", "--log", str(log), "--id", blocked.id]) == 0
    printed = capsys.readouterr().out
    chain = printed.split("views:")[0]
    assert first_batch.batch_id in chain
    assert "verified_breach" in chain and "candidate_flaw" in chain


def test_inspect_empty_log_prints_empty_views(tmp_path, capsys):
    log = tmp_path / "empty.ndjson"
    log.write_text("")
    assert main(["inspect", "--log", str(log)]) == 0
    views = json.loads(capsys.readouterr().out.split("views:", 1)[1])
    depths = views.pop("queue_depths")
    assert set(depths.values()) == {0}
    assert all(not v for v in views.values())


def test_inspect_unknown_id_and_malformed_log(tmp_path, capsys):
    _, out = run(tmp_path, "medical_simple")
    log = out / "kb.ndjson"
    capsys.readouterr()
    assert main(["inspect", "--log", str(log), "--id", "dec:missing"]) == 1
    assert "unknown artifact id" in capsys.readouterr().err
    lines = log.read_text().splitlines()
    lines[2] = lines[2][:-10]
    log.write_text("\n".join(lines) + "\n")
    assert main(["inspect", "--log", str(log)]) == 1
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("demo", ["medical_simple", "patient_portal", "medical_complex"])
def test_lint_fixtures_command(demo, capsys):
    assert main(["lint-fixtures", "--demo", demo]) == 0
    assert capsys.readouterr().out.strip() == f"{demo}: ok"
