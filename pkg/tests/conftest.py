from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flywheel.cli import CompositionConfig, medical_setup  # noqa: E402
from flywheel.medical import MedicalDemo  # noqa: E402
from flywheel.spatial import SpatialConfig, SpatialDemo  # noqa: E402

MEDICAL = ("medical_simple", "patient_portal", "medical_complex")

_criteria: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.append((marker.args[0], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in _criteria:
        terminalreporter.write_line(f"{status}  {label}")


# ---------------------------------------------------------------- shared runs


def build_medical(name: str):
    return medical_setup(CompositionConfig.default(name))


@pytest.fixture(scope="session")
def medical_runs():
    out = {}
    for name in MEDICAL:
        setup = build_medical(name)
        demo = MedicalDemo(setup)
        out[name] = (setup, demo, demo.run(2))
    return out


@pytest.fixture(scope="session")
def spatial_adaptive():
    start = time.perf_counter()
    demo = SpatialDemo(SpatialConfig(), seed=0, adaptive=True)
    run = demo.run(20, stop_at_zero=True)
    return demo, run, time.perf_counter() - start


@pytest.fixture(scope="session")
def spatial_baseline(spatial_adaptive):
    _, run, _ = spatial_adaptive
    cap = run.converged_at or 20
    start = time.perf_counter()
    demo = SpatialDemo(SpatialConfig(), seed=0, adaptive=False)
    base = demo.run(cap, stop_at_zero=True)
    return demo, base, time.perf_counter() - start
