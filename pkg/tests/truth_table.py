"""Grid comparison of the package decision functions against the reference rule tables."""

from __future__ import annotations

import itertools

import numpy as np
from reference import decide_base_ref, decide_medical_ref

from flywheel.enforcement import EnforcementPolicy, PolicyMode, decide_base, decide_medical
from flywheel.protocol import FlywheelOverlaySignals, OracleRawOutput, UnifiedQueryResult

# boundary values sit exactly on every threshold used below
S_VALUES = sorted(set(np.round(np.linspace(0, 1, 21), 2)) | {0.39, 0.4, 0.41, 0.84, 0.85, 0.86})
U_VALUES = (0.0, 0.1, 0.29, 0.3, 0.31, 0.5, 0.6, 1.0)
U_THRESH = (0.2, 0.3, 0.5)
UA_VALUES = (0.0, 0.15, 0.2, 0.59, 0.6, 0.61, 0.85, 0.9)
UA_THRESH = (0.5, 0.6, 0.7)
EVIDENCE = ("supported", "insufficient", "conflicting", "unknown", None)


def result(s, u, ut, ua, uat, evidence=None) -> UnifiedQueryResult:
    return UnifiedQueryResult(OracleRawOutput(s, u, ut, "oracle:v0", evidence), FlywheelOverlaySignals(ua, uat))


def grid():
    return itertools.product(S_VALUES, U_VALUES, U_THRESH, UA_VALUES, UA_THRESH)


def base_mismatches() -> tuple[int, list]:
    policy = EnforcementPolicy(mode=PolicyMode.BASE)
    bad, n = [], 0
    for s, u, ut, ua, uat in grid():
        n += 1
        got = decide_base(result(s, u, ut, ua, uat), policy).value
        want = decide_base_ref(s, u, ut, ua, uat, policy.theta_s)
        if got != want:
            bad.append(((s, u, ut, ua, uat), got, want))
    return n, bad


def medical_mismatches() -> tuple[int, list]:
    policy = EnforcementPolicy(mode=PolicyMode.MEDICAL)
    bad, n = [], 0
    for (s, u, ut, ua, uat), ev in itertools.product(grid(), EVIDENCE):
        n += 1
        got = decide_medical(result(s, u, ut, ua, uat, ev), policy, ev).value
        want = decide_medical_ref(s, u, ut, ua, uat, ev, policy.theta_s, policy.theta_a)
        if got != want:
            bad.append(((s, u, ut, ua, uat, ev), got, want))
    return n, bad
