"""Role-independent observe/orient/decide/act controller."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Any, Protocol

from ..knowledge_base import KnowledgeBase
from ..oracle_stack import OracleStack
from ..protocol import Notice, NoticeKind

log = logging.getLogger(__name__)


class Role(str, enum.Enum):
    RED = "red"
    BLUE = "blue"
    VERIFY = "verify"
    TRIAGE = "triage"
    REFINE = "refine"


class OodaStrategy(Protocol):
    def observe(self, kb: KnowledgeBase, stack: OracleStack, checkpoint: int) -> Any: ...

    def orient(self, observation: Any) -> Any: ...

    def decide(self, situation: Any) -> Any: ...

    def act(self, plan: Any, kb: KnowledgeBase, stack: OracleStack) -> None: ...


@dataclass
class OodaRole:
    role: Role
    strategy: OodaStrategy
    checkpoint: int = 0


def run_ooda_tick(role: OodaRole, kb: KnowledgeBase, stack: OracleStack) -> list[str]:
    """One observe-orient-decide-act pass; returns ids appended during the tick.

    The tick holds the KB writer lock, so its appends are contiguous in the log.
    A failing strategy leaves an error notice and the checkpoint still advances.
    """
    with kb.writer():
        start = len(kb)
        if role.checkpoint > start:
            raise ValueError(f"checkpoint {role.checkpoint} beyond log length {start}")
        s = role.strategy
        try:
            plan = s.decide(s.orient(s.observe(kb, stack, role.checkpoint)))
            s.act(plan, kb, stack)
        except Exception as exc:  # strategy bugs must not livelock the loop
            log.warning("%s tick failed: %s", role.role.value, exc)
            kb.append(
                Notice(
                    NoticeKind.ERROR,
                    role.role.value,
                    f"{type(exc).__name__}: {exc}",
                    details={"checkpoint": role.checkpoint, "log_length": start},
                )
            )
        role.checkpoint = len(kb)
        return [a.artifact_id for a in kb.log[start:]]
