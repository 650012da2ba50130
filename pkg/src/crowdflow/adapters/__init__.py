"""The platform boundary: commands the engine issues and events platforms
deliver back. Two implementations ship: the seeded crowd-marketplace
simulator (reference) and a generic remote HTTP skeleton.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, Protocol

from ..model import DataUnit, TaskNode


class CommandKind(str, Enum):
    CREATE_TASK = "CREATE_TASK"
    LAUNCH = "LAUNCH"
    PAUSE = "PAUSE"
    RESUME = "RESUME"
    REJECT_WORKER = "REJECT_WORKER"
    ASSIGN_UNIT = "ASSIGN_UNIT"
    CANCEL = "CANCEL"


@dataclass(frozen=True)
class AdapterCommand:
    kind: CommandKind
    target: str  # platform task ref ("" only for commands sent pre-creation)
    node: TaskNode | None = None
    units: tuple[DataUnit, ...] = ()
    session_id: str | None = None
    unit_id: str | None = None
    reason: str | None = None
    at: datetime | None = None  # issue instant (simulated clock)
    command_id: str | None = None  # idempotency key for remote adapters


class AdapterEventKind(str, Enum):
    TASK_CREATED = "TASK_CREATED"
    WORKER_ARRIVAL = "WORKER_ARRIVAL"
    JUDGMENT_SUBMITTED = "JUDGMENT_SUBMITTED"
    WORKER_ABANDONED = "WORKER_ABANDONED"
    CLOCK_TICK = "CLOCK_TICK"


@dataclass(frozen=True)
class AdapterEvent:
    kind: AdapterEventKind
    time: datetime
    task_ref: str = ""
    session_id: str = ""
    platform_worker_id: str = ""
    fingerprint: str | None = None
    country: str = ""
    trust: float = 1.0
    unit_id: str = ""
    answer: str = ""
    decision_time_seconds: float = 0.0
    extra: dict = field(default_factory=dict)


class Adapter(Protocol):
    """What the run engine needs from any platform binding."""

    def execute(self, command: AdapterCommand) -> str:
        """Apply a command; returns the platform task ref for CREATE_TASK
        and an acknowledgment string otherwise."""
        ...

    def events(self, until: datetime) -> Iterable[AdapterEvent]:
        """Drain ordered events with time <= until."""
        ...
