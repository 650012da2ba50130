"""Time sampling: execution windows and the run lifecycle state machine.

All schedule arithmetic is UTC; per-country local time is the business of
the simulator and analytics, not the scheduler. Windows are half-open
[start, end). An empty schedule means always open.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum

GRACE_MINUTES = 10  # admitted-before-close workers may finish within this


def utc(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass(frozen=True)
class Window:
    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError("window start must precede end")


@dataclass(frozen=True)
class RecurringTemplate:
    """days-of-week x hour range, expanded over a date span (inclusive).

    days use ISO numbering via ``datetime.weekday()``: 0 = Monday.
    """

    days: tuple[int, ...]
    start_hour: int
    end_hour: int
    from_date: date
    to_date: date

    def __post_init__(self) -> None:
        if not (0 <= self.start_hour < self.end_hour <= 24):
            raise ValueError("need 0 <= start_hour < end_hour <= 24")
        if any(d < 0 or d > 6 for d in self.days):
            raise ValueError("days must be 0..6 (Monday=0)")
        if self.from_date > self.to_date:
            raise ValueError("from_date must not exceed to_date")

    def expand(self) -> list[Window]:
        out = []
        day = self.from_date
        while day <= self.to_date:
            if day.weekday() in self.days:
                start = datetime.combine(day, time(self.start_hour), tzinfo=timezone.utc)
                if self.end_hour == 24:
                    end = datetime.combine(day + timedelta(days=1), time(0), tzinfo=timezone.utc)
                else:
                    end = datetime.combine(day, time(self.end_hour), tzinfo=timezone.utc)
                out.append(Window(start, end))
            day += timedelta(days=1)
        return out


@dataclass(frozen=True)
class Schedule:
    windows: tuple[Window, ...] = ()
    recurring: RecurringTemplate | None = None

    @property
    def always_open(self) -> bool:
        return not self.windows and self.recurring is None

    def expanded(self) -> list[Window]:
        """All windows, merged so adjacent/overlapping spans coalesce."""
        raw = sorted(
            list(self.windows) + (self.recurring.expand() if self.recurring else []),
            key=lambda w: w.start,
        )
        merged: list[Window] = []
        for w in raw:
            if merged and w.start <= merged[-1].end:
                if w.end > merged[-1].end:
                    merged[-1] = Window(merged[-1].start, w.end)
            else:
                merged.append(w)
        return merged


def is_open(schedule: Schedule, t: datetime) -> bool:
    if schedule.always_open:
        return True
    t = utc(t)
    return any(w.start <= t < w.end for w in schedule.expanded())


def next_transition(schedule: Schedule, t: datetime) -> datetime | None:
    """Earliest instant strictly after t at which is_open flips; None if it
    never changes again."""
    if schedule.always_open:
        return None
    t = utc(t)
    for w in schedule.expanded():
        if t < w.start:
            return w.start
        if t < w.end:
            return w.end
    return None


class RunState(str, Enum):
    DRAFT = "DRAFT"
    DEPLOYED = "DEPLOYED"
    RUNNING = "RUNNING"
    PAUSED = "PAUSED"
    COMPLETED = "COMPLETED"
    ABORTED = "ABORTED"


class Action(str, Enum):
    DEPLOY = "DEPLOY"
    LAUNCH = "LAUNCH"
    PAUSE = "PAUSE"
    RESUME = "RESUME"
    ABORT = "ABORT"
    DATA_COMPLETE = "DATA_COMPLETE"


class Cause(str, Enum):
    MANUAL = "MANUAL"
    SCHEDULE = "SCHEDULE"
    DATA_COMPLETE = "DATA_COMPLETE"


_TRANSITIONS: dict[tuple[RunState, Action], RunState] = {
    (RunState.DRAFT, Action.DEPLOY): RunState.DEPLOYED,
    (RunState.DEPLOYED, Action.LAUNCH): RunState.RUNNING,
    (RunState.RUNNING, Action.PAUSE): RunState.PAUSED,
    (RunState.RUNNING, Action.DATA_COMPLETE): RunState.COMPLETED,
    (RunState.RUNNING, Action.ABORT): RunState.ABORTED,
    (RunState.PAUSED, Action.RESUME): RunState.RUNNING,
    (RunState.PAUSED, Action.ABORT): RunState.ABORTED,
}

TERMINAL_STATES = frozenset({RunState.COMPLETED, RunState.ABORTED})


class IllegalTransition(RuntimeError):
    def __init__(self, state: RunState, action: Action):
        super().__init__(f"action {action.value} is illegal from state {state.value}")
        self.state = state
        self.action = action


@dataclass
class RunLifecycle:
    state: RunState = RunState.DRAFT
    history: list[tuple[RunState, datetime, Cause]] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def last_cause(self) -> Cause | None:
        return self.history[-1][2] if self.history else None


def transition(run: RunLifecycle, action: Action, cause: Cause, t: datetime) -> RunLifecycle:
    """Apply a lifecycle action; raises IllegalTransition off the table."""
    new_state = _TRANSITIONS.get((run.state, action))
    if new_state is None:
        raise IllegalTransition(run.state, action)
    run.state = new_state
    run.history.append((new_state, utc(t), cause))
    return run
