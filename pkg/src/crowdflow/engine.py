"""Couples one Run with one adapter: pumps adapter events through the run,
executes the resulting commands, and injects clock ticks at schedule
boundaries and idle intervals.

Simulated time only ever advances through this loop, which is why two
executions with the same seed produce byte-identical logs. Manual actions
(pause/resume/abort) enter through ``action`` under the same lock the pump
holds, so admission stays serialized per run.
"""
from __future__ import annotations

import threading
from datetime import datetime, timedelta
from typing import Callable

from .adapters import AdapterEvent, AdapterEventKind
from .adapters.simulator import CrowdSim
from .events import RunEvent
from .orchestrator import Run
from .scheduling import Action, Cause, RunState, next_transition


class Engine:
    def __init__(
        self,
        run: Run,
        adapter: CrowdSim,
        deploy_commands,
        tick_minutes: float = 5.0,
        deadline_hours: float = 21 * 24,
    ):
        self.run = run
        self.adapter = adapter
        self.lock = threading.RLock()
        self.tick = timedelta(minutes=tick_minutes)
        self.deadline_hours = deadline_hours
        self.now: datetime | None = None
        self._sink: Callable[[list[RunEvent]], None] | None = None
        for c in deploy_commands:
            adapter.execute(c)

    def on_events(self, sink: Callable[[list[RunEvent]], None]) -> None:
        """Register a callback invoked with every appended event batch
        (used by the service layer to persist the log incrementally)."""
        self._sink = sink

    def _dispatch(self, events: list[RunEvent], commands) -> None:
        for c in commands:
            self.adapter.execute(c)
        if self._sink and events:
            self._sink(events)

    def launch(self, at: datetime) -> None:
        with self.lock:
            self.now = at
            events, commands = self.run.apply_action(Action.LAUNCH, Cause.MANUAL, at)
            self._dispatch(events, commands)

    def action(self, action: Action, cause: Cause = Cause.MANUAL) -> None:
        """Thread-safe manual lifecycle control at the current sim clock."""
        with self.lock:
            at = self.now or self.run.log[-1].time
            events, commands = self.run.apply_action(action, cause, at)
            self._dispatch(events, commands)

    def step(self) -> bool:
        """Advance by one adapter event or clock tick. False when the run
        is terminal or past its deadline."""
        with self.lock:
            run = self.run
            if run.lifecycle.terminal or self.now is None:
                return False
            deadline = run.log[0].time + timedelta(hours=self.deadline_hours)
            if self.now >= deadline:
                run.apply_action(Action.ABORT, Cause.MANUAL, self.now)
                return False
            if (
                run.lifecycle.state is RunState.PAUSED
                and run.lifecycle.last_cause() is Cause.MANUAL
            ):
                return True  # frozen until a manual resume; caller may idle

            boundary = next_transition(run.schedule, self.now)
            horizon = min(
                boundary or deadline,
                self.now + self.tick,
                deadline,
            )
            ev = self.adapter.next_event(horizon)
            if ev is None:
                self.now = horizon
                ev = AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=horizon)
            else:
                self.now = ev.time
            events, commands = run.handle_event(ev)
            self._dispatch(events, commands)
            return not run.lifecycle.terminal

    def run_to_completion(self, pacer: Callable[[], None] | None = None) -> list[RunEvent]:
        import time as _time

        while self.step():
            if pacer is not None:
                pacer()
            elif self.manually_paused:
                _time.sleep(0.02)  # wall-clock wait for a manual resume
        return self.run.log

    @property
    def manually_paused(self) -> bool:
        return (
            self.run.lifecycle.state is RunState.PAUSED
            and self.run.lifecycle.last_cause() is Cause.MANUAL
        )
