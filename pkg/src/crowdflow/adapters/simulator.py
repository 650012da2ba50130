"""Seeded discrete-event crowd-marketplace simulator.

Arrivals follow a time-inhomogeneous Poisson process (thinning) whose
intensity mixes per-country diurnal activity curves. Workers are persistent
persons with stable fingerprints; past participants re-arrive with a
recency-weighted return propensity and may seek a different task than
before, which is what produces returning-worker and condition-crossover
bias in uncontrolled runs. Decision times are lognormal per condition with
a returning-worker speedup and a slow multiplicative drift across days;
gold accuracy is per condition and deliberately NOT boosted for returners.

Everything is driven by one seeded RNG consumed in event order, so a fixed
(model, tasks, window, seed) tuple yields a bit-identical event stream.
"""
from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from ..geo import COUNTRY_UTC_OFFSET, local_hour
from ..model import DataUnit, TaskNode
from . import AdapterCommand, AdapterEvent, AdapterEventKind, CommandKind


def _evening_curve(peak_hour: float = 20.0, width: float = 4.5, floor: float = 0.18) -> list[float]:
    """Unimodal 24-point activity curve peaking in the local evening."""
    out = []
    for h in range(24):
        d = min(abs(h - peak_hour), 24 - abs(h - peak_hour))
        out.append(floor + (1.0 - floor) * math.exp(-(d * d) / (2 * width * width)))
    return out


@dataclass(frozen=True)
class CrowdModel:
    population_size: int
    country_mix: dict[str, float]
    activity_curve: dict[str, list[float]]
    base_arrival_rate: float  # arrivals/hour at curve peak
    p_return: float
    p_cross_seek: float
    decision_time: dict[str, tuple[float, float]]  # group -> (median s, sigma)
    returning_time_multiplier: float
    accuracy: dict[str, float]  # group -> P(correct on gold)
    drift_factor: float = 1.0
    drift_period_hours: float = 48.0
    p_session_continue: float = 0.88
    return_memory_hours: float = 16.0
    p_new_platform_id: float = 0.03

    def __post_init__(self) -> None:
        total = sum(self.country_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"country_mix must sum to 1, got {total}")
        for p in (self.p_return, self.p_cross_seek, self.p_session_continue,
                  self.p_new_platform_id, self.returning_time_multiplier):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")
        for g, (median, sigma) in self.decision_time.items():
            if median <= 0 or sigma < 0:
                raise ValueError(f"bad decision_time for {g!r}")
        for g, acc in self.accuracy.items():
            if not (0.0 <= acc <= 1.0):
                raise ValueError(f"accuracy for {g!r} outside [0, 1]")

    def decision_params(self, group_id: str) -> tuple[float, float]:
        return self.decision_time.get(group_id, self.decision_time["default"])

    def accuracy_for(self, group_id: str) -> float:
        return self.accuracy.get(group_id, self.accuracy["default"])

    def to_doc(self) -> dict:
        return {
            "population_size": self.population_size,
            "country_mix": dict(self.country_mix),
            "activity_curve": {c: list(v) for c, v in self.activity_curve.items()},
            "base_arrival_rate": self.base_arrival_rate,
            "p_return": self.p_return,
            "p_cross_seek": self.p_cross_seek,
            "decision_time": {g: list(v) for g, v in self.decision_time.items()},
            "returning_time_multiplier": self.returning_time_multiplier,
            "accuracy": dict(self.accuracy),
            "drift_factor": self.drift_factor,
            "drift_period_hours": self.drift_period_hours,
            "p_session_continue": self.p_session_continue,
            "return_memory_hours": self.return_memory_hours,
            "p_new_platform_id": self.p_new_platform_id,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CrowdModel":
        return cls(
            population_size=int(doc["population_size"]),
            country_mix={k: float(v) for k, v in doc["country_mix"].items()},
            activity_curve={k: [float(x) for x in v] for k, v in doc["activity_curve"].items()},
            base_arrival_rate=float(doc["base_arrival_rate"]),
            p_return=float(doc["p_return"]),
            p_cross_seek=float(doc["p_cross_seek"]),
            decision_time={k: (float(v[0]), float(v[1])) for k, v in doc["decision_time"].items()},
            returning_time_multiplier=float(doc["returning_time_multiplier"]),
            accuracy={k: float(v) for k, v in doc["accuracy"].items()},
            drift_factor=float(doc.get("drift_factor", 1.0)),
            drift_period_hours=float(doc.get("drift_period_hours", 48.0)),
            p_session_continue=float(doc.get("p_session_continue", 0.88)),
            return_memory_hours=float(doc.get("return_memory_hours", 16.0)),
            p_new_platform_id=float(doc.get("p_new_platform_id", 0.03)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CrowdModel":
        return cls.from_doc(json.loads(text))


# Calibrated against the uncontrolled-run targets (returning share, crossover
# share, top-3 country judgment share) by scripts/calibrate.py; see README.
_DEFAULT_MIX = {
    "VE": 0.285, "EG": 0.118, "UA": 0.078,
    "IN": 0.070, "PH": 0.065, "BR": 0.060, "US": 0.055, "ID": 0.050,
    "PK": 0.045, "NG": 0.040, "TR": 0.040, "RS": 0.035, "CO": 0.030,
    "MX": 0.029,
}


def default_crowd_model(
    groups: tuple[str, ...] = (),
    p_return: float = 0.54,
    p_cross_seek: float = 0.60,
) -> CrowdModel:
    """The frozen reference marketplace used by acceptance scenarios."""
    curves = {c: _evening_curve() for c in _DEFAULT_MIX}
    decision = {"default": (20.0, 0.45)}
    accuracy = {"default": 0.80}
    for i, g in enumerate(groups):
        decision[g] = (16.0 + 1.5 * (i % 8), 0.45)
        accuracy[g] = 0.78 + 0.01 * (i % 5)
    return CrowdModel(
        population_size=4000,
        country_mix=dict(_DEFAULT_MIX),
        activity_curve=curves,
        base_arrival_rate=40.0,
        p_return=p_return,
        p_cross_seek=p_cross_seek,
        decision_time=decision,
        returning_time_multiplier=0.70,
        accuracy=accuracy,
        drift_factor=1.7,
        drift_period_hours=48.0,
        p_session_continue=0.88,
        return_memory_hours=16.0,
        p_new_platform_id=0.03,
    )


@dataclass
class _Person:
    index: int
    platform_id: str
    fingerprint: str
    country: str
    trust: float
    last_active: datetime | None = None
    last_task: str | None = None
    last_group: str | None = None
    sessions_done: int = 0


@dataclass
class _SimTask:
    ref: str
    node: TaskNode
    units: dict[str, DataUnit]
    launched: bool = False
    paused: bool = False
    canceled: bool = False
    assigned: int = 0  # assignments handed out; proxies work still available

    @property
    def open(self) -> bool:
        return self.launched and not self.paused and not self.canceled

    @property
    def remaining(self) -> int:
        return max(self.node.judgments_per_unit * len(self.units) - self.assigned, 0)


@dataclass
class _Session:
    session_id: str
    person: _Person
    task_ref: str
    returning: bool = False  # had completed sessions before this one began
    judged: int = 0
    rejected: bool = False


class CrowdSim:
    """Interactive simulator adapter; also the backend of the standalone
    dry-run generator ``simulate``."""

    def __init__(self, model: CrowdModel, start: datetime, seed: int):
        self.model = model
        self.start = start.astimezone(timezone.utc) if start.tzinfo else start.replace(tzinfo=timezone.utc)
        self.rng = random.Random(seed)
        self.tasks: dict[str, _SimTask] = {}
        self.sessions: dict[str, _Session] = {}
        self.persons: list[_Person] = []
        self.participants: list[int] = []  # indices of persons with a session
        self._pending: list[tuple[datetime, int, AdapterEvent]] = []
        self._tie = 0
        self._task_counter = 0
        self._session_counter = 0
        self._person_counter = 0
        self._arrival_cursor = self.start
        self._next_arrival: datetime | None = None
        # Peak aggregate intensity bounds the thinning proposal rate.
        self._lambda_max = model.base_arrival_rate * max(
            sum(model.country_mix[c] * max(model.activity_curve[c]) for c in model.country_mix),
            1e-9,
        )

    # -- adapter contract ---------------------------------------------------

    def execute(self, command: AdapterCommand) -> str:
        kind = command.kind
        if kind is CommandKind.CREATE_TASK:
            if command.target:
                ref = command.target  # engine-dictated refs keep replays aligned
            else:
                self._task_counter += 1
                ref = f"pt{self._task_counter:03d}"
            assert command.node is not None
            self.tasks[ref] = _SimTask(ref, command.node, {u.unit_id: u for u in command.units})
            return ref
        if kind is CommandKind.REJECT_WORKER:
            sess = self.sessions.pop(command.session_id or "", None)
            if sess is not None:
                sess.rejected = True
            return "ok"
        task = self.tasks.get(command.target)
        if task is None:
            raise KeyError(f"unknown platform task ref {command.target!r}")
        if kind is CommandKind.LAUNCH:
            task.launched = True
        elif kind is CommandKind.PAUSE:
            task.paused = True
        elif kind is CommandKind.RESUME:
            task.paused = False
        elif kind is CommandKind.CANCEL:
            task.canceled = True
        elif kind is CommandKind.ASSIGN_UNIT:
            self._handle_assignment(command)
        return "ok"

    def events(self, until: datetime):
        while True:
            ev = self.next_event(until)
            if ev is None:
                return
            yield ev

    # -- event generation ---------------------------------------------------

    def next_event(self, horizon: datetime) -> AdapterEvent | None:
        """Earliest pending or freshly-generated event at or before horizon."""
        while True:
            if self._next_arrival is None:
                self._next_arrival = self._draw_arrival_time()
            if self._pending and self._pending[0][0] <= min(self._next_arrival, horizon):
                _, _, ev = heapq.heappop(self._pending)
                if ev.kind is AdapterEventKind.JUDGMENT_SUBMITTED and ev.session_id not in self.sessions:
                    continue  # session was rejected while the judgment was in flight
                return ev
            if self._next_arrival > horizon:
                return None
            t = self._next_arrival
            self._next_arrival = None
            ev = self._materialize_arrival(t)
            if ev is not None:
                return ev

    def _intensity(self, t: datetime) -> float:
        h = t.hour + t.minute / 60 + t.second / 3600
        m = self.model
        return m.base_arrival_rate * sum(
            m.country_mix[c] * m.activity_curve[c][int(local_hour(h, c)) % 24]
            for c in m.country_mix
        )

    def _draw_arrival_time(self) -> datetime:
        while True:
            self._arrival_cursor += timedelta(hours=self.rng.expovariate(self._lambda_max))
            if self.rng.random() <= self._intensity(self._arrival_cursor) / self._lambda_max:
                return self._arrival_cursor

    def _open_tasks(self) -> list[_SimTask]:
        return [t for t in self.tasks.values() if t.open]

    def _materialize_arrival(self, t: datetime) -> AdapterEvent | None:
        open_tasks = self._open_tasks()
        if not open_tasks:
            return None

        returning = False
        person: _Person | None = None
        if self.participants and self.rng.random() < self.model.p_return:
            person = self._pick_returning(t)
            returning = person is not None
        if person is None:
            if len(self.persons) >= self.model.population_size:
                person = self.persons[self.rng.randrange(len(self.persons))]
            else:
                person = self._new_person(t)

        task = self._pick_task(person, returning, open_tasks)
        if task is None:
            return None  # preferred task is gone and this worker only wanted that

        platform_id = person.platform_id
        if returning and self.rng.random() < self.model.p_new_platform_id:
            # Same human, fresh marketplace account; only the fingerprint links them.
            self._person_counter += 1
            platform_id = f"w{self._person_counter:05d}"
            person.platform_id = platform_id

        self._session_counter += 1
        sid = f"s{self._session_counter:06d}"
        self.sessions[sid] = _Session(
            sid, person, task.ref, returning=person.sessions_done >= 1
        )
        person.last_active = t
        return AdapterEvent(
            kind=AdapterEventKind.WORKER_ARRIVAL,
            time=t,
            task_ref=task.ref,
            session_id=sid,
            platform_worker_id=platform_id,
            fingerprint=person.fingerprint,
            country=person.country,
            trust=person.trust,
        )

    def _new_person(self, t: datetime) -> _Person:
        # Country composition follows the time-of-day activity mix, which is
        # what makes run timing shape demographics.
        m = self.model
        h = t.hour + t.minute / 60
        countries = list(m.country_mix)
        weights = [m.country_mix[c] * m.activity_curve[c][int(local_hour(h, c)) % 24] for c in countries]
        country = self.rng.choices(countries, weights=weights, k=1)[0]
        self._person_counter += 1
        person = _Person(
            index=len(self.persons),
            platform_id=f"w{self._person_counter:05d}",
            fingerprint=f"fp{self._person_counter:05d}",
            country=country,
            trust=round(self.rng.uniform(0.5, 1.0), 3),
        )
        self.persons.append(person)
        return person

    def _pick_returning(self, t: datetime) -> _Person | None:
        tau = self.model.return_memory_hours
        weights = []
        for idx in self.participants:
            p = self.persons[idx]
            dt_h = (t - (p.last_active or t)).total_seconds() / 3600
            weights.append(math.exp(-dt_h / tau))
        total = sum(weights)
        if total <= 1e-12:
            return None
        return self.persons[self.rng.choices(self.participants, weights=weights, k=1)[0]]

    def _pick_task(self, person: _Person, returning: bool, open_tasks: list[_SimTask]) -> _SimTask | None:
        if not returning or person.last_task is None:
            # Workers gravitate to tasks with more work still available, the
            # way marketplace listings surface larger jobs.
            weights = [max(t.remaining, 1) for t in open_tasks]
            return self.rng.choices(open_tasks, weights=weights, k=1)[0]
        if self.rng.random() < self.model.p_cross_seek:
            others = [t for t in open_tasks if t.ref != person.last_task]
            pool = others or open_tasks
            return pool[self.rng.randrange(len(pool))]
        # Loyal returner: only interested in the same task, or failing that a
        # task of the same condition; otherwise the visit never happens.
        for task in open_tasks:
            if task.ref == person.last_task:
                return task
        same_group = [t for t in open_tasks if t.node.group_id == person.last_group]
        if same_group:
            return same_group[self.rng.randrange(len(same_group))]
        return None

    # -- worker behavior ----------------------------------------------------

    def _handle_assignment(self, command: AdapterCommand) -> None:
        sess = self.sessions.get(command.session_id or "")
        if sess is None:
            return
        task = self.tasks[command.target]
        t = self._assign_time(command)
        if sess.judged >= 1 and self.rng.random() >= self.model.p_session_continue:
            leave_at = t + timedelta(seconds=self.rng.uniform(3.0, 20.0))
            self._schedule(
                AdapterEvent(
                    kind=AdapterEventKind.WORKER_ABANDONED,
                    time=leave_at,
                    task_ref=task.ref,
                    session_id=sess.session_id,
                    platform_worker_id=sess.person.platform_id,
                )
            )
            return
        unit = task.units[command.unit_id or ""]
        seconds = self._decision_seconds(task.node.group_id, sess.returning, t)
        answer = self._answer(task.node, unit)
        sess.judged += 1
        task.assigned += 1
        self._schedule(
            AdapterEvent(
                kind=AdapterEventKind.JUDGMENT_SUBMITTED,
                time=t + timedelta(seconds=seconds),
                task_ref=task.ref,
                session_id=sess.session_id,
                platform_worker_id=sess.person.platform_id,
                country=sess.person.country,
                unit_id=unit.unit_id,
                answer=answer,
                decision_time_seconds=round(seconds, 3),
            )
        )
        if sess.judged == 1:
            person = sess.person
            if person.sessions_done == 0:
                self.participants.append(person.index)
            person.sessions_done += 1
            person.last_task = task.ref
            person.last_group = task.node.group_id

    def _assign_time(self, command: AdapterCommand) -> datetime:
        return command.at if command.at is not None else self._arrival_cursor

    def _decision_seconds(self, group_id: str, returning: bool, t: datetime) -> float:
        median, sigma = self.model.decision_params(group_id)
        m = median * self._drift(t)
        if returning:
            m *= self.model.returning_time_multiplier
        return self.rng.lognormvariate(math.log(m), sigma)

    def _drift(self, t: datetime) -> float:
        if self.model.drift_factor <= 1.0:
            return 1.0
        hours = (t - self.start).total_seconds() / 3600
        phase = math.sin(2 * math.pi * hours / self.model.drift_period_hours)
        return self.model.drift_factor ** ((1 + phase) / 2)

    def _answer(self, node: TaskNode, unit: DataUnit) -> str:
        options = list(node.answer_options)
        if unit.gold_answer is not None and unit.gold_answer in options:
            if self.rng.random() < self.model.accuracy_for(node.group_id):
                return unit.gold_answer
            wrong = [o for o in options if o != unit.gold_answer]
            if wrong:
                return wrong[self.rng.randrange(len(wrong))]
            return unit.gold_answer
        return options[self.rng.randrange(len(options))]

    def _schedule(self, ev: AdapterEvent) -> None:
        self._tie += 1
        heapq.heappush(self._pending, (ev.time, self._tie, ev))


def assign_command(task_ref: str, session_id: str, unit_id: str, at: datetime) -> AdapterCommand:
    return AdapterCommand(
        kind=CommandKind.ASSIGN_UNIT,
        target=task_ref,
        session_id=session_id,
        unit_id=unit_id,
        at=at,
    )


def simulate(
    model: CrowdModel,
    tasks: list[tuple[TaskNode, list[DataUnit]]],
    start: datetime,
    end: datetime,
    seed: int,
) -> list[AdapterEvent]:
    """Standalone dry run: every arrival is accepted and units are handed
    out uniformly at random on the platform side. No admission control; use
    the orchestrator for that. Fully deterministic under a fixed seed."""
    if start >= end:
        raise ValueError("need start < end")
    sim = CrowdSim(model, start, seed)
    refs = []
    for node, units in tasks:
        ref = sim.execute(AdapterCommand(CommandKind.CREATE_TASK, "", node=node, units=tuple(units)))
        sim.execute(AdapterCommand(CommandKind.LAUNCH, ref))
        refs.append(ref)
    out: list[AdapterEvent] = []
    while True:
        ev = sim.next_event(end)
        if ev is None:
            break
        out.append(ev)
        if ev.kind in (AdapterEventKind.WORKER_ARRIVAL, AdapterEventKind.JUDGMENT_SUBMITTED):
            task = sim.tasks[ev.task_ref]
            unit_ids = sorted(task.units)
            unit_id = unit_ids[sim.rng.randrange(len(unit_ids))]
            sim.execute(assign_command(ev.task_ref, ev.session_id, unit_id, ev.time))
    return out
