"""The run engine: deploys a workflow onto an adapter, pushes adapter
events through the admission pipeline (schedule -> population filter ->
eligibility -> quota), assigns units, collects judgments, fires lambdas at
stage barriers, and advances to completion.

Event-sourced: every state mutation happens inside ``Run._apply`` as a fold
over RunEvents, so replaying a log reconstructs the exact run state. Live
processing builds events, folds them through the same ``_apply``, and
returns adapter commands as a side effect. Unit-assignment tie-breaks use a
per-decision RNG seeded by (run seed, event seq), leaving no hidden RNG
stream to reconstruct.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

from .adapters import AdapterCommand, AdapterEvent, AdapterEventKind, CommandKind
from .eligibility import (
    Design,
    EligibilityPolicy,
    ParticipationLedger,
    Reason,
    ReturningRule,
    WorkerRegistry,
    check_eligibility,
)
from .events import EventKind, RunEvent, fmt_time, parse_time
from .lambdas import apply_lambda
from .model import (
    SINK,
    SOURCE,
    DataUnit,
    JudgedUnit,
    LabeledCollection,
    LambdaSpec,
    Workflow,
    as_data_unit,
    item_id,
)
from .population import QuotaLedger, QuotaSpec
from .scheduling import (
    GRACE_MINUTES,
    Action,
    Cause,
    RunLifecycle,
    RunState,
    Schedule,
    is_open,
    next_transition,
    transition,
)
from .workflows import parse_workflow, serialize, topological_stages, validate

DEFAULT_SESSION_TTL_MINUTES = 30.0


class DeployError(ValueError):
    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = violations or []


@dataclass
class NodeState:
    node_id: str
    k: int
    pool: dict[str, DataUnit]
    committed: dict[str, int] = field(default_factory=dict)
    outstanding: dict[str, int] = field(default_factory=dict)
    judged_by: dict[str, set[str]] = field(default_factory=dict)
    judgments: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    closed: bool = False

    @property
    def total_needed(self) -> int:
        return self.k * len(self.pool)

    @property
    def total_committed(self) -> int:
        return sum(self.committed.values())

    def all_done(self) -> bool:
        return all(self.committed.get(u, 0) >= self.k for u in self.pool)

    def assignable(self, worker: str) -> list[str]:
        out = []
        for uid in self.pool:
            c = self.committed.get(uid, 0)
            if c + self.outstanding.get(uid, 0) >= self.k:
                continue
            if worker in self.judged_by.get(uid, ()):
                continue
            out.append(uid)
        return out

    def judged_units(self) -> tuple[JudgedUnit, ...]:
        return tuple(
            JudgedUnit(self.pool[uid], tuple(a for _, a in self.judgments.get(uid, [])))
            for uid in sorted(self.pool)
        )


@dataclass
class LiveSession:
    session_id: str
    worker: str
    node_id: str
    task_ref: str
    country: str
    admitted_at: datetime
    reservation_id: str | None = None
    unit_id: str | None = None
    assigned_at: datetime | None = None


def _policy_doc(p: EligibilityPolicy) -> dict:
    return {"design": p.design.value, "returning_rule": p.returning_rule.value}


def _policy_from_doc(d: dict) -> EligibilityPolicy:
    return EligibilityPolicy(Design(d["design"]), ReturningRule(d["returning_rule"]))


def _quota_doc(q: QuotaSpec | None) -> dict | None:
    if q is None:
        return None
    return {
        "attribute": q.attribute,
        "cap_fraction": q.cap_fraction,
        "scope": q.scope,
        "ttl_minutes": q.ttl_minutes,
    }


def _quota_from_doc(d: dict | None) -> QuotaSpec | None:
    if d is None:
        return None
    return QuotaSpec(d["attribute"], d["cap_fraction"], d.get("scope", ""), d.get("ttl_minutes", 30))


def _schedule_doc(s: Schedule) -> dict:
    doc: dict = {}
    if s.windows:
        doc["windows"] = [{"start": fmt_time(w.start), "end": fmt_time(w.end)} for w in s.windows]
    if s.recurring:
        r = s.recurring
        doc["recurring"] = {
            "days": list(r.days),
            "start_hour": r.start_hour,
            "end_hour": r.end_hour,
            "from_date": r.from_date.isoformat(),
            "to_date": r.to_date.isoformat(),
        }
    return doc


def _schedule_from_doc(d: dict) -> Schedule:
    from datetime import date

    from .scheduling import RecurringTemplate, Window

    windows = tuple(
        Window(parse_time(w["start"]), parse_time(w["end"])) for w in d.get("windows", [])
    )
    rec = None
    if "recurring" in d:
        r = d["recurring"]
        rec = RecurringTemplate(
            days=tuple(r["days"]),
            start_hour=r["start_hour"],
            end_hour=r["end_hour"],
            from_date=date.fromisoformat(r["from_date"]),
            to_date=date.fromisoformat(r["to_date"]),
        )
    return Schedule(windows=windows, recurring=rec)


schedule_from_doc = _schedule_from_doc
schedule_to_doc = _schedule_doc


class Run:
    """One deployed experiment. All mutation flows through ``_apply``."""

    def __init__(self) -> None:
        self.run_id = ""
        self.workflow: Workflow | None = None
        self.policy = EligibilityPolicy()
        self.quota_spec: QuotaSpec | None = None
        self.schedule = Schedule()
        self.seed = 0
        self.adapter_name = "sim"
        self.lifecycle = RunLifecycle()
        self.registry = WorkerRegistry()
        self.ledger = ParticipationLedger()
        self.quota: QuotaLedger | None = None
        self.stages: list[set[str]] = []
        self.stage_index = 0
        self.node_states: dict[str, NodeState] = {}
        self.sessions: dict[str, LiveSession] = {}
        self.session_worker: dict[str, str] = {}
        self.outputs: dict[str, list[dict]] = {}
        self.cross_group_merges: list[str] = []
        self.denials: dict[str, int] = {}
        self.log: list[RunEvent] = []
        self._last_time: datetime | None = None

    # -- construction --------------------------------------------------------

    @classmethod
    def deploy(
        cls,
        workflow: Workflow,
        policy: EligibilityPolicy,
        quota: QuotaSpec | None,
        schedule: Schedule,
        seed: int,
        run_id: str,
        at: datetime,
        adapter_name: str = "sim",
    ) -> tuple["Run", list[RunEvent], list[AdapterCommand]]:
        violations = validate(workflow)
        if violations:
            raise DeployError(
                "workflow failed validation: " + "; ".join(str(v) for v in violations),
                violations,
            )
        # Feasibility: the quota must leave at least one judgment per value.
        QuotaLedger(quota, workflow.total_judgment_target())

        run = cls()
        ev = run._emit(
            EventKind.DEPLOYED,
            at,
            {
                "run_id": run_id,
                "adapter": adapter_name,
                "seed": seed,
                "workflow": serialize(workflow),
                "policy": _policy_doc(policy),
                "quota": _quota_doc(quota),
                "schedule": _schedule_doc(schedule),
            },
        )
        commands = run._create_commands_for_stage(run.stage_index)
        return run, [ev], commands

    @classmethod
    def replay(cls, events: list[RunEvent]) -> "Run":
        """Fold a gap-free log back into the exact run state."""
        run = cls()
        for i, ev in enumerate(events):
            if ev.seq != i:
                raise ValueError(f"sequence gap at {ev.seq} (expected {i})")
            run._apply(ev)
            run.log.append(ev)
        return run

    # -- event plumbing -------------------------------------------------------

    def _next_seq(self) -> int:
        return len(self.log)

    def _emit(self, kind: EventKind, t: datetime, payload: dict) -> RunEvent:
        if self._last_time is not None and t < self._last_time:
            t = self._last_time
        ev = RunEvent(seq=self._next_seq(), time=t, kind=kind, payload=payload)
        self._apply(ev)
        self.log.append(ev)
        return ev

    # -- state fold -----------------------------------------------------------

    def _apply(self, ev: RunEvent) -> None:
        self._last_time = ev.time
        kind = ev.kind
        p = ev.payload
        if kind is EventKind.DEPLOYED:
            self._apply_deployed(ev.time, p)
        elif kind is EventKind.LIFECYCLE:
            transition(self.lifecycle, Action(p["action"]), Cause(p["cause"]), ev.time)
        elif kind is EventKind.WORKER_ARRIVAL:
            cid, merged = self.registry.resolve_worker(
                p["adapter"], p["platform_worker_id"], p.get("fingerprint"),
                p["country"], p["trust"], ev.time,
            )
            if merged:
                self.ledger.reassign(cid, merged)
            self.session_worker[p["session_id"]] = cid
        elif kind is EventKind.ADMITTED:
            assert self.quota is not None
            res = self.quota.admit(p["country"], ev.time, reservation_id=p["reservation_id"])
            assert res is not None, "admitted event for a full quota bucket"
            self.ledger.grant(p["worker"], p["node_id"], self.run_id)
            self.sessions[p["session_id"]] = LiveSession(
                session_id=p["session_id"],
                worker=p["worker"],
                node_id=p["node_id"],
                task_ref=p["task_ref"],
                country=p["country"],
                admitted_at=ev.time,
                reservation_id=p["reservation_id"],
            )
        elif kind is EventKind.DENIED:
            self.denials[p["reason"]] = self.denials.get(p["reason"], 0) + 1
        elif kind is EventKind.UNIT_ASSIGNED:
            sess = self.sessions[p["session_id"]]
            ns = self.node_states[p["node_id"]]
            uid = p["unit_id"]
            if p["reservation_id"] != sess.reservation_id:
                assert self.quota is not None
                res = self.quota.admit(sess.country, ev.time, reservation_id=p["reservation_id"])
                assert res is not None
                sess.reservation_id = p["reservation_id"]
            ns.outstanding[uid] = ns.outstanding.get(uid, 0) + 1
            ns.judged_by.setdefault(uid, set()).add(sess.worker)
            sess.unit_id = uid
            sess.assigned_at = ev.time
        elif kind is EventKind.JUDGMENT:
            sess = self.sessions[p["session_id"]]
            ns = self.node_states[p["node_id"]]
            uid = p["unit_id"]
            ns.outstanding[uid] = ns.outstanding.get(uid, 1) - 1
            ns.committed[uid] = ns.committed.get(uid, 0) + 1
            ns.judgments.setdefault(uid, []).append((p["worker"], p["answer"]))
            assert self.quota is not None
            self.quota.commit(sess.reservation_id)
            sess.reservation_id = None
            sess.unit_id = None
            sess.assigned_at = None
            self.ledger.record_participation(
                p["worker"], p["node_id"], p["group_id"], self.run_id, ev.time
            )
        elif kind is EventKind.RESERVATION_EXPIRED:
            assert self.quota is not None
            for sid in p["sessions"]:
                sess = self.sessions.pop(sid, None)
                if sess is None:
                    continue
                if sess.unit_id is not None:
                    ns = self.node_states[sess.node_id]
                    ns.outstanding[sess.unit_id] = ns.outstanding.get(sess.unit_id, 1) - 1
                    ns.judged_by.get(sess.unit_id, set()).discard(sess.worker)
                if sess.reservation_id is not None:
                    self.quota.release(sess.reservation_id)
        elif kind is EventKind.STAGE_ADVANCED:
            self._apply_stage_advance(p)
        elif kind is EventKind.LAMBDA_APPLIED:
            pass  # informational; routing happens in STAGE_ADVANCED/RUN_COMPLETED
        elif kind is EventKind.RUN_COMPLETED:
            self._apply_completed(ev.time, p)
        elif kind is EventKind.WARNING:
            pass

    def _apply_deployed(self, t: datetime, p: dict) -> None:
        self.run_id = p["run_id"]
        self.adapter_name = p["adapter"]
        self.seed = p["seed"]
        self.workflow = parse_workflow(p["workflow"])
        self.policy = _policy_from_doc(p["policy"])
        self.quota_spec = _quota_from_doc(p["quota"])
        self.schedule = _schedule_from_doc(p["schedule"])
        self.quota = QuotaLedger(self.quota_spec, self.workflow.total_judgment_target())
        self.stages = topological_stages(self.workflow)
        self.stage_index = 0
        transition(self.lifecycle, Action.DEPLOY, Cause.MANUAL, t)
        for node_id in sorted(self.stages[0]):
            self._open_node(node_id)

    def _open_node(self, node_id: str) -> None:
        assert self.workflow is not None
        node = self.workflow.node(node_id)
        pool: dict[str, DataUnit] = {}
        sources = set()
        for edge in self.workflow.in_edges(node_id):
            if edge.source == SOURCE:
                inputs = [LabeledCollection(SOURCE, tuple(self.workflow.input_units))]
            else:
                src_state = self.node_states[edge.source]
                inputs = [LabeledCollection(edge.source, src_state.judged_units())]
                sources.add(self.workflow.node(edge.source).group_id)
            for coll in apply_lambda(edge.fn, inputs):
                for it in coll.items:
                    unit = as_data_unit(it, node_id, edge.fn.name)
                    pool.setdefault(unit.unit_id, unit)
        if len(sources) > 1:
            self.cross_group_merges.append(node_id)
        self.node_states[node_id] = NodeState(
            node_id=node_id,
            k=node.judgments_per_unit,
            pool=dict(sorted(pool.items())),
        )

    def _apply_stage_advance(self, p: dict) -> None:
        for node_id in p["closed_nodes"]:
            self.node_states[node_id].closed = True
        self.stage_index = p["to_stage"]
        for node_id in p["opened_nodes"]:
            self._open_node(node_id)

    def _apply_completed(self, t: datetime, p: dict) -> None:
        assert self.workflow is not None
        for node_id in p.get("closed_nodes", []):
            self.node_states[node_id].closed = True
        for node_id in sorted(self.node_states):
            state = self.node_states[node_id]
            explicit = [e for e in self.workflow.out_edges(node_id) if e.target == SINK]
            edges = explicit or (
                [None] if not self.workflow.out_edges(node_id) else []
            )
            for edge in edges:
                fn = edge.fn if edge is not None else LambdaSpec("pass_through")
                colls = apply_lambda(fn, [LabeledCollection(node_id, state.judged_units())])
                key = f"{node_id}->{SINK}[{fn.name}]"
                self.outputs[key] = [
                    {"label": c.label, "items": [_item_doc(it) for it in c.items]}
                    for c in colls
                ]
        transition(self.lifecycle, Action.DATA_COMPLETE, Cause.DATA_COMPLETE, t)

    # -- live processing -------------------------------------------------------

    def apply_action(self, action: Action, cause: Cause, at: datetime) -> tuple[list[RunEvent], list[AdapterCommand]]:
        """Lifecycle control (launch/pause/resume/abort). Raises
        IllegalTransition when the table forbids it."""
        transition(RunLifecycle(state=self.lifecycle.state), action, cause, at)  # dry check
        ev = self._emit(EventKind.LIFECYCLE, at, {"action": action.value, "cause": cause.value})
        commands = []
        kind = {
            Action.LAUNCH: CommandKind.LAUNCH,
            Action.RESUME: CommandKind.RESUME,
            Action.PAUSE: CommandKind.PAUSE,
            Action.ABORT: CommandKind.CANCEL,
        }.get(action)
        if kind is not None:
            for node_id in sorted(self.stages[self.stage_index]):
                if not self.node_states[node_id].closed:
                    commands.append(AdapterCommand(kind, self.task_ref(node_id), at=at))
        events = [ev]
        if action is Action.RESUME:
            # Grace judgments may have finished the stage while paused.
            evs, cmds = self._maybe_advance(at)
            events.extend(evs)
            commands.extend(cmds)
        return events, commands

    def task_ref(self, node_id: str) -> str:
        return f"{self.run_id}/{node_id}"

    def node_of_ref(self, ref: str) -> str:
        prefix = self.run_id + "/"
        if not ref.startswith(prefix):
            raise KeyError(f"task ref {ref!r} does not belong to run {self.run_id!r}")
        return ref[len(prefix):]

    def _create_commands_for_stage(self, stage: int) -> list[AdapterCommand]:
        assert self.workflow is not None
        out = []
        for node_id in sorted(self.stages[stage]):
            state = self.node_states[node_id]
            out.append(
                AdapterCommand(
                    CommandKind.CREATE_TASK,
                    self.task_ref(node_id),
                    node=self.workflow.node(node_id),
                    units=tuple(state.pool.values()),
                )
            )
        return out

    def handle_event(self, ev: AdapterEvent) -> tuple[list[RunEvent], list[AdapterCommand]]:
        """Process one adapter event; returns the run events appended and
        the adapter commands to execute."""
        if self.lifecycle.terminal:
            warn = self._emit(
                EventKind.WARNING, ev.time,
                {"code": "EVENT_AFTER_TERMINAL", "adapter_kind": ev.kind.value},
            )
            return [warn], []
        if ev.kind is AdapterEventKind.CLOCK_TICK:
            return self._on_clock(ev.time)
        if ev.kind is AdapterEventKind.WORKER_ARRIVAL:
            return self._on_arrival(ev)
        if ev.kind is AdapterEventKind.JUDGMENT_SUBMITTED:
            return self._on_judgment(ev)
        if ev.kind is AdapterEventKind.WORKER_ABANDONED:
            return self._on_abandoned(ev)
        return [], []

    def _on_arrival(self, ev: AdapterEvent) -> tuple[list[RunEvent], list[AdapterCommand]]:
        node_id = self.node_of_ref(ev.task_ref)
        if node_id not in self.node_states:
            raise KeyError(f"arrival for unknown node {node_id!r}")
        merges_before = len(self.registry.merges)
        events = [
            self._emit(
                EventKind.WORKER_ARRIVAL,
                ev.time,
                {
                    "session_id": ev.session_id,
                    "adapter": self.adapter_name,
                    "platform_worker_id": ev.platform_worker_id,
                    "fingerprint": ev.fingerprint,
                    "country": ev.country,
                    "trust": ev.trust,
                    "node_id": node_id,
                },
            )
        ]
        if len(self.registry.merges) > merges_before:
            winner, loser = self.registry.merges[-1]
            events.append(
                self._emit(
                    EventKind.WARNING, ev.time,
                    {"code": "IDENTITY_MERGE", "canonical": winner, "absorbed": loser},
                )
            )

        worker = self.session_worker[ev.session_id]
        deny = self._admission_reason(worker, node_id, ev.time)
        if deny is not None:
            events.append(self._deny(ev, node_id, worker, deny))
            return events, [self._reject(ev.task_ref, ev.session_id, deny, ev.time)]

        state = self.node_states[node_id]
        unit_id = self._pick_unit(state, worker)
        if unit_id is None:
            events.append(self._deny(ev, node_id, worker, "NO_UNITS_LEFT"))
            return events, [self._reject(ev.task_ref, ev.session_id, "NO_UNITS_LEFT", ev.time)]

        reservation_id = f"rsv{self._next_seq():06d}"
        events.append(
            self._emit(
                EventKind.ADMITTED,
                ev.time,
                {
                    "session_id": ev.session_id,
                    "worker": worker,
                    "node_id": node_id,
                    "task_ref": ev.task_ref,
                    "country": ev.country,
                    "reservation_id": reservation_id,
                },
            )
        )
        events.append(
            self._emit(
                EventKind.UNIT_ASSIGNED,
                ev.time,
                {
                    "session_id": ev.session_id,
                    "worker": worker,
                    "node_id": node_id,
                    "unit_id": unit_id,
                    "reservation_id": reservation_id,
                },
            )
        )
        cmd = AdapterCommand(
            CommandKind.ASSIGN_UNIT, ev.task_ref,
            session_id=ev.session_id, unit_id=unit_id, at=ev.time,
        )
        return events, [cmd]

    def _admission_reason(self, worker: str, node_id: str, t: datetime) -> str | None:
        """First failing admission gate, or None when all gates pass.
        Pipeline order is fixed: schedule, population filter, eligibility,
        quota."""
        assert self.workflow is not None and self.quota is not None
        if self.lifecycle.state is not RunState.RUNNING or not is_open(self.schedule, t):
            return "SCHEDULE_CLOSED"
        state = self.node_states[node_id]
        if state.closed:
            return "NO_UNITS_LEFT"
        node = self.workflow.node(node_id)
        record = self.registry.records[worker]
        decision = check_eligibility(
            record, node, self.policy, self.ledger, self.run_id,
            run_group_ids=frozenset(n.group_id for n in self.workflow.nodes),
        )
        if not decision.allowed:
            return decision.reason.value
        c = self.quota.counters_for(record.country)
        if self.quota.enabled and c.committed + c.reserved + 1 > self.quota.spec.cap(self.quota.target_total):
            return "DENY_QUOTA"
        return None

    def _deny(self, ev: AdapterEvent, node_id: str, worker: str, reason: str) -> RunEvent:
        return self._emit(
            EventKind.DENIED,
            ev.time,
            {
                "session_id": ev.session_id,
                "worker": worker,
                "node_id": node_id,
                "country": ev.country,
                "reason": reason,
            },
        )

    def _reject(self, task_ref: str, session_id: str, reason: str, at: datetime) -> AdapterCommand:
        return AdapterCommand(
            CommandKind.REJECT_WORKER, task_ref, session_id=session_id, reason=reason, at=at
        )

    def _pick_unit(self, state: NodeState, worker: str) -> str | None:
        candidates = state.assignable(worker)
        if not candidates:
            return None
        least = min(state.committed.get(u, 0) for u in candidates)
        tied = sorted(u for u in candidates if state.committed.get(u, 0) == least)
        rng = random.Random(f"{self.seed}:{self._next_seq()}")
        return rng.choice(tied)

    def _on_judgment(self, ev: AdapterEvent) -> tuple[list[RunEvent], list[AdapterCommand]]:
        sess = self.sessions.get(ev.session_id)
        if sess is None or sess.unit_id != ev.unit_id:
            warn = self._emit(
                EventKind.WARNING, ev.time,
                {"code": "STRAY_JUDGMENT", "session_id": ev.session_id, "unit_id": ev.unit_id},
            )
            return [warn], []
        assert self.workflow is not None
        node = self.workflow.node(sess.node_id)

        grace = False
        if not is_open(self.schedule, ev.time) or self.lifecycle.state is not RunState.RUNNING:
            close_at = next_transition(self.schedule, sess.assigned_at or sess.admitted_at)
            limit = (close_at or ev.time) + timedelta(minutes=GRACE_MINUTES)
            if ev.time <= limit:
                grace = True
            else:
                events = [
                    self._emit(
                        EventKind.WARNING, ev.time,
                        {"code": "GRACE_EXPIRED", "session_id": ev.session_id, "unit_id": ev.unit_id},
                    ),
                    self._emit(
                        EventKind.RESERVATION_EXPIRED, ev.time,
                        {"sessions": [ev.session_id], "cause": "GRACE_EXPIRED"},
                    ),
                ]
                return events, [self._reject(ev.task_ref, ev.session_id, "GRACE_EXPIRED", ev.time)]

        events = [
            self._emit(
                EventKind.JUDGMENT,
                ev.time,
                {
                    "session_id": ev.session_id,
                    "worker": sess.worker,
                    "node_id": sess.node_id,
                    "group_id": node.group_id,
                    "unit_id": ev.unit_id,
                    "answer": ev.answer,
                    "decision_time_seconds": ev.decision_time_seconds,
                    "country": sess.country,
                    "grace": grace,
                },
            )
        ]
        commands: list[AdapterCommand] = []

        state = self.node_states[sess.node_id]
        if state.all_done():
            commands.append(AdapterCommand(CommandKind.CANCEL, sess.task_ref, at=ev.time))
            evs, cmds = self._maybe_advance(ev.time)
            events.extend(evs)
            commands.extend(cmds)
            return events, commands

        # Session continues: same gates minus eligibility (still one
        # contiguous session), fresh quota reservation per judgment.
        if self.lifecycle.state is not RunState.RUNNING or not is_open(self.schedule, ev.time):
            return events, [self._reject(sess.task_ref, sess.session_id, "SCHEDULE_CLOSED", ev.time)]
        assert self.quota is not None
        c = self.quota.counters_for(sess.country)
        if self.quota.enabled and c.committed + c.reserved + 1 > self.quota.spec.cap(self.quota.target_total):
            events.append(self._deny(ev, sess.node_id, sess.worker, "DENY_QUOTA"))
            return events, [self._reject(sess.task_ref, sess.session_id, "DENY_QUOTA", ev.time)]
        unit_id = self._pick_unit(state, sess.worker)
        if unit_id is None:
            events.append(self._deny(ev, sess.node_id, sess.worker, "NO_UNITS_LEFT"))
            return events, [self._reject(sess.task_ref, sess.session_id, "NO_UNITS_LEFT", ev.time)]
        reservation_id = f"rsv{self._next_seq():06d}"
        events.append(
            self._emit(
                EventKind.UNIT_ASSIGNED,
                ev.time,
                {
                    "session_id": sess.session_id,
                    "worker": sess.worker,
                    "node_id": sess.node_id,
                    "unit_id": unit_id,
                    "reservation_id": reservation_id,
                },
            )
        )
        commands.append(
            AdapterCommand(
                CommandKind.ASSIGN_UNIT, sess.task_ref,
                session_id=sess.session_id, unit_id=unit_id, at=ev.time,
            )
        )
        return events, commands

    def _on_abandoned(self, ev: AdapterEvent) -> tuple[list[RunEvent], list[AdapterCommand]]:
        if ev.session_id not in self.sessions:
            return [], []
        event = self._emit(
            EventKind.RESERVATION_EXPIRED, ev.time,
            {"sessions": [ev.session_id], "cause": "ABANDONED"},
        )
        return [event], []

    def _on_clock(self, now: datetime) -> tuple[list[RunEvent], list[AdapterCommand]]:
        events: list[RunEvent] = []
        commands: list[AdapterCommand] = []

        ttl_minutes = self.quota_spec.ttl_minutes if self.quota_spec else DEFAULT_SESSION_TTL_MINUTES
        ttl = timedelta(minutes=ttl_minutes)
        stale = sorted(
            (sid, sess.task_ref)
            for sid, sess in self.sessions.items()
            if sess.unit_id is not None and sess.assigned_at is not None
            and now - sess.assigned_at >= ttl
        )
        if stale:
            events.append(
                self._emit(
                    EventKind.RESERVATION_EXPIRED, now,
                    {"sessions": [sid for sid, _ in stale], "cause": "TTL"},
                )
            )
            for sid, ref in stale:
                commands.append(self._reject(ref, sid, "TTL", now))

        if self.lifecycle.state is RunState.RUNNING and not is_open(self.schedule, now):
            evs, cmds = self.apply_action(Action.PAUSE, Cause.SCHEDULE, now)
            events.extend(evs)
            commands.extend(cmds)
        elif (
            self.lifecycle.state is RunState.PAUSED
            and self.lifecycle.last_cause() is Cause.SCHEDULE
            and is_open(self.schedule, now)
        ):
            evs, cmds = self.apply_action(Action.RESUME, Cause.SCHEDULE, now)
            events.extend(evs)
            commands.extend(cmds)
        return events, commands

    def _maybe_advance(self, at: datetime) -> tuple[list[RunEvent], list[AdapterCommand]]:
        """Barrier stage advance: fires only when every node of the current
        stage is fully judged."""
        current = sorted(self.stages[self.stage_index])
        if self.lifecycle.state is not RunState.RUNNING:
            return [], []  # completion only from RUNNING; retried on resume
        if not all(self.node_states[n].all_done() for n in current):
            return [], []
        events: list[RunEvent] = []
        commands: list[AdapterCommand] = []

        last_stage = self.stage_index + 1 >= len(self.stages)
        assert self.workflow is not None
        if last_stage:
            for node_id in current:
                for edge in self.workflow.out_edges(node_id):
                    events.append(self._log_lambda(edge, at))
            events.append(
                self._emit(EventKind.RUN_COMPLETED, at, {"closed_nodes": current})
            )
            return events, commands

        opened = sorted(self.stages[self.stage_index + 1])
        for node_id in opened:
            for edge in self.workflow.in_edges(node_id):
                events.append(self._log_lambda(edge, at))
        events.append(
            self._emit(
                EventKind.STAGE_ADVANCED,
                at,
                {
                    "from_stage": self.stage_index,
                    "to_stage": self.stage_index + 1,
                    "closed_nodes": current,
                    "opened_nodes": opened,
                },
            )
        )
        commands.extend(self._create_commands_for_stage(self.stage_index))
        for node_id in opened:
            commands.append(AdapterCommand(CommandKind.LAUNCH, self.task_ref(node_id), at=at))
        return events, commands

    def _log_lambda(self, edge, at: datetime) -> RunEvent:
        assert self.workflow is not None
        if edge.source == SOURCE:
            items: tuple = tuple(self.workflow.input_units)
        else:
            src_state = self.node_states.get(edge.source)
            items = src_state.judged_units() if src_state else ()
        colls = apply_lambda(edge.fn, [LabeledCollection(edge.source, items)])
        unresolved = sum(
            1
            for c in colls
            for it in c.items
            if getattr(it, "answer", None) == "$unresolved"
        )
        return self._emit(
            EventKind.LAMBDA_APPLIED,
            at,
            {
                "edge": f"{edge.source}->{edge.target}",
                "lambda": edge.fn.name,
                "inputs": len(items),
                "outputs": [{"label": c.label, "size": len(c.items)} for c in colls],
                "unresolved": unresolved,
            },
        )

    # -- introspection ---------------------------------------------------------

    def progress(self) -> dict:
        nodes = {}
        for node_id, st in sorted(self.node_states.items()):
            nodes[node_id] = {
                "judged": st.total_committed,
                "target": st.total_needed,
                "closed": st.closed,
            }
        quota_state = {}
        if self.quota is not None and self.quota.enabled:
            cap = self.quota.spec.cap(self.quota.target_total)
            quota_state = {
                "cap_per_value": cap,
                "target_total": self.quota.target_total,
                "committed": self.quota.committed_by_value(),
            }
        return {
            "run_id": self.run_id,
            "state": self.lifecycle.state.value,
            "stage": self.stage_index,
            "stages": len(self.stages),
            "nodes": nodes,
            "denials": dict(sorted(self.denials.items())),
            "quota": quota_state,
            "events": len(self.log),
        }

    def state_hash(self) -> str:
        """Stable digest of the externally meaningful run state."""
        doc = {
            "run_id": self.run_id,
            "state": self.lifecycle.state.value,
            "stage": self.stage_index,
            "nodes": {
                nid: {
                    "closed": st.closed,
                    "committed": dict(sorted(st.committed.items())),
                    "judgments": {u: sorted(j) for u, j in sorted(st.judgments.items())},
                }
                for nid, st in sorted(self.node_states.items())
            },
            "sessions": sorted(self.sessions),
            "denials": dict(sorted(self.denials.items())),
            "quota_committed": dict(sorted(self.quota.committed_by_value().items())) if self.quota else {},
            "outputs": self.outputs,
            "workers": sorted(self.registry.records),
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _item_doc(item) -> dict:
    if isinstance(item, JudgedUnit):
        return {"unit_id": item.unit.unit_id, "answers": list(item.answers)}
    if isinstance(item, DataUnit):
        return {"unit_id": item.unit_id}
    return {
        "unit_id": item.unit.unit_id,
        "answer": item.answer,
        "votes": item.votes,
        "total": item.total,
    }
