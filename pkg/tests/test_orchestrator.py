from __future__ import annotations

from datetime import timedelta

import pytest

from crowdflow.adapters import AdapterCommand, AdapterEvent, AdapterEventKind, CommandKind
from crowdflow.eligibility import Design, EligibilityPolicy, ReturningRule
from crowdflow.events import EventKind, decode_log, encode_log
from crowdflow.orchestrator import DeployError, Run
from crowdflow.population import QuotaError, QuotaSpec
from crowdflow.scheduling import Action, Cause, RunState, Schedule, Window
from crowdflow.scenarios import chain_workflow, execute, paired_conditions_workflow

from conftest import T0, make_workflow

OPEN = EligibilityPolicy(Design.OPEN, ReturningRule.ALLOW_SAME_GROUP)


def deploy(wf, policy=OPEN, quota=None, schedule=None, seed=1, run_id="t"):
    return Run.deploy(wf, policy, quota, schedule or Schedule(), seed, run_id, T0)


def arrival(run, worker: str, node: str, t, session: str, country="VE", fingerprint=None, trust=0.9):
    return run.handle_event(
        AdapterEvent(
            kind=AdapterEventKind.WORKER_ARRIVAL,
            time=t,
            task_ref=run.task_ref(node),
            session_id=session,
            platform_worker_id=worker,
            fingerprint=fingerprint or f"fp-{worker}",
            country=country,
            trust=trust,
        )
    )


def judgment(run, session: str, node: str, unit: str, t, answer="yes", secs=10.0):
    return run.handle_event(
        AdapterEvent(
            kind=AdapterEventKind.JUDGMENT_SUBMITTED,
            time=t,
            task_ref=run.task_ref(node),
            session_id=session,
            platform_worker_id="",
            unit_id=unit,
            answer=answer,
            decision_time_seconds=secs,
        )
    )


def kinds(events):
    return [e.kind for e in events]


class TestDeploy:
    def test_figure_workflow_creates_stage_zero_only(self, pair_workflow):
        run, events, commands = deploy(pair_workflow)
        creates = [c for c in commands if c.kind is CommandKind.CREATE_TASK]
        assert {c.target.split("/")[1] for c in creates} == {"classify_hl", "classify_plain"}
        assert run.lifecycle.state is RunState.DEPLOYED
        assert events[0].kind is EventKind.DEPLOYED

    def test_cyclic_workflow_refused(self):
        wf = make_workflow(["a", "b"], [("a", "b"), ("b", "a")])
        with pytest.raises(DeployError) as err:
            deploy(wf)
        assert any(v.code == "CYCLE" for v in err.value.violations)

    def test_infeasible_quota_refused(self):
        wf = make_workflow(["a"], [], n_units=50, k=1)
        with pytest.raises(QuotaError, match="infeasible"):
            deploy(wf, quota=QuotaSpec("country", 0.01, "t"))

    def test_source_lambda_routes_units(self):
        wf = make_workflow(["a"], [], n_units=4)
        run, _, _ = deploy(wf)
        assert sorted(run.node_states["a"].pool) == ["u0", "u1", "u2", "u3"]


class TestAdmissionPipeline:
    def test_happy_path_admits_and_assigns(self):
        wf = make_workflow(["a"], [], n_units=3)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        events, commands = arrival(run, "w1", "a", T0 + timedelta(minutes=1), "s1")
        assert kinds(events) == [EventKind.WORKER_ARRIVAL, EventKind.ADMITTED, EventKind.UNIT_ASSIGNED]
        assert commands[0].kind is CommandKind.ASSIGN_UNIT

    def test_arrival_during_closed_window_denied(self):
        wf = make_workflow(["a"], [])
        sched = Schedule(windows=(Window(T0 + timedelta(hours=9), T0 + timedelta(hours=12)),))
        run, _, _ = deploy(wf, schedule=sched)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0 + timedelta(hours=9))
        # pause the run as its window closes, then a straggler arrives
        run.handle_event(AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(hours=12)))
        events, commands = arrival(run, "w1", "a", T0 + timedelta(hours=13), "s1")
        denied = [e for e in events if e.kind is EventKind.DENIED]
        assert denied and denied[0].payload["reason"] == "SCHEDULE_CLOSED"
        assert commands[0].kind is CommandKind.REJECT_WORKER

    def test_denied_names_first_failing_gate(self):
        from crowdflow.model import PopulationFilter
        import dataclasses

        wf = make_workflow(["a"], [], n_units=3)
        node = dataclasses.replace(wf.nodes[0], population_filter=PopulationFilter(frozenset({"US"}), 0.0))
        wf = dataclasses.replace(wf, nodes=(node,))
        run, _, _ = deploy(wf, policy=EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.DENY_ALL_RETURNING))
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        # fails population filter AND would fail returning rules later; the
        # first gate in the fixed order must be named
        events, _ = arrival(run, "w1", "a", T0 + timedelta(minutes=1), "s1", country="VE")
        denied = [e for e in events if e.kind is EventKind.DENIED]
        assert denied[0].payload["reason"] == "DENY_POPULATION_FILTER"

    def test_crossover_denied_end_to_end(self):
        wf = make_workflow(["a", "b"], [], groups=["g1", "g2"], node_groups={"a": "g1", "b": "g2"}, n_units=2)
        import dataclasses
        from crowdflow.model import SOURCE, Edge, LambdaSpec

        wf = dataclasses.replace(
            wf,
            edges=(
                Edge(SOURCE, "a", LambdaSpec("pass_through")),
                Edge(SOURCE, "b", LambdaSpec("pass_through")),
            ),
        )
        run, _, _ = deploy(wf, policy=EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.ALLOW_SAME_GROUP))
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        evs, cmds = arrival(run, "w1", "a", t, "s1")
        unit = [e for e in evs if e.kind is EventKind.UNIT_ASSIGNED][0].payload["unit_id"]
        judgment(run, "s1", "a", unit, t + timedelta(seconds=30))
        evs, _ = arrival(run, "w1", "b", t + timedelta(minutes=5), "s2")
        denied = [e for e in evs if e.kind is EventKind.DENIED]
        assert denied and denied[0].payload["reason"] == "DENY_CROSSOVER"

    def test_quota_denial(self):
        wf = make_workflow(["a"], [], n_units=10, k=1)
        run, _, _ = deploy(wf, quota=QuotaSpec("country", 0.2, "t"))  # cap 2
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        evs, cmds = arrival(run, "w0", "a", t, "s0")
        # one session judges its way to the cap, then the cap bites mid-session
        for step in range(2):
            unit = cmds[0].unit_id
            t += timedelta(seconds=20)
            evs, cmds = judgment(run, "s0", "a", unit, t)
        denied = [e for e in evs if e.kind is EventKind.DENIED]
        assert denied and denied[0].payload["reason"] == "DENY_QUOTA"
        assert any(c.kind is CommandKind.REJECT_WORKER for c in cmds)
        # and a fresh arrival from the same country is denied at the gate
        evs, _ = arrival(run, "w9", "a", t + timedelta(minutes=5), "s9")
        denied = [e for e in evs if e.kind is EventKind.DENIED]
        assert denied and denied[0].payload["reason"] == "DENY_QUOTA"
        # a different country still gets in
        evs, _ = arrival(run, "w5", "a", t + timedelta(minutes=6), "s5", country="EG")
        assert EventKind.ADMITTED in kinds(evs)


class TestAssignment:
    def test_prefers_least_judged(self):
        wf = make_workflow(["a"], [], n_units=3, k=2)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        ns = run.node_states["a"]
        ns.committed["u0"] = 1  # {u0: 1, u1: 0, u2: 0}
        picked = run._pick_unit(ns, "wX")
        assert picked in ("u1", "u2")

    def test_none_when_worker_exhausted(self):
        wf = make_workflow(["a"], [], n_units=2, k=2)
        run, _, _ = deploy(wf)
        ns = run.node_states["a"]
        ns.judged_by = {"u0": {"w"}, "u1": {"w"}}
        assert run._pick_unit(ns, "w") is None

    def test_fixed_seed_fixed_state_identical_choice(self):
        wf = make_workflow(["a"], [], n_units=5, k=1)
        run1, _, _ = deploy(wf, seed=9)
        run2, _, _ = deploy(wf, seed=9)
        assert run1._pick_unit(run1.node_states["a"], "w") == run2._pick_unit(run2.node_states["a"], "w")

    def test_no_worker_judges_same_unit_twice_and_k_distinct(self):
        _, log = execute(
            chain_workflow(n_tasks=2, n_groups=1, n_units=8, k=3),
            OPEN,
            seed=3,
            run_id="dup-check",
        )
        seen: dict[tuple[str, str], set[str]] = {}
        for ev in log:
            if ev.kind is EventKind.JUDGMENT:
                key = (ev.payload["node_id"], ev.payload["unit_id"])
                workers = seen.setdefault(key, set())
                assert ev.payload["worker"] not in workers, "same worker judged a unit twice"
                workers.add(ev.payload["worker"])
        for workers in seen.values():
            assert len(workers) == 3  # k distinct workers per unit


class TestEndToEnd:
    def test_hand_traced_single_node_run(self):
        """3 units, k=1, one worker session: arrival, three judgments, then
        completion with the implicit sink pass-through."""
        wf = make_workflow(["a"], [], n_units=3, k=1)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        evs, cmds = arrival(run, "w1", "a", t, "s1")
        done_units = []
        for step in range(3):
            unit = cmds[0].unit_id
            done_units.append(unit)
            t += timedelta(seconds=30)
            evs, cmds = judgment(run, "s1", "a", unit, t)
            if step < 2:
                assert any(e.kind is EventKind.UNIT_ASSIGNED for e in evs)
                assert cmds[0].kind is CommandKind.ASSIGN_UNIT
        assert sorted(done_units) == ["u0", "u1", "u2"]
        assert run.lifecycle.state is RunState.COMPLETED
        assert [e.kind for e in evs] == [
            EventKind.JUDGMENT,
            EventKind.LAMBDA_APPLIED,
            EventKind.RUN_COMPLETED,
        ] or EventKind.RUN_COMPLETED in [e.kind for e in evs]
        out = run.outputs["a->$sink[pass_through]"]
        assert len(out[0]["items"]) == 3

    def test_stage_advance_then_completion(self):
        """Two chained nodes: closing the first spawns the second, closing
        the second completes the run."""
        wf = make_workflow(["a", "b"], [("a", "b")], n_units=1, k=1)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        _, cmds = arrival(run, "w1", "a", t, "s1")
        evs, cmds = judgment(run, "s1", "a", cmds[0].unit_id, t + timedelta(seconds=9))
        assert EventKind.STAGE_ADVANCED in kinds(evs)
        assert any(
            c.kind is CommandKind.CREATE_TASK and c.target.endswith("/b") for c in cmds
        )
        assert any(c.kind is CommandKind.LAUNCH for c in cmds)
        assert not run.node_states["b"].closed
        t += timedelta(minutes=2)
        _, cmds = arrival(run, "w2", "b", t, "s2")
        evs, _ = judgment(run, "s2", "b", cmds[0].unit_id, t + timedelta(seconds=8))
        assert run.lifecycle.state is RunState.COMPLETED

    def test_events_after_terminal_warn(self):
        wf = make_workflow(["a"], [], n_units=1, k=1)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        _, cmds = arrival(run, "w1", "a", T0 + timedelta(minutes=1), "s1")
        judgment(run, "s1", "a", cmds[0].unit_id, T0 + timedelta(minutes=2))
        assert run.lifecycle.terminal
        evs, cmds = arrival(run, "w2", "a", T0 + timedelta(minutes=3), "s2")
        assert kinds(evs) == [EventKind.WARNING]
        assert not cmds


class TestWithinSubjects:
    def test_within_subjects_run_spans_groups_without_repeats(self):
        """End to end: within-subjects admits returns into new groups only;
        no worker's judgments repeat a group."""
        wf = chain_workflow(n_tasks=3, n_groups=3, n_units=10, k=2, workflow_id="within")
        policy = EligibilityPolicy(Design.WITHIN_SUBJECTS, ReturningRule.ALLOW_SAME_GROUP)
        run, log = execute(wf, policy, seed=8, run_id="within")
        assert run.lifecycle.state is RunState.COMPLETED
        groups_of: dict[str, list[str]] = {}
        for ev in log:
            if ev.kind is EventKind.JUDGMENT:
                seen = groups_of.setdefault(ev.payload["worker"], [])
                if not seen or seen[-1] != ev.payload["group_id"]:
                    seen.append(ev.payload["group_id"])
        for worker, order in groups_of.items():
            assert len(order) == len(set(order)), (worker, order)

    def test_between_subjects_single_group_per_worker(self):
        wf = chain_workflow(n_tasks=4, n_groups=2, n_units=8, k=2, workflow_id="bs")
        policy = EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.ALLOW_SAME_GROUP)
        _, log = execute(wf, policy, seed=8, run_id="bs")
        by_worker: dict[str, set[str]] = {}
        for ev in log:
            if ev.kind is EventKind.JUDGMENT:
                by_worker.setdefault(ev.payload["worker"], set()).add(ev.payload["group_id"])
        assert by_worker and all(len(gs) == 1 for gs in by_worker.values())

    def test_deny_all_returning_single_node_single_session(self):
        wf = chain_workflow(n_tasks=2, n_groups=1, n_units=8, k=2, workflow_id="dar")
        policy = EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.DENY_ALL_RETURNING)
        _, log = execute(wf, policy, seed=8, run_id="dar")
        sessions: dict[str, set[str]] = {}
        nodes: dict[str, set[str]] = {}
        for ev in log:
            if ev.kind is EventKind.JUDGMENT:
                w = ev.payload["worker"]
                sessions.setdefault(w, set()).add(ev.payload["session_id"])
                nodes.setdefault(w, set()).add(ev.payload["node_id"])
        assert all(len(s) == 1 for s in sessions.values()), "one contiguous session each"
        assert all(len(n) == 1 for n in nodes.values())


class TestReplay:
    def test_empty_log_after_deploy(self, pair_workflow):
        run, events, _ = deploy(pair_workflow)
        replayed = Run.replay(list(run.log))
        assert replayed.lifecycle.state is RunState.DEPLOYED
        assert replayed.state_hash() == run.state_hash()

    def test_full_run_replay_hash_equality(self):
        run, log = execute(
            chain_workflow(n_tasks=2, n_groups=1, n_units=6, k=2), OPEN, seed=5, run_id="rp"
        )
        replayed = Run.replay(list(log))
        assert replayed.state_hash() == run.state_hash()
        assert replayed.outputs == run.outputs

    def test_prefix_replay_matches_live_intermediate_state(self):
        """Every strict prefix of the log replays to a consistent
        intermediate state (spot-check hashes at several cut points by
        replaying the prefix twice)."""
        run, log = execute(
            chain_workflow(n_tasks=2, n_groups=1, n_units=4, k=1), OPEN, seed=5, run_id="pp"
        )
        for cut in (1, len(log) // 3, len(log) // 2, len(log) - 1):
            a = Run.replay(list(log[:cut]))
            b = Run.replay(list(log[:cut]))
            assert a.state_hash() == b.state_hash()
            assert len(a.log) == cut

    def test_gap_detection(self):
        run, log = execute(
            chain_workflow(n_tasks=1, n_groups=1, n_units=2, k=1), OPEN, seed=5, run_id="gap"
        )
        broken = [log[0]] + list(log[2:])
        with pytest.raises(ValueError, match="gap"):
            Run.replay(broken)

    def test_determinism_byte_identical_logs(self):
        wf = chain_workflow(n_tasks=2, n_groups=2, n_units=10, k=1)
        _, log1 = execute(wf, OPEN, seed=11, run_id="same")
        _, log2 = execute(wf, OPEN, seed=11, run_id="same")
        assert encode_log(log1) == encode_log(log2)
        _, log3 = execute(wf, OPEN, seed=12, run_id="same")
        assert encode_log(log1) != encode_log(log3)

    def test_log_encode_decode_roundtrip(self):
        _, log = execute(
            chain_workflow(n_tasks=1, n_groups=1, n_units=3, k=1), OPEN, seed=2, run_id="rt"
        )
        text = encode_log(log)
        assert decode_log(text) == list(log)


class TestScheduleIntegration:
    def test_schedule_pause_and_resume_commands(self):
        wf = make_workflow(["a"], [], n_units=3)
        sched = Schedule(windows=(
            Window(T0, T0 + timedelta(hours=2)),
            Window(T0 + timedelta(hours=4), T0 + timedelta(hours=6)),
        ))
        run, _, _ = deploy(wf, schedule=sched)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        evs, cmds = run.handle_event(
            AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(hours=2))
        )
        assert run.lifecycle.state is RunState.PAUSED
        assert run.lifecycle.last_cause() is Cause.SCHEDULE
        assert any(c.kind is CommandKind.PAUSE for c in cmds)
        evs, cmds = run.handle_event(
            AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(hours=4))
        )
        assert run.lifecycle.state is RunState.RUNNING
        assert any(c.kind is CommandKind.RESUME for c in cmds)

    def test_manual_pause_not_auto_resumed(self):
        wf = make_workflow(["a"], [])
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        run.apply_action(Action.PAUSE, Cause.MANUAL, T0 + timedelta(minutes=5))
        run.handle_event(AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(minutes=10)))
        assert run.lifecycle.state is RunState.PAUSED

    def test_grace_judgment_tagged(self):
        wf = make_workflow(["a"], [], n_units=2, k=1)
        sched = Schedule(windows=(Window(T0, T0 + timedelta(hours=1)),))
        run, _, _ = deploy(wf, schedule=sched)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=58)
        _, cmds = arrival(run, "w1", "a", t, "s1")
        run.handle_event(AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(hours=1)))
        # submitted 5 minutes after close: inside the 10-minute grace
        evs, _ = judgment(run, "s1", "a", cmds[0].unit_id, T0 + timedelta(hours=1, minutes=5))
        j = [e for e in evs if e.kind is EventKind.JUDGMENT]
        assert j and j[0].payload["grace"] is True

    def test_judgment_past_grace_rejected(self):
        wf = make_workflow(["a"], [], n_units=2, k=1)
        sched = Schedule(windows=(Window(T0, T0 + timedelta(hours=1)),))
        run, _, _ = deploy(wf, schedule=sched)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=58)
        _, cmds = arrival(run, "w1", "a", t, "s1")
        run.handle_event(AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(hours=1)))
        evs, cmds2 = judgment(run, "s1", "a", cmds[0].unit_id, T0 + timedelta(hours=1, minutes=20))
        assert not any(e.kind is EventKind.JUDGMENT for e in evs)
        assert any(e.kind is EventKind.WARNING for e in evs)
        assert run.node_states["a"].committed.get(cmds[0].unit_id, 0) == 0


class TestSessionLifecycle:
    def test_abandonment_releases_assignment(self):
        wf = make_workflow(["a"], [], n_units=2, k=1)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        arrival(run, "w1", "a", t, "s1")
        assert run.sessions["s1"].unit_id is not None
        evs, _ = run.handle_event(
            AdapterEvent(
                kind=AdapterEventKind.WORKER_ABANDONED,
                time=t + timedelta(minutes=2),
                task_ref=run.task_ref("a"),
                session_id="s1",
            )
        )
        assert kinds(evs) == [EventKind.RESERVATION_EXPIRED]
        assert "s1" not in run.sessions
        assert sum(run.node_states["a"].outstanding.values()) == 0

    def test_stale_session_expires_on_tick(self):
        wf = make_workflow(["a"], [], n_units=2, k=1)
        run, _, _ = deploy(wf, quota=QuotaSpec("country", 1.0, "t", ttl_minutes=30))
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        arrival(run, "w1", "a", T0 + timedelta(minutes=1), "s1")
        evs, cmds = run.handle_event(
            AdapterEvent(kind=AdapterEventKind.CLOCK_TICK, time=T0 + timedelta(minutes=40))
        )
        expired = [e for e in evs if e.kind is EventKind.RESERVATION_EXPIRED]
        assert expired and expired[0].payload["sessions"] == ["s1"]
        assert any(c.kind is CommandKind.REJECT_WORKER for c in cmds)
        # slot is free again
        evs, _ = arrival(run, "w2", "a", T0 + timedelta(minutes=41), "s2")
        assert EventKind.ADMITTED in kinds(evs)

    def test_identity_merge_logged_as_warning(self):
        wf = make_workflow(["a"], [], n_units=4, k=2)
        run, _, _ = deploy(wf)
        run.apply_action(Action.LAUNCH, Cause.MANUAL, T0)
        t = T0 + timedelta(minutes=1)
        arrival(run, "w1", "a", t, "s1", fingerprint="fpA")
        t += timedelta(minutes=1)
        arrival(run, "w2", "a", t, "s2", fingerprint="fpB")
        t += timedelta(minutes=1)
        # platform id w1 + fingerprint fpB: conflicting records merge
        evs, _ = arrival(run, "w1", "a", t, "s3", fingerprint="fpB")
        warns = [e for e in evs if e.kind is EventKind.WARNING]
        assert warns and warns[0].payload["code"] == "IDENTITY_MERGE"
