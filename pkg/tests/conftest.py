from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

import pytest

from crowdflow.events import EventKind, RunEvent
from crowdflow.model import (
    SOURCE,
    DataUnit,
    Edge,
    ExperimentGroup,
    LambdaSpec,
    Question,
    TaskNode,
    Workflow,
)
from crowdflow.workflows import serialize

T0 = datetime(2021, 3, 1, tzinfo=timezone.utc)


def make_node(node_id: str, group_id: str = "g1", k: int = 1, **kw) -> TaskNode:
    defaults = dict(
        title=f"task {node_id}",
        instructions="judge it",
        question_schema=(Question("q", ("yes", "no")),),
        judgments_per_unit=k,
        group_id=group_id,
    )
    defaults.update(kw)
    return TaskNode(node_id=node_id, **defaults)


def make_workflow(
    node_ids: list[str],
    edge_pairs: list[tuple[str, str]],
    groups: list[str] | None = None,
    n_units: int = 4,
    k: int = 1,
    node_groups: dict[str, str] | None = None,
) -> Workflow:
    groups = groups or ["g1"]
    node_groups = node_groups or {}
    nodes = tuple(
        make_node(nid, node_groups.get(nid, groups[0]), k=k) for nid in node_ids
    )
    edges = [Edge(SOURCE, node_ids[0], LambdaSpec("pass_through"))] if node_ids else []
    edges += [Edge(a, b, LambdaSpec("pass_through")) for a, b in edge_pairs]
    units = tuple(DataUnit(f"u{i}", {"x": i}) for i in range(n_units))
    return Workflow(
        workflow_id="wf-test",
        nodes=nodes,
        edges=tuple(edges),
        groups=tuple(ExperimentGroup(g, g) for g in groups),
        input_units=units,
    )


def random_workflow(rng: random.Random) -> Workflow:
    """Structurally valid random workflow for round-trip/validation tests."""
    n_nodes = rng.randint(1, 7)
    n_groups = rng.randint(1, min(3, n_nodes))
    groups = tuple(
        ExperimentGroup(f"g{i}", f"condition {i}", color=rng.choice([None, "#aabbcc"]))
        for i in range(n_groups)
    )
    nodes = []
    for i in range(n_nodes):
        questions = tuple(
            Question(f"q{j}", tuple(f"opt{o}" for o in range(rng.randint(2, 4))))
            for j in range(rng.randint(1, 2))
        )
        pf = None
        if rng.random() < 0.3:
            from crowdflow.model import PopulationFilter

            pf = PopulationFilter(
                countries=frozenset(rng.sample(["VE", "EG", "UA", "US"], rng.randint(1, 3))),
                min_trust=round(rng.uniform(0, 1), 2),
            )
        nodes.append(
            TaskNode(
                node_id=f"n{i}",
                title=f"title {i} — café",
                instructions=f"instr {i}",
                question_schema=questions,
                judgments_per_unit=rng.randint(1, 5),
                group_id=groups[rng.randrange(n_groups)].group_id,
                population_filter=pf,
                reward_per_judgment=round(rng.uniform(0, 0.5), 3),
            )
        )
    lambdas = [
        LambdaSpec("pass_through"),
        LambdaSpec("union"),
        LambdaSpec("balanced_split", {"n_outputs": rng.randint(1, 3)}),
        LambdaSpec("partition_by_key", {"key": "x"}),
        LambdaSpec("filter_by_field", {"key": "x", "accepted": ["0", "1"]}),
    ]
    edges = []
    # every node reachable: chain backbone + random skip edges (i -> j, i < j)
    for i, node in enumerate(nodes):
        src = SOURCE if i == 0 or rng.random() < 0.3 else f"n{rng.randrange(i)}"
        edges.append(Edge(src, node.node_id, rng.choice(lambdas)))
    for _ in range(rng.randint(0, 3)):
        i, j = sorted(rng.sample(range(n_nodes), 2)) if n_nodes > 1 else (0, 0)
        if i != j:
            edges.append(Edge(f"n{i}", f"n{j}", rng.choice(lambdas)))
    if rng.random() < 0.4:
        edges.append(Edge(nodes[-1].node_id, "$sink", rng.choice(lambdas)))
    units = tuple(
        DataUnit(
            f"u{i:02d}",
            {"x": rng.randint(0, 3), "note": f"nº{i}"},
            gold_answer="opt0" if rng.random() < 0.3 else None,
        )
        for i in range(rng.randint(1, 12))
    )
    return Workflow(
        workflow_id=f"wf-{rng.randint(0, 999)}",
        nodes=tuple(nodes),
        edges=tuple(edges),
        groups=groups,
        input_units=units,
    )


@pytest.fixture
def pair_workflow():
    from crowdflow.scenarios import paired_conditions_workflow

    return paired_conditions_workflow()


def synth_log(participations: list[tuple[str, str, str, float, str]],
              groups: dict[str, str], run_id: str = "synth",
              decision_time: float = 10.0) -> list[RunEvent]:
    """Fabricate a minimal but well-formed run log.

    participations: (worker_pid, node_id, answer, utc_hour, country) per
    judgment, in order. Workers resolve by platform id only.
    """
    node_ids = sorted(groups)
    wf = make_workflow(
        node_ids,
        [],
        groups=sorted(set(groups.values())),
        node_groups=groups,
        n_units=3,
    )
    # all nodes fed from source so validation passes
    wf = Workflow(
        workflow_id=wf.workflow_id,
        nodes=wf.nodes,
        edges=tuple(Edge(SOURCE, nid, LambdaSpec("pass_through")) for nid in node_ids),
        groups=wf.groups,
        input_units=wf.input_units,
    )
    events: list[RunEvent] = []

    def emit(kind: EventKind, t: datetime, payload: dict) -> None:
        events.append(RunEvent(seq=len(events), time=t, kind=kind, payload=payload))

    emit(
        EventKind.DEPLOYED,
        T0,
        {
            "run_id": run_id,
            "adapter": "sim",
            "seed": 0,
            "workflow": serialize(wf),
            "policy": {"design": "OPEN", "returning_rule": "ALLOW_SAME_GROUP"},
            "quota": None,
            "schedule": {},
        },
    )
    session = 0
    for worker, node_id, answer, hour, country in participations:
        session += 1
        sid = f"s{session:04d}"
        t = T0 + timedelta(hours=hour)
        emit(
            EventKind.WORKER_ARRIVAL,
            t,
            {
                "session_id": sid,
                "adapter": "sim",
                "platform_worker_id": worker,
                "fingerprint": f"fp-{worker}",
                "country": country,
                "trust": 0.9,
                "node_id": node_id,
            },
        )
        emit(
            EventKind.JUDGMENT,
            t,
            {
                "session_id": sid,
                "worker": worker,
                "node_id": node_id,
                "group_id": groups[node_id],
                "unit_id": "u0",
                "answer": answer,
                "decision_time_seconds": decision_time,
                "country": country,
                "grace": False,
            },
        )
    return events
