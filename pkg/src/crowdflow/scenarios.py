"""Canned experiment scenarios at desk scale.

The uncontrolled scenario mirrors a field setup that ran sixteen task
variants back to back on a live marketplace: eight conditions, two
consecutive tasks per condition, every task judging the same unit set.
Under an OPEN policy it exhibits returning-worker, crossover, demographic
and time-of-day biases; the controlled variants switch on eligibility,
quotas, and time-sampled schedules to suppress them.
"""
from __future__ import annotations

from datetime import date, datetime, timedelta, timezone

from .adapters.simulator import CrowdModel, CrowdSim, default_crowd_model
from .eligibility import Design, EligibilityPolicy, ReturningRule
from .engine import Engine
from .events import RunEvent
from .model import (
    SOURCE,
    DataUnit,
    Edge,
    ExperimentGroup,
    LambdaSpec,
    Question,
    TaskNode,
    Workflow,
)
from .orchestrator import Run
from .population import QuotaSpec
from .scheduling import Schedule, Window

START = datetime(2021, 3, 1, 0, 0, tzinfo=timezone.utc)  # a Monday
ACCEPTANCE_SEED = 14  # frozen; all bias bands hold with margin here
ANSWER_OPTIONS = ("relevant", "not_relevant")
DOC_SIZES = ("S", "M", "L")


def make_units(n: int = 146, gold_every: int = 3, prefix: str = "u") -> tuple[DataUnit, ...]:
    """n classification units; every gold_every-th carries a gold answer."""
    units = []
    for i in range(n):
        gold = ANSWER_OPTIONS[i % 2] if gold_every and i % gold_every == 0 else None
        units.append(
            DataUnit(
                unit_id=f"{prefix}{i:03d}",
                payload={"text": f"passage {i:03d}", "doc_size": DOC_SIZES[i % 3]},
                gold_answer=gold,
            )
        )
    return tuple(units)


def _node(node_id: str, group_id: str, k: int, title: str) -> TaskNode:
    return TaskNode(
        node_id=node_id,
        title=title,
        instructions="Read the passage and judge its relevance to the topic.",
        question_schema=(Question("relevance", ANSWER_OPTIONS),),
        judgments_per_unit=k,
        group_id=group_id,
        reward_per_judgment=0.02,
    )


def group_labels(n_groups: int) -> tuple[str, ...]:
    return tuple(f"g{i + 1}" for i in range(n_groups))


def chain_workflow(
    n_tasks: int = 16,
    n_groups: int = 8,
    n_units: int = 146,
    k: int = 3,
    workflow_id: str = "uncontrolled-chain",
) -> Workflow:
    """Sequential chain of task variants in per-condition blocks; every
    node sees the full unit set via pass-through edges."""
    if n_tasks % n_groups:
        raise ValueError("n_tasks must be a multiple of n_groups")
    per_block = n_tasks // n_groups
    groups = tuple(
        ExperimentGroup(g, f"condition {g}", color=None) for g in group_labels(n_groups)
    )
    nodes = []
    for i in range(n_tasks):
        gid = groups[i // per_block].group_id
        nodes.append(_node(f"t{i + 1:02d}", gid, k, f"Relevance task {i + 1} ({gid})"))
    edges = [Edge(SOURCE, nodes[0].node_id, LambdaSpec("pass_through"))]
    for a, b in zip(nodes, nodes[1:]):
        edges.append(Edge(a.node_id, b.node_id, LambdaSpec("pass_through")))
    return Workflow(
        workflow_id=workflow_id,
        nodes=tuple(nodes),
        edges=tuple(edges),
        groups=groups,
        input_units=make_units(n_units),
    )


def parallel_workflow(
    n_groups: int = 8,
    n_units: int = 72,
    k: int = 1,
    workflow_id: str = "parallel-conditions",
) -> Workflow:
    """One node per condition, all open simultaneously over the same units."""
    groups = tuple(
        ExperimentGroup(g, f"condition {g}", color=None) for g in group_labels(n_groups)
    )
    nodes = tuple(
        _node(f"p{i + 1:02d}", g.group_id, k, f"Relevance task ({g.group_id})")
        for i, g in enumerate(groups)
    )
    edges = tuple(Edge(SOURCE, n.node_id, LambdaSpec("pass_through")) for n in nodes)
    return Workflow(
        workflow_id=workflow_id,
        nodes=nodes,
        edges=edges,
        groups=groups,
        input_units=make_units(n_units),
    )


def paired_conditions_workflow(workflow_id: str = "between-subjects-pair") -> Workflow:
    """Two parallel condition nodes feeding one aggregation node: the shape
    used throughout docs and UI tests (3 nodes, 4 edges, 2 groups)."""
    groups = (
        ExperimentGroup("hl", "with highlighting", color="#7bd389"),
        ExperimentGroup("plain", "no highlighting", color="#d3837b"),
    )
    a = _node("classify_hl", "hl", 3, "Classify (highlighted)")
    b = _node("classify_plain", "plain", 3, "Classify (plain)")
    c = _node("review", "hl", 1, "Review aggregated answers")
    edges = (
        Edge(SOURCE, a.node_id, LambdaSpec("pass_through")),
        Edge(SOURCE, b.node_id, LambdaSpec("pass_through")),
        Edge(a.node_id, c.node_id, LambdaSpec("majority_vote")),
        Edge(b.node_id, c.node_id, LambdaSpec("majority_vote")),
    )
    return Workflow(
        workflow_id=workflow_id,
        nodes=(a, b, c),
        edges=edges,
        groups=groups,
        input_units=make_units(12),
    )


def sampled_schedule(
    days: int = 14,
    start_hours: tuple[float, ...] = (13.0, 16.0, 19.0, 22.0),
    window_hours: float = 2.0,
) -> Schedule:
    """Interleaved time sampling: the same daily ladder of windows for every
    condition, repeated long enough that each condition samples every rung
    many times. A banded ladder keeps the local-hour distribution coherent
    enough for stable circular means at desk scale."""
    windows = []
    for d in range(days):
        for h in start_hours:
            start = START + timedelta(days=d, hours=h)
            windows.append(Window(start, start + timedelta(hours=window_hours)))
    return Schedule(windows=tuple(windows))


def scenario_model(n_groups: int = 8) -> CrowdModel:
    return default_crowd_model(groups=group_labels(n_groups))


def execute(
    workflow: Workflow,
    policy: EligibilityPolicy,
    seed: int,
    model: CrowdModel | None = None,
    quota: QuotaSpec | None = None,
    schedule: Schedule | None = None,
    run_id: str = "run",
    start: datetime = START,
    deadline_hours: float = 21 * 24,
) -> tuple[Run, list[RunEvent]]:
    """Deploy + launch + pump to completion against the simulator."""
    model = model or scenario_model(len(workflow.groups))
    schedule = schedule or Schedule()
    run, _, commands = Run.deploy(
        workflow, policy, quota, schedule, seed, run_id, start, adapter_name="sim"
    )
    sim = CrowdSim(model, start, seed)
    engine = Engine(run, sim, commands, deadline_hours=deadline_hours)
    engine.launch(start)
    engine.run_to_completion()
    return run, run.log


def uncontrolled_run(seed: int = ACCEPTANCE_SEED, **kwargs) -> tuple[Run, list[RunEvent]]:
    wf = chain_workflow()
    policy = EligibilityPolicy(Design.OPEN, ReturningRule.ALLOW_SAME_GROUP)
    return execute(wf, policy, seed, run_id="uncontrolled", **kwargs)


def between_subjects_run(seed: int = ACCEPTANCE_SEED, **kwargs) -> tuple[Run, list[RunEvent]]:
    wf = chain_workflow(workflow_id="controlled-chain")
    policy = EligibilityPolicy(Design.BETWEEN_SUBJECTS, ReturningRule.ALLOW_SAME_GROUP)
    return execute(wf, policy, seed, run_id="between", **kwargs)


def quota_capped_run(seed: int = ACCEPTANCE_SEED, cap: float = 0.15, **kwargs) -> tuple[Run, list[RunEvent]]:
    wf = chain_workflow(workflow_id="quota-chain")
    policy = EligibilityPolicy(Design.OPEN, ReturningRule.ALLOW_SAME_GROUP)
    quota = QuotaSpec(attribute="country", cap_fraction=cap, scope="quota")
    return execute(wf, policy, seed, quota=quota, run_id="quota", **kwargs)


def time_sampled_run(seed: int = ACCEPTANCE_SEED, **kwargs) -> tuple[Run, list[RunEvent]]:
    # Sized so the run spans two weeks of sampling windows; conditions run
    # in parallel, so every window contributes to every condition.
    wf = parallel_workflow(n_groups=4, n_units=900, k=3)
    policy = EligibilityPolicy(Design.OPEN, ReturningRule.ALLOW_SAME_GROUP)
    return execute(
        wf, policy, seed, schedule=sampled_schedule(), run_id="sampled", **kwargs
    )
