"""Core experiment-design types: data units, task nodes, groups, lambda
specs, and the workflow DAG itself.

Everything here is an immutable value; parsing, validation and execution
live in sibling modules.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

# Reserved pseudo-endpoints for workflow edges.
SOURCE = "$source"
SINK = "$sink"

# Sentinel answer emitted by majority_vote on a tie. Kept out of the normal
# answer namespace so it can never collide with a real option.
UNRESOLVED = "$unresolved"

Scalar = str | int | float | bool

LAMBDA_NAMES = (
    "pass_through",
    "union",
    "balanced_split",
    "partition_by_key",
    "filter_by_field",
    "majority_vote",
)


@dataclass(frozen=True)
class DataUnit:
    """One item of work to be judged, optionally with a known gold answer."""

    unit_id: str
    payload: dict[str, Scalar] = field(default_factory=dict)
    gold_answer: str | None = None
    provenance: tuple[tuple[str, str], ...] = ()  # (node_id, lambda_name) hops

    @property
    def is_gold(self) -> bool:
        return self.gold_answer is not None

    def with_hop(self, node_id: str, lambda_name: str) -> "DataUnit":
        return replace(self, provenance=self.provenance + ((node_id, lambda_name),))


@dataclass(frozen=True)
class Question:
    question_id: str
    options: tuple[str, ...]


@dataclass(frozen=True)
class PopulationFilter:
    """Per-node audience restriction: allowed countries and a trust floor."""

    countries: frozenset[str] | None = None
    min_trust: float = 0.0

    def admits(self, country: str, trust: float) -> bool:
        if self.countries is not None and country not in self.countries:
            return False
        return trust >= self.min_trust


@dataclass(frozen=True)
class TaskNode:
    node_id: str
    title: str
    instructions: str
    question_schema: tuple[Question, ...]
    judgments_per_unit: int
    group_id: str
    population_filter: PopulationFilter | None = None
    reward_per_judgment: float = 0.0

    @property
    def answer_options(self) -> tuple[str, ...]:
        """Options of the first (primary) question."""
        return self.question_schema[0].options if self.question_schema else ()


@dataclass(frozen=True)
class ExperimentGroup:
    group_id: str
    label: str
    color: str | None = None


@dataclass(frozen=True)
class LambdaSpec:
    name: str
    params: dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in LAMBDA_NAMES:
            raise ValueError(f"unknown combinator {self.name!r}")


@dataclass(frozen=True)
class Edge:
    source: str  # node_id or SOURCE
    target: str  # node_id or SINK
    fn: LambdaSpec


@dataclass(frozen=True)
class Workflow:
    workflow_id: str
    nodes: tuple[TaskNode, ...]
    edges: tuple[Edge, ...]
    groups: tuple[ExperimentGroup, ...]
    input_units: tuple[DataUnit, ...]

    def node(self, node_id: str) -> TaskNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def group(self, group_id: str) -> ExperimentGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.node_id for n in self.nodes)

    def out_edges(self, node_id: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.source == node_id)

    def in_edges(self, node_id: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.target == node_id)

    def total_judgment_target(self) -> int:
        """Planned judgments: sum over nodes of |units at node| x k.

        Unit pools downstream of stage 0 are only known at run time; for
        planning purposes every node is assumed to see the full input set,
        which is exact for pass-through/union routing (the common case) and
        an upper bound otherwise.
        """
        return sum(len(self.input_units) * n.judgments_per_unit for n in self.nodes)


# Items that flow along edges besides raw units: collected judgments for a
# unit, and the result of aggregating them.


@dataclass(frozen=True)
class JudgedUnit:
    unit: DataUnit
    answers: tuple[str, ...]


@dataclass(frozen=True)
class AggregatedAnswer:
    unit: DataUnit
    answer: str  # an option or UNRESOLVED
    votes: int
    total: int


FlowItem = DataUnit | JudgedUnit | AggregatedAnswer


def item_unit(item: FlowItem) -> DataUnit:
    return item if isinstance(item, DataUnit) else item.unit


def item_id(item: FlowItem) -> str:
    return item_unit(item).unit_id


def as_data_unit(item: FlowItem, via_node: str, via_lambda: str) -> DataUnit:
    """Convert any flow item into a plain unit a task node can present.

    Aggregated answers fold the winning vote into the payload so downstream
    tasks can reference it.
    """
    if isinstance(item, DataUnit):
        return item.with_hop(via_node, via_lambda)
    if isinstance(item, JudgedUnit):
        return item.unit.with_hop(via_node, via_lambda)
    merged = dict(item.unit.payload)
    merged["majority_answer"] = item.answer
    return replace(item.unit, payload=merged).with_hop(via_node, via_lambda)


@dataclass(frozen=True)
class LabeledCollection:
    label: str
    items: tuple[FlowItem, ...]
