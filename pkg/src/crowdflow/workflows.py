"""Workflow document parsing, canonical serialization, validation, and
stage ordering.

The on-disk format is a UTF-8 JSON document with top-level keys
``workflow_id, groups[], nodes[], edges[], input_units[]``. Edges are
``{from, to, lambda: {name, params}}`` and may use the reserved endpoints
``"$source"`` / ``"$sink"``. Canonical form: keys sorted lexicographically,
arrays in declaration order, 2-space indentation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .lambdas import validate_lambda_params
from .model import (
    LAMBDA_NAMES,
    SINK,
    SOURCE,
    DataUnit,
    Edge,
    ExperimentGroup,
    LambdaSpec,
    PopulationFilter,
    Question,
    TaskNode,
    Workflow,
)


class WorkflowParseError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at char {position})")
        self.message = message
        self.position = position


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}({self.element}): {self.message}"


# Violation codes, all reachable by targeted fixtures (see tests).
VIOLATION_CODES = (
    "EMPTY_WORKFLOW",
    "DUPLICATE_NODE_ID",
    "DUPLICATE_GROUP_ID",
    "DUPLICATE_UNIT_ID",
    "UNKNOWN_GROUP",
    "UNKNOWN_NODE",
    "BAD_ENDPOINT",
    "BAD_JUDGMENTS_PER_UNIT",
    "EMPTY_ANSWER_OPTIONS",
    "GOLD_WITHOUT_ANSWER",
    "BAD_LAMBDA_PARAMS",
    "BAD_POPULATION_FILTER",
    "NEGATIVE_REWARD",
    "CYCLE",
    "UNREACHABLE",
)


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise WorkflowParseError(f"missing required field {key!r} in {ctx}")
    return obj[key]


def parse_workflow(text: str) -> Workflow:
    """Parse a workflow document; total over the documented grammar.

    Raises WorkflowParseError on syntax errors (with position), unknown
    combinator names, missing required fields, duplicate ids, and dangling
    references.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorkflowParseError(f"syntax error: {e.msg}", e.pos) from e
    if not isinstance(doc, dict):
        raise WorkflowParseError("workflow document must be a JSON object")

    workflow_id = _require(doc, "workflow_id", "document")

    groups = []
    seen_groups: set[str] = set()
    for i, g in enumerate(doc.get("groups", [])):
        gid = _require(g, "group_id", f"groups[{i}]")
        if gid in seen_groups:
            raise WorkflowParseError(f"duplicate group_id {gid!r}")
        seen_groups.add(gid)
        groups.append(ExperimentGroup(gid, _require(g, "label", f"groups[{i}]"), g.get("color")))

    nodes = []
    seen_nodes: set[str] = set()
    for i, n in enumerate(doc.get("nodes", [])):
        nid = _require(n, "node_id", f"nodes[{i}]")
        if nid in seen_nodes:
            raise WorkflowParseError(f"duplicate node_id {nid!r}")
        seen_nodes.add(nid)
        questions = tuple(
            Question(_require(q, "question_id", f"{nid}.question_schema"),
                     tuple(_require(q, "options", f"{nid}.question_schema")))
            for q in _require(n, "question_schema", f"nodes[{i}]")
        )
        pf = None
        if n.get("population_filter") is not None:
            raw = n["population_filter"]
            countries = raw.get("countries")
            pf = PopulationFilter(
                countries=frozenset(countries) if countries is not None else None,
                min_trust=float(raw.get("min_trust", 0.0)),
            )
        nodes.append(
            TaskNode(
                node_id=nid,
                title=_require(n, "title", f"nodes[{i}]"),
                instructions=_require(n, "instructions", f"nodes[{i}]"),
                question_schema=questions,
                judgments_per_unit=int(_require(n, "judgments_per_unit", f"nodes[{i}]")),
                group_id=_require(n, "group_id", f"nodes[{i}]"),
                population_filter=pf,
                reward_per_judgment=float(n.get("reward_per_judgment", 0.0)),
            )
        )
    if not nodes:
        raise WorkflowParseError("workflow must contain at least one task node")

    edges = []
    for i, e in enumerate(doc.get("edges", [])):
        lam = _require(e, "lambda", f"edges[{i}]")
        name = _require(lam, "name", f"edges[{i}].lambda")
        if name not in LAMBDA_NAMES:
            raise WorkflowParseError(f"unknown combinator {name!r} in edges[{i}]")
        src = _require(e, "from", f"edges[{i}]")
        dst = _require(e, "to", f"edges[{i}]")
        for endpoint in (src, dst):
            if endpoint not in (SOURCE, SINK) and endpoint not in seen_nodes:
                raise WorkflowParseError(f"edge endpoint {endpoint!r} is not a defined node")
        edges.append(Edge(src, dst, LambdaSpec(name, dict(lam.get("params", {})))))

    units = []
    seen_units: set[str] = set()
    for i, u in enumerate(doc.get("input_units", [])):
        uid = _require(u, "unit_id", f"input_units[{i}]")
        if uid in seen_units:
            raise WorkflowParseError(f"duplicate unit_id {uid!r}")
        seen_units.add(uid)
        units.append(
            DataUnit(
                unit_id=uid,
                payload=dict(u.get("payload", {})),
                gold_answer=u.get("gold_answer"),
                provenance=tuple((p[0], p[1]) for p in u.get("provenance", [])),
            )
        )

    return Workflow(
        workflow_id=workflow_id,
        nodes=tuple(nodes),
        edges=tuple(edges),
        groups=tuple(groups),
        input_units=tuple(units),
    )


def workflow_to_doc(w: Workflow) -> dict:
    """Model -> plain document dict (the JSON shape)."""
    doc: dict = {
        "workflow_id": w.workflow_id,
        "groups": [
            {"group_id": g.group_id, "label": g.label}
            | ({"color": g.color} if g.color is not None else {})
            for g in w.groups
        ],
        "nodes": [],
        "edges": [
            {"from": e.source, "to": e.target,
             "lambda": {"name": e.fn.name, "params": dict(e.fn.params)}}
            for e in w.edges
        ],
        "input_units": [],
    }
    for n in w.nodes:
        nd: dict = {
            "node_id": n.node_id,
            "title": n.title,
            "instructions": n.instructions,
            "question_schema": [
                {"question_id": q.question_id, "options": list(q.options)}
                for q in n.question_schema
            ],
            "judgments_per_unit": n.judgments_per_unit,
            "group_id": n.group_id,
            "reward_per_judgment": n.reward_per_judgment,
        }
        if n.population_filter is not None:
            pf: dict = {"min_trust": n.population_filter.min_trust}
            if n.population_filter.countries is not None:
                pf["countries"] = sorted(n.population_filter.countries)
            nd["population_filter"] = pf
        doc["nodes"].append(nd)
    for u in w.input_units:
        ud: dict = {"unit_id": u.unit_id, "payload": dict(u.payload)}
        if u.gold_answer is not None:
            ud["gold_answer"] = u.gold_answer
        if u.provenance:
            ud["provenance"] = [list(p) for p in u.provenance]
        doc["input_units"].append(ud)
    return doc


def serialize(w: Workflow) -> str:
    """Canonical document text: sorted keys, declaration-order arrays,
    2-space indent. parse(serialize(w)) is structurally identical to w and
    serialize is a fixpoint over parse."""
    return json.dumps(workflow_to_doc(w), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _adjacency(w: Workflow) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {n.node_id: [] for n in w.nodes}
    for e in w.edges:
        if e.source in adj and e.target in adj:
            adj[e.source].append(e.target)
    return adj


def _find_cycle(adj: dict[str, list[str]]) -> list[str] | None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in adj}
    stack: list[str] = []

    def dfs(n: str) -> list[str] | None:
        color[n] = GRAY
        stack.append(n)
        for m in adj[n]:
            if color[m] == GRAY:
                return stack[stack.index(m):]
            if color[m] == WHITE:
                found = dfs(m)
                if found:
                    return found
        stack.pop()
        color[n] = BLACK
        return None

    for n in adj:
        if color[n] == WHITE:
            found = dfs(n)
            if found:
                return found
    return None


def validate(w: Workflow) -> list[Violation]:
    """Structural validation; empty list iff all workflow invariants hold."""
    out: list[Violation] = []
    if not w.nodes:
        out.append(Violation("EMPTY_WORKFLOW", w.workflow_id,
                             "workflow must contain at least one task node"))
        return out

    node_ids = [n.node_id for n in w.nodes]
    group_ids = [g.group_id for g in w.groups]
    for dup in sorted({x for x in node_ids if node_ids.count(x) > 1}):
        out.append(Violation("DUPLICATE_NODE_ID", dup, "node_id declared more than once"))
    for dup in sorted({x for x in group_ids if group_ids.count(x) > 1}):
        out.append(Violation("DUPLICATE_GROUP_ID", dup, "group_id declared more than once"))
    unit_ids = [u.unit_id for u in w.input_units]
    for dup in sorted({x for x in unit_ids if unit_ids.count(x) > 1}):
        out.append(Violation("DUPLICATE_UNIT_ID", dup, "unit_id declared more than once"))

    known_groups = set(group_ids)
    for n in w.nodes:
        if n.group_id not in known_groups:
            out.append(Violation("UNKNOWN_GROUP", n.group_id,
                                 f"node {n.node_id!r} references missing group"))
        if n.judgments_per_unit < 1:
            out.append(Violation("BAD_JUDGMENTS_PER_UNIT", n.node_id,
                                 "judgments_per_unit must be >= 1"))
        if not n.question_schema or any(not q.options for q in n.question_schema):
            out.append(Violation("EMPTY_ANSWER_OPTIONS", n.node_id,
                                 "every question needs a non-empty option list"))
        if n.population_filter is not None and not (0.0 <= n.population_filter.min_trust <= 1.0):
            out.append(Violation("BAD_POPULATION_FILTER", n.node_id,
                                 "min_trust must lie in [0, 1]"))
        if n.reward_per_judgment < 0:
            out.append(Violation("NEGATIVE_REWARD", n.node_id,
                                 "reward_per_judgment must be nonnegative"))

    for u in w.input_units:
        if u.gold_answer is not None and not u.gold_answer:
            out.append(Violation("GOLD_WITHOUT_ANSWER", u.unit_id,
                                 "gold unit carries an empty gold_answer"))

    known_nodes = set(node_ids)
    for e in w.edges:
        if e.source == SINK or e.target == SOURCE:
            out.append(Violation("BAD_ENDPOINT", f"{e.source}->{e.target}",
                                 "edges may not leave $sink or enter $source"))
        for endpoint in (e.source, e.target):
            if endpoint not in (SOURCE, SINK) and endpoint not in known_nodes:
                out.append(Violation("UNKNOWN_NODE", endpoint,
                                     "edge endpoint is not a defined node"))
        bad = validate_lambda_params(e.fn)
        if bad:
            out.append(Violation("BAD_LAMBDA_PARAMS", f"{e.source}->{e.target}", bad))

    adj = _adjacency(w)
    cycle = _find_cycle(adj)
    if cycle:
        out.append(Violation("CYCLE", ",".join(cycle),
                             "workflow graph must be acyclic"))
        return out  # reachability is ill-defined with a cycle present

    reachable = set()
    frontier = [e.target for e in w.edges if e.source == SOURCE and e.target in known_nodes]
    while frontier:
        n = frontier.pop()
        if n in reachable:
            continue
        reachable.add(n)
        frontier.extend(adj.get(n, []))
    for nid in node_ids:
        if nid not in reachable:
            out.append(Violation("UNREACHABLE", nid, "node is not reachable from $source"))
    return out


def topological_stages(w: Workflow) -> list[set[str]]:
    """Longest-path levels from SOURCE; nodes within a stage are mutually
    independent and every edge crosses to a strictly later stage."""
    adj = _adjacency(w)
    if _find_cycle(adj):
        raise ValueError("workflow graph contains a cycle")

    preds: dict[str, list[str]] = {n: [] for n in adj}
    for src, targets in adj.items():
        for t in targets:
            preds[t].append(src)

    level: dict[str, int] = {}

    def compute(n: str) -> int:
        if n in level:
            return level[n]
        ps = preds[n]
        lv = 0 if not ps else 1 + max(compute(p) for p in ps)
        level[n] = lv
        return lv

    for n in adj:
        compute(n)
    if not level:
        return []
    stages: list[set[str]] = [set() for _ in range(max(level.values()) + 1)]
    for n, lv in level.items():
        stages[lv].add(n)
    return stages
