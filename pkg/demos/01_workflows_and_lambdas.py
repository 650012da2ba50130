"""
Workflow documents, validation, and edge combinators
====================================================

Build the classic two-conditions-plus-review experiment shape, round-trip
it through the canonical document format, and exercise the data-routing
combinators that live on edges.
"""
from crowdflow import (
    LambdaSpec,
    apply_lambda,
    parse_workflow,
    serialize,
    topological_stages,
    validate,
)
from crowdflow.model import DataUnit, JudgedUnit, LabeledCollection
from crowdflow.scenarios import paired_conditions_workflow

# Two parallel condition nodes feed one review node: 3 nodes, 4 edges,
# 2 experimental groups.
wf = paired_conditions_workflow()
print("nodes:", [n.node_id for n in wf.nodes])
print("groups:", [(g.group_id, g.label) for g in wf.groups])
print("violations:", validate(wf))

# Stages are longest-path levels: the two conditions run in parallel,
# the review node only opens once both close.
print("stages:", topological_stages(wf))

# The document format is canonical: parse . serialize is the identity and
# serialize is a fixpoint, so diffs stay meaningful under version control.
text = serialize(wf)
assert parse_workflow(text) == wf
assert serialize(parse_workflow(text)) == text
print("document is canonical,", len(text.splitlines()), "lines")

# Combinators route data between nodes. balanced_split deals units
# round-robin after sorting by id, so replays never reshuffle.
units = [DataUnit(f"u{i}", {"doc_size": "SML"[i % 3]}) for i in range(9)]
for part in apply_lambda(LambdaSpec("balanced_split", {"n_outputs": 3}),
                         [LabeledCollection("in", tuple(units))]):
    print("split", part.label, [u.unit_id for u in part.items])

# partition_by_key gives one output collection per distinct value.
for part in apply_lambda(LambdaSpec("partition_by_key", {"key": "doc_size"}),
                         [LabeledCollection("in", tuple(units))]):
    print("partition", part.label, len(part.items), "units")

# majority_vote aggregates judgments per unit; ties become an explicit
# sentinel instead of silently picking a side.
judged = [
    JudgedUnit(units[0], ("relevant", "relevant", "not_relevant")),
    JudgedUnit(units[1], ("relevant", "not_relevant")),
]
(out,) = apply_lambda(LambdaSpec("majority_vote"), [LabeledCollection("in", tuple(judged))])
for agg in out.items:
    print(f"{agg.unit.unit_id}: {agg.answer} ({agg.votes}/{agg.total})")
