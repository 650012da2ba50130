"""The closed set of edge combinators for routing and aggregating data.

Six named combinators, no user code: keeps execution deterministic and
sandbox-free. All of them are pure functions from labeled input collections
to labeled output collections.
"""
from __future__ import annotations

from collections import Counter

from .model import (
    UNRESOLVED,
    AggregatedAnswer,
    FlowItem,
    JudgedUnit,
    LabeledCollection,
    LambdaSpec,
    item_id,
    item_unit,
)


class LambdaError(ValueError):
    """Raised on arity mismatches, bad params, or missing payload keys."""


def validate_lambda_params(spec: LambdaSpec) -> str | None:
    """Return an error string if params are incomplete/ill-typed, else None."""
    p = spec.params
    if spec.name == "balanced_split":
        n = p.get("n_outputs")
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            return "balanced_split requires integer n_outputs >= 1"
    elif spec.name == "partition_by_key":
        if not isinstance(p.get("key"), str) or not p.get("key"):
            return "partition_by_key requires a non-empty string key"
    elif spec.name == "filter_by_field":
        if not isinstance(p.get("key"), str) or not p.get("key"):
            return "filter_by_field requires a non-empty string key"
        accepted = p.get("accepted")
        if not isinstance(accepted, (list, tuple, set, frozenset)):
            return "filter_by_field requires an accepted value list"
    return None


def _concat(inputs: list[LabeledCollection]) -> list[FlowItem]:
    out: list[FlowItem] = []
    for coll in inputs:
        out.extend(coll.items)
    return out


def _payload_value(item: FlowItem, key: str):
    unit = item_unit(item)
    if key not in unit.payload:
        raise LambdaError(f"unit {unit.unit_id!r} has no payload key {key!r}")
    return unit.payload[key]


def apply_lambda(
    spec: LambdaSpec, inputs: list[LabeledCollection]
) -> list[LabeledCollection]:
    bad = validate_lambda_params(spec)
    if bad:
        raise LambdaError(bad)
    if not inputs and spec.name != "pass_through":
        raise LambdaError(f"{spec.name} requires at least one input collection")

    if spec.name == "pass_through":
        return list(inputs)

    if spec.name == "union":
        seen: set[str] = set()
        items: list[FlowItem] = []
        for it in _concat(inputs):
            uid = item_id(it)
            if uid not in seen:
                seen.add(uid)
                items.append(it)
        return [LabeledCollection("union", tuple(items))]

    if spec.name == "balanced_split":
        n = spec.params["n_outputs"]
        ordered = sorted(_concat(inputs), key=item_id)
        buckets: list[list[FlowItem]] = [[] for _ in range(n)]
        for i, it in enumerate(ordered):
            buckets[i % n].append(it)
        return [
            LabeledCollection(str(i), tuple(b)) for i, b in enumerate(buckets)
        ]

    if spec.name == "partition_by_key":
        key = spec.params["key"]
        parts: dict[str, list[FlowItem]] = {}
        for it in _concat(inputs):
            parts.setdefault(str(_payload_value(it, key)), []).append(it)
        return [
            LabeledCollection(label, tuple(parts[label]))
            for label in sorted(parts)
        ]

    if spec.name == "filter_by_field":
        key = spec.params["key"]
        accepted = {str(v) for v in spec.params["accepted"]}
        kept = tuple(
            it for it in _concat(inputs) if str(_payload_value(it, key)) in accepted
        )
        return [LabeledCollection("filtered", kept)]

    # majority_vote
    results: list[FlowItem] = []
    for it in _concat(inputs):
        if not isinstance(it, JudgedUnit):
            raise LambdaError(
                f"majority_vote needs judgment sets, got {type(it).__name__} "
                f"for unit {item_id(it)!r}"
            )
        results.append(majority_vote(it))
    return [LabeledCollection("majority", tuple(results))]


def majority_vote(judged: JudgedUnit) -> AggregatedAnswer:
    """Strict plurality over one unit's judgments; ties yield UNRESOLVED."""
    counts = Counter(judged.answers)
    total = sum(counts.values())
    ranked = counts.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return AggregatedAnswer(judged.unit, UNRESOLVED, ranked[0][1], total)
    answer, votes = ranked[0]
    return AggregatedAnswer(judged.unit, answer, votes, total)
