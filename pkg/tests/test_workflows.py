from __future__ import annotations

import json
import random

import pytest

from crowdflow.model import SINK, SOURCE, DataUnit, Edge, ExperimentGroup, LambdaSpec, Question, Workflow
from crowdflow.workflows import (
    VIOLATION_CODES,
    WorkflowParseError,
    parse_workflow,
    serialize,
    topological_stages,
    validate,
    workflow_to_doc,
)

from conftest import make_node, make_workflow, random_workflow


class TestParse:
    def test_figure_shape_document(self, pair_workflow):
        text = serialize(pair_workflow)
        wf = parse_workflow(text)
        assert len(wf.nodes) == 3
        assert len(wf.edges) == 4
        assert len(wf.groups) == 2
        assert {e.source for e in wf.edges} == {SOURCE, "classify_hl", "classify_plain"}

    def test_empty_nodes_rejected(self):
        doc = {"workflow_id": "w", "groups": [], "nodes": [], "edges": [], "input_units": []}
        with pytest.raises(WorkflowParseError, match="at least one task node"):
            parse_workflow(json.dumps(doc))

    def test_dangling_edge_target_named(self, pair_workflow):
        doc = workflow_to_doc(pair_workflow)
        doc["edges"].append({"from": "classify_hl", "to": "nodeX", "lambda": {"name": "union", "params": {}}})
        with pytest.raises(WorkflowParseError, match="nodeX"):
            parse_workflow(json.dumps(doc))

    def test_syntax_error_carries_position(self):
        with pytest.raises(WorkflowParseError) as err:
            parse_workflow('{"workflow_id": ')
        assert err.value.position is not None

    def test_unknown_combinator(self, pair_workflow):
        doc = workflow_to_doc(pair_workflow)
        doc["edges"][0]["lambda"]["name"] = "frobnicate"
        with pytest.raises(WorkflowParseError, match="frobnicate"):
            parse_workflow(json.dumps(doc))

    def test_missing_field(self):
        doc = {"workflow_id": "w", "nodes": [{"node_id": "a"}], "groups": [], "edges": []}
        with pytest.raises(WorkflowParseError, match="missing required field"):
            parse_workflow(json.dumps(doc))

    def test_duplicate_ids(self, pair_workflow):
        doc = workflow_to_doc(pair_workflow)
        doc["nodes"].append(doc["nodes"][0])
        with pytest.raises(WorkflowParseError, match="duplicate node_id"):
            parse_workflow(json.dumps(doc))


class TestSerialize:
    def test_roundtrip_structural_identity(self, pair_workflow):
        wf2 = parse_workflow(serialize(pair_workflow))
        assert wf2 == pair_workflow

    def test_unicode_preserved(self):
        wf = make_workflow(["a"], [])
        node = wf.nodes[0]
        import dataclasses

        wf = dataclasses.replace(
            wf, nodes=(dataclasses.replace(node, instructions="пример ✓ café — 例"),)
        )
        wf2 = parse_workflow(serialize(wf))
        assert wf2.nodes[0].instructions == "пример ✓ café — 例"

    def test_canonical_fixpoint(self, pair_workflow):
        s1 = serialize(pair_workflow)
        s2 = serialize(parse_workflow(s1))
        assert s1 == s2

    def test_fixpoint_from_noncanonical_text(self, pair_workflow):
        # same document, shuffled key order and 4-space indent
        doc = workflow_to_doc(pair_workflow)
        scrambled = json.dumps(doc, indent=4)
        s1 = serialize(parse_workflow(scrambled))
        s2 = serialize(parse_workflow(s1))
        assert s1 == s2

    @pytest.mark.parametrize("seed", range(25))
    def test_random_roundtrips(self, seed):
        wf = random_workflow(random.Random(seed))
        s1 = serialize(wf)
        wf2 = parse_workflow(s1)
        assert wf2 == wf
        assert serialize(wf2) == s1


class TestValidate:
    def test_valid_chain_empty(self):
        wf = make_workflow(["a", "b", "c"], [("a", "b"), ("b", "c")])
        assert validate(wf) == []

    def test_cycle_detected_with_members(self):
        wf = make_workflow(["a", "b"], [("a", "b"), ("b", "a")])
        codes = {v.code: v for v in validate(wf)}
        assert "CYCLE" in codes
        assert {"a", "b"} <= set(codes["CYCLE"].element.split(","))

    def test_unknown_group_named(self):
        wf = make_workflow(["a"], [])
        import dataclasses

        bad = dataclasses.replace(wf.nodes[0], group_id="g9")
        wf = dataclasses.replace(wf, nodes=(bad,))
        violations = validate(wf)
        assert any(v.code == "UNKNOWN_GROUP" and v.element == "g9" for v in violations)

    def test_all_documented_codes_reachable(self):
        import dataclasses

        fixtures: dict[str, Workflow] = {}
        base = make_workflow(["a", "b"], [("a", "b")])
        fixtures["EMPTY_WORKFLOW"] = dataclasses.replace(base, nodes=(), edges=())
        fixtures["DUPLICATE_NODE_ID"] = dataclasses.replace(base, nodes=base.nodes + (base.nodes[0],))
        fixtures["DUPLICATE_GROUP_ID"] = dataclasses.replace(base, groups=base.groups + (base.groups[0],))
        fixtures["DUPLICATE_UNIT_ID"] = dataclasses.replace(
            base, input_units=base.input_units + (base.input_units[0],)
        )
        fixtures["UNKNOWN_GROUP"] = dataclasses.replace(
            base, nodes=(dataclasses.replace(base.nodes[0], group_id="gX"), base.nodes[1])
        )
        fixtures["UNKNOWN_NODE"] = dataclasses.replace(
            base, edges=base.edges + (Edge("a", "ghost", LambdaSpec("union")),)
        )
        fixtures["BAD_ENDPOINT"] = dataclasses.replace(
            base, edges=base.edges + (Edge(SINK, "a", LambdaSpec("union")),)
        )
        fixtures["BAD_JUDGMENTS_PER_UNIT"] = dataclasses.replace(
            base, nodes=(dataclasses.replace(base.nodes[0], judgments_per_unit=0), base.nodes[1])
        )
        fixtures["EMPTY_ANSWER_OPTIONS"] = dataclasses.replace(
            base,
            nodes=(
                dataclasses.replace(base.nodes[0], question_schema=(Question("q", ()),)),
                base.nodes[1],
            ),
        )
        fixtures["GOLD_WITHOUT_ANSWER"] = dataclasses.replace(
            base, input_units=(DataUnit("ug", {}, gold_answer=""),)
        )
        fixtures["BAD_LAMBDA_PARAMS"] = dataclasses.replace(
            base,
            edges=base.edges + (Edge("a", "b", LambdaSpec("balanced_split", {"n_outputs": 0})),),
        )
        from crowdflow.model import PopulationFilter

        fixtures["BAD_POPULATION_FILTER"] = dataclasses.replace(
            base,
            nodes=(
                dataclasses.replace(base.nodes[0], population_filter=PopulationFilter(min_trust=1.5)),
                base.nodes[1],
            ),
        )
        fixtures["NEGATIVE_REWARD"] = dataclasses.replace(
            base, nodes=(dataclasses.replace(base.nodes[0], reward_per_judgment=-1.0), base.nodes[1])
        )
        fixtures["CYCLE"] = make_workflow(["a", "b"], [("a", "b"), ("b", "a")])
        fixtures["UNREACHABLE"] = dataclasses.replace(
            base, edges=(base.edges[0],)  # b keeps no inbound edge
        )

        assert set(fixtures) == set(VIOLATION_CODES)
        for code, wf in fixtures.items():
            found = {v.code for v in validate(wf)}
            assert code in found, f"{code} not raised; got {found}"

    @pytest.mark.parametrize("seed", range(25))
    def test_generated_workflows_validate_clean(self, seed):
        wf = random_workflow(random.Random(seed))
        assert validate(wf) == []


class TestStages:
    def test_chain(self):
        wf = make_workflow(["a", "b", "c"], [("a", "b"), ("b", "c")])
        assert topological_stages(wf) == [{"a"}, {"b"}, {"c"}]

    def test_figure_shape(self, pair_workflow):
        assert topological_stages(pair_workflow) == [
            {"classify_hl", "classify_plain"},
            {"review"},
        ]

    def test_diamond(self):
        wf = make_workflow(["a", "b", "c", "d"], [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])
        assert topological_stages(wf) == [{"a"}, {"b", "c"}, {"d"}]

    def test_cycle_raises(self):
        wf = make_workflow(["a", "b"], [("a", "b"), ("b", "a")])
        with pytest.raises(ValueError, match="cycle"):
            topological_stages(wf)

    @pytest.mark.parametrize("seed", range(25))
    def test_every_edge_crosses_forward(self, seed):
        wf = random_workflow(random.Random(seed))
        stages = topological_stages(wf)
        level = {n: i for i, stage in enumerate(stages) for n in stage}
        for e in wf.edges:
            if e.source in level and e.target in level:
                assert level[e.source] < level[e.target]
