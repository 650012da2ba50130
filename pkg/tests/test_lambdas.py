from __future__ import annotations

import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdflow.lambdas import LambdaError, apply_lambda, majority_vote
from crowdflow.model import (
    UNRESOLVED,
    DataUnit,
    JudgedUnit,
    LabeledCollection,
    LambdaSpec,
    item_id,
)


def units(n: int, key_cycle=("S", "M", "L")) -> list[DataUnit]:
    return [DataUnit(f"u{i:02d}", {"doc_size": key_cycle[i % len(key_cycle)]}) for i in range(n)]


def coll(items, label="in") -> LabeledCollection:
    return LabeledCollection(label, tuple(items))


def brute_majority(answers: tuple[str, ...]) -> str:
    """Independent oracle: count and argmax, ties -> sentinel."""
    counts = Counter(answers)
    best = max(counts.values())
    winners = [a for a, c in counts.items() if c == best]
    return winners[0] if len(winners) == 1 else UNRESOLVED


class TestMajorityVote:
    def test_plurality(self):
        out = majority_vote(JudgedUnit(DataUnit("u", {}), ("A", "A", "B")))
        assert out.answer == "A" and out.votes == 2 and out.total == 3

    def test_tie_sentinel(self):
        out = majority_vote(JudgedUnit(DataUnit("u", {}), ("A", "B")))
        assert out.answer == UNRESOLVED

    def test_exhaustive_small_cases_match_oracle(self):
        options = ["A", "B", "C", "D"]
        checked = 0
        for size in range(1, 8):
            for combo in itertools.combinations_with_replacement(options, size):
                for perm in set(itertools.permutations(combo)):
                    got = majority_vote(JudgedUnit(DataUnit("u", {}), perm))
                    assert got.answer == brute_majority(perm), perm
                    checked += 1
        assert checked > 1000

    def test_via_apply_lambda(self):
        judged = [
            JudgedUnit(DataUnit("u1", {}), ("A", "A", "B")),
            JudgedUnit(DataUnit("u2", {}), ("A", "B")),
        ]
        (out,) = apply_lambda(LambdaSpec("majority_vote"), [coll(judged)])
        assert [a.answer for a in out.items] == ["A", UNRESOLVED]

    def test_rejects_raw_units(self):
        with pytest.raises(LambdaError, match="judgment sets"):
            apply_lambda(LambdaSpec("majority_vote"), [coll(units(1))])


class TestBalancedSplit:
    def test_even_split(self):
        out = apply_lambda(LambdaSpec("balanced_split", {"n_outputs": 3}), [coll(units(9))])
        assert [len(c.items) for c in out] == [3, 3, 3]

    def test_sizes_differ_at_most_one_and_deterministic(self):
        for n, k in [(10, 3), (7, 2), (1, 4), (5, 5)]:
            out1 = apply_lambda(LambdaSpec("balanced_split", {"n_outputs": k}), [coll(units(n))])
            out2 = apply_lambda(LambdaSpec("balanced_split", {"n_outputs": k}), [coll(units(n))])
            sizes = [len(c.items) for c in out1]
            assert max(sizes) - min(sizes) <= 1
            assert out1 == out2

    def test_round_robin_by_sorted_unit_id(self):
        us = units(4)
        shuffled = [us[2], us[0], us[3], us[1]]
        out = apply_lambda(LambdaSpec("balanced_split", {"n_outputs": 2}), [coll(shuffled)])
        assert [item_id(i) for i in out[0].items] == ["u00", "u02"]
        assert [item_id(i) for i in out[1].items] == ["u01", "u03"]

    def test_bad_params(self):
        with pytest.raises(LambdaError):
            apply_lambda(LambdaSpec("balanced_split", {"n_outputs": 0}), [coll(units(3))])
        with pytest.raises(LambdaError):
            apply_lambda(LambdaSpec("balanced_split", {}), [coll(units(3))])


class TestPartitionByKey:
    def test_disjoint_and_covering(self):
        us = units(10)
        out = apply_lambda(LambdaSpec("partition_by_key", {"key": "doc_size"}), [coll(us)])
        # brute-force set check: outputs union to input, pairwise disjoint
        all_ids = [item_id(i) for c in out for i in c.items]
        assert sorted(all_ids) == sorted(u.unit_id for u in us)
        for a, b in itertools.combinations(out, 2):
            assert not ({item_id(i) for i in a.items} & {item_id(i) for i in b.items})
        assert [c.label for c in out] == sorted(c.label for c in out)

    def test_missing_key(self):
        bad = [DataUnit("u", {"other": 1})]
        with pytest.raises(LambdaError, match="no payload key"):
            apply_lambda(LambdaSpec("partition_by_key", {"key": "doc_size"}), [coll(bad)])


class TestFilterUnionPass:
    def test_filter_subset_retains_order(self):
        us = units(9)
        (out,) = apply_lambda(
            LambdaSpec("filter_by_field", {"key": "doc_size", "accepted": ["S", "L"]}),
            [coll(us)],
        )
        kept = [item_id(i) for i in out.items]
        expected = [u.unit_id for u in us if u.payload["doc_size"] in ("S", "L")]
        assert kept == expected

    def test_union_dedups_by_unit_id(self):
        us = units(4)
        (out,) = apply_lambda(LambdaSpec("union"), [coll(us[:3], "a"), coll(us[1:], "b")])
        assert [item_id(i) for i in out.items] == ["u00", "u01", "u02", "u03"]

    def test_pass_through_identity(self):
        inputs = [coll(units(3), "x"), coll(units(2), "y")]
        assert apply_lambda(LambdaSpec("pass_through"), inputs) == inputs

    def test_arity_zero_rejected(self):
        with pytest.raises(LambdaError, match="at least one input"):
            apply_lambda(LambdaSpec("union"), [])


@st.composite
def unit_lists(draw):
    n = draw(st.integers(1, 30))
    keys = draw(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=n, max_size=n))
    return [DataUnit(f"u{i:03d}", {"k": keys[i]}) for i in range(n)]


class TestProperties:
    @given(unit_lists(), st.integers(1, 6))
    @settings(max_examples=60, deadline=None)
    def test_balanced_split_is_partition(self, us, k):
        out = apply_lambda(LambdaSpec("balanced_split", {"n_outputs": k}), [coll(us)])
        assert len(out) == k
        sizes = [len(c.items) for c in out]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(item_id(i) for c in out for i in c.items) == sorted(u.unit_id for u in us)

    @given(unit_lists())
    @settings(max_examples=60, deadline=None)
    def test_partition_by_key_is_partition(self, us):
        out = apply_lambda(LambdaSpec("partition_by_key", {"key": "k"}), [coll(us)])
        ids = sorted(item_id(i) for c in out for i in c.items)
        assert ids == sorted(u.unit_id for u in us)
        for c in out:
            assert all(str(i.payload["k"]) == c.label for i in c.items)

    @given(st.lists(st.sampled_from(["A", "B", "C", "D"]), min_size=1, max_size=7))
    @settings(max_examples=200, deadline=None)
    def test_majority_matches_oracle(self, answers):
        got = majority_vote(JudgedUnit(DataUnit("u", {}), tuple(answers)))
        assert got.answer == brute_majority(tuple(answers))
