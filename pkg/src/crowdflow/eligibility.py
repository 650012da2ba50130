"""Canonical worker identity and admission policy for experiment designs.

Identity: workers are keyed by (adapter, platform id) pairs and by opaque
fingerprint hashes; observations that share either key collapse into one
canonical record, so a person returning under a fresh platform account is
still recognized.

Policy: OPEN, BETWEEN_SUBJECTS, or WITHIN_SUBJECTS designs, each combined
with a returning-worker rule. Decisions are pure functions of the
participation ledger, so the same history always yields the same verdict.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .model import TaskNode


class Design(str, Enum):
    OPEN = "OPEN"
    BETWEEN_SUBJECTS = "BETWEEN_SUBJECTS"
    WITHIN_SUBJECTS = "WITHIN_SUBJECTS"


class ReturningRule(str, Enum):
    DENY_ALL_RETURNING = "DENY_ALL_RETURNING"
    ALLOW_SAME_TASK = "ALLOW_SAME_TASK"
    ALLOW_SAME_GROUP = "ALLOW_SAME_GROUP"


class Reason(str, Enum):
    NEW_WORKER = "NEW_WORKER"
    RETURNING_PERMITTED = "RETURNING_PERMITTED"
    DENY_RETURNING = "DENY_RETURNING"
    DENY_CROSSOVER = "DENY_CROSSOVER"
    DENY_COMPLETED_ALL = "DENY_COMPLETED_ALL"
    DENY_POPULATION_FILTER = "DENY_POPULATION_FILTER"


@dataclass(frozen=True)
class EligibilityPolicy:
    design: Design = Design.OPEN
    returning_rule: ReturningRule = ReturningRule.ALLOW_SAME_GROUP

    def __post_init__(self) -> None:
        if (
            self.design is Design.WITHIN_SUBJECTS
            and self.returning_rule is ReturningRule.DENY_ALL_RETURNING
        ):
            raise ValueError("within-subjects designs require returning workers")


@dataclass(frozen=True)
class EligibilityDecision:
    verdict: str  # "ALLOW" | "DENY"
    reason: Reason

    @property
    def allowed(self) -> bool:
        return self.verdict == "ALLOW"


def _allow(reason: Reason) -> EligibilityDecision:
    return EligibilityDecision("ALLOW", reason)


def _deny(reason: Reason) -> EligibilityDecision:
    assert reason.value.startswith("DENY"), reason
    return EligibilityDecision("DENY", reason)


@dataclass
class WorkerRecord:
    canonical_id: str
    platform_ids: set[tuple[str, str]]
    fingerprints: set[str]
    country: str
    trust: float
    first_seen: datetime


class WorkerRegistry:
    """Identity store with platform-id and fingerprint indexes.

    Platform-id matches take precedence over fingerprint matches; when both
    match different records the fingerprint record is merged into the
    platform one and the merge is kept in an audit list. The partition of
    observations into canonical ids only ever coarsens.
    """

    def __init__(self) -> None:
        self.records: dict[str, WorkerRecord] = {}
        self._by_platform: dict[tuple[str, str], str] = {}
        self._by_fingerprint: dict[str, str] = {}
        self.merges: list[tuple[str, str]] = []  # (winner, absorbed)
        self._counter = 0

    def resolve_worker(
        self,
        adapter_name: str,
        platform_worker_id: str,
        fingerprint: str | None,
        country: str,
        trust: float,
        now: datetime,
    ) -> tuple[str, str | None]:
        """Return (canonical_id, merged_from). Resolution is total."""
        if not platform_worker_id:
            raise ValueError("platform_worker_id must be non-empty")
        pkey = (adapter_name, platform_worker_id)
        by_pid = self._by_platform.get(pkey)
        by_fp = self._by_fingerprint.get(fingerprint) if fingerprint else None

        merged_from: str | None = None
        if by_pid is not None:
            cid = by_pid
            if by_fp is not None and by_fp != by_pid:
                self._merge(winner=by_pid, loser=by_fp)
                merged_from = by_fp
        elif by_fp is not None:
            cid = by_fp
        else:
            self._counter += 1
            cid = f"c{self._counter:05d}"
            self.records[cid] = WorkerRecord(
                canonical_id=cid,
                platform_ids=set(),
                fingerprints=set(),
                country=country,
                trust=trust,
                first_seen=now,
            )

        rec = self.records[cid]
        rec.platform_ids.add(pkey)
        self._by_platform[pkey] = cid
        if fingerprint:
            rec.fingerprints.add(fingerprint)
            self._by_fingerprint[fingerprint] = cid
        rec.trust = trust  # latest observation wins
        return cid, merged_from

    def _merge(self, winner: str, loser: str) -> None:
        lrec = self.records.pop(loser)
        wrec = self.records[winner]
        wrec.platform_ids |= lrec.platform_ids
        wrec.fingerprints |= lrec.fingerprints
        wrec.first_seen = min(wrec.first_seen, lrec.first_seen)
        for pkey in lrec.platform_ids:
            self._by_platform[pkey] = winner
        for fp in lrec.fingerprints:
            self._by_fingerprint[fp] = winner
        self.merges.append((winner, loser))


@dataclass
class ParticipationEntry:
    node_id: str
    group_id: str
    run_id: str
    first_judgment_time: datetime
    judgment_count: int = 1


class ParticipationLedger:
    """Append-only per-worker participation history.

    Entries are keyed by (node, group, run); repeated judgments at the same
    node increment the entry. Recording requires a prior admission grant,
    which the orchestrator registers on every ALLOW.
    """

    def __init__(self) -> None:
        self._entries: dict[str, list[ParticipationEntry]] = {}
        self._grants: set[tuple[str, str, str]] = set()

    def entries(self, worker: str) -> list[ParticipationEntry]:
        return list(self._entries.get(worker, []))

    def grant(self, worker: str, node_id: str, run_id: str) -> None:
        self._grants.add((worker, node_id, run_id))

    def record_participation(
        self, worker: str, node_id: str, group_id: str, run_id: str, time: datetime
    ) -> ParticipationEntry:
        if (worker, node_id, run_id) not in self._grants:
            raise RuntimeError(
                f"judgment recorded without prior ALLOW for worker {worker!r} "
                f"at node {node_id!r}"
            )
        for entry in self._entries.get(worker, []):
            if (entry.node_id, entry.group_id, entry.run_id) == (node_id, group_id, run_id):
                entry.judgment_count += 1
                return entry
        entry = ParticipationEntry(node_id, group_id, run_id, time)
        self._entries.setdefault(worker, []).append(entry)
        return entry

    def reassign(self, winner: str, loser: str) -> None:
        """Move an absorbed identity's history onto the canonical record."""
        moved = self._entries.pop(loser, [])
        if moved:
            self._entries.setdefault(winner, []).extend(moved)
            self._entries[winner].sort(key=lambda e: e.first_judgment_time)
        for key in [g for g in self._grants if g[0] == loser]:
            self._grants.discard(key)
            self._grants.add((winner, key[1], key[2]))


def check_eligibility(
    worker: WorkerRecord,
    node: TaskNode,
    policy: EligibilityPolicy,
    ledger: ParticipationLedger,
    run_id: str,
    run_group_ids: frozenset[str] | None = None,
) -> EligibilityDecision:
    """Decide admission for one (worker, node) request.

    The population filter is evaluated before any policy logic so denial
    reasons stay unambiguous. History is scoped to the current run.
    """
    pf = node.population_filter
    if pf is not None and not pf.admits(worker.country, worker.trust):
        return _deny(Reason.DENY_POPULATION_FILTER)

    history = [e for e in ledger.entries(worker.canonical_id) if e.run_id == run_id]
    if not history:
        return _allow(Reason.NEW_WORKER)

    if policy.design is Design.OPEN:
        return _allow(Reason.RETURNING_PERMITTED)

    if policy.design is Design.BETWEEN_SUBJECTS:
        if any(e.group_id != node.group_id for e in history):
            return _deny(Reason.DENY_CROSSOVER)
        # All prior entries sit in this node's group.
        rule = policy.returning_rule
        if rule is ReturningRule.DENY_ALL_RETURNING:
            return _deny(Reason.DENY_RETURNING)
        if rule is ReturningRule.ALLOW_SAME_TASK:
            if any(e.node_id == node.node_id for e in history):
                return _allow(Reason.RETURNING_PERMITTED)
            return _deny(Reason.DENY_RETURNING)
        return _allow(Reason.RETURNING_PERMITTED)

    # WITHIN_SUBJECTS: a group counts as completed after >= 1 judgment in
    # any of its nodes; one exposure is enough to contaminate.
    done_groups = {e.group_id for e in history}
    if node.group_id not in done_groups:
        return _allow(Reason.RETURNING_PERMITTED)
    if run_group_ids is not None and done_groups >= run_group_ids:
        return _deny(Reason.DENY_COMPLETED_ALL)
    return _deny(Reason.DENY_RETURNING)
