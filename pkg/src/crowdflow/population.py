"""Demographic quota enforcement: hard per-value caps on a run's judgments.

The cap denominator is the fixed run target (units x k summed over nodes),
never the running total, so early monopolization cannot lock in. Admission
takes a reservation with a TTL; judgments commit reservations, and expired
reservations hand their slots back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

DEFAULT_TTL_MINUTES = 30


@dataclass(frozen=True)
class QuotaSpec:
    attribute: str = "country"
    cap_fraction: float = 1.0
    scope: str = ""  # run_id
    ttl_minutes: float = DEFAULT_TTL_MINUTES

    def __post_init__(self) -> None:
        if not (0.0 < self.cap_fraction <= 1.0):
            raise ValueError("cap_fraction must lie in (0, 1]")

    def cap(self, target_total: int) -> int:
        return math.floor(self.cap_fraction * target_total)

    def feasible(self, target_total: int) -> bool:
        """At least one admissible value must fit >= 1 judgment."""
        return self.cap(target_total) >= 1


@dataclass
class Reservation:
    reservation_id: str
    value: str
    created_at: datetime
    committed: bool = False


@dataclass
class _ValueCounters:
    committed: int = 0
    reserved: int = 0


class QuotaError(RuntimeError):
    pass


class QuotaLedger:
    """Reservation/commit counters per attribute value.

    Invariant: committed + reserved per value never exceeds
    floor(cap_fraction x target_total). With no spec configured the ledger
    degenerates to the constant-ALLOW function.
    """

    def __init__(self, spec: QuotaSpec | None, target_total: int):
        if spec is not None and not spec.feasible(target_total):
            raise QuotaError(
                f"infeasible quota: cap {spec.cap_fraction} over target "
                f"{target_total} leaves zero slots per value"
            )
        self.spec = spec
        self.target_total = target_total
        self.counters: dict[str, _ValueCounters] = {}
        self.reservations: dict[str, Reservation] = {}
        self._counter = 0

    @property
    def enabled(self) -> bool:
        return self.spec is not None

    def _cap(self) -> int:
        assert self.spec is not None
        return self.spec.cap(self.target_total)

    def _ttl(self) -> timedelta:
        assert self.spec is not None
        return timedelta(minutes=self.spec.ttl_minutes)

    def counters_for(self, value: str) -> _ValueCounters:
        return self.counters.setdefault(value, _ValueCounters())

    def admit(self, value: str, now: datetime, reservation_id: str | None = None) -> Reservation | None:
        """Reserve one judgment slot for the given attribute value.

        Returns the reservation on ALLOW, None on DENY_QUOTA. A caller may
        pin the reservation id (the orchestrator derives ids from event
        sequence numbers so replays agree byte for byte).
        """
        if reservation_id is None:
            self._counter += 1
            reservation_id = f"rsv{self._counter:06d}"
        if not self.enabled:
            res = Reservation(reservation_id, value, now)
            self.reservations[reservation_id] = res
            return res
        c = self.counters_for(value)
        if c.committed + c.reserved + 1 > self._cap():
            return None
        c.reserved += 1
        res = Reservation(reservation_id, value, now)
        self.reservations[reservation_id] = res
        return res

    def commit(self, reservation_id: str) -> None:
        res = self.reservations.get(reservation_id)
        if res is None:
            raise QuotaError(f"unknown or expired reservation {reservation_id!r}")
        if res.committed:
            raise QuotaError(f"reservation {reservation_id!r} already committed")
        res.committed = True
        c = self.counters_for(res.value)
        if self.enabled:
            c.reserved -= 1
        c.committed += 1

    def release(self, reservation_id: str) -> None:
        """Drop a live reservation (worker abandoned or was rejected)."""
        res = self.reservations.pop(reservation_id, None)
        if res is None or res.committed:
            return
        if self.enabled:
            self.counters_for(res.value).reserved -= 1

    def release_expired(self, now: datetime) -> list[str]:
        """Release every reservation older than the TTL; freed slots become
        available to subsequent admits."""
        if not self.enabled:
            return []
        released = []
        for rid, res in list(self.reservations.items()):
            if res.committed:
                continue
            if now - res.created_at >= self._ttl():
                released.append(rid)
                self.release(rid)
        return released

    def committed_by_value(self) -> dict[str, int]:
        return {v: c.committed for v, c in self.counters.items() if c.committed}
