"""Append-only run event records with a per-line chain hash.

One JSON object per line, fields ``{seq, time, kind, payload, hash}``. The
hash chains each record to its predecessor so truncation is survivable and
tampering is detectable. This format is the contract between the run
engine, analytics, and the service layer.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum


class EventKind(str, Enum):
    DEPLOYED = "DEPLOYED"
    LIFECYCLE = "LIFECYCLE"
    WORKER_ARRIVAL = "WORKER_ARRIVAL"
    ADMITTED = "ADMITTED"
    DENIED = "DENIED"
    UNIT_ASSIGNED = "UNIT_ASSIGNED"
    JUDGMENT = "JUDGMENT"
    RESERVATION_EXPIRED = "RESERVATION_EXPIRED"
    STAGE_ADVANCED = "STAGE_ADVANCED"
    LAMBDA_APPLIED = "LAMBDA_APPLIED"
    RUN_COMPLETED = "RUN_COMPLETED"
    WARNING = "WARNING"


GENESIS_HASH = "0" * 16


def fmt_time(t: datetime) -> str:
    """RFC 3339 UTC, microsecond precision (decode∘encode is identity)."""
    t = t.astimezone(timezone.utc) if t.tzinfo else t.replace(tzinfo=timezone.utc)
    return t.isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_time(s: str) -> datetime:
    return datetime.fromisoformat(s.replace("Z", "+00:00"))


@dataclass(frozen=True)
class RunEvent:
    seq: int
    time: datetime
    kind: EventKind
    payload: dict

    def body(self) -> dict:
        return {
            "seq": self.seq,
            "time": fmt_time(self.time),
            "kind": self.kind.value,
            "payload": self.payload,
        }


def chain_hash(prev_hash: str, body: dict) -> str:
    blob = prev_hash + json.dumps(body, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def encode_event(ev: RunEvent, prev_hash: str) -> tuple[str, str]:
    """Return (line, hash) for one event given the previous line's hash."""
    body = ev.body()
    h = chain_hash(prev_hash, body)
    line = json.dumps(body | {"hash": h}, sort_keys=True, ensure_ascii=False)
    return line, h


class LogCorruption(RuntimeError):
    def __init__(self, message: str, valid_prefix_len: int):
        super().__init__(message)
        self.valid_prefix_len = valid_prefix_len


def encode_log(events: list[RunEvent]) -> str:
    prev = GENESIS_HASH
    lines = []
    for ev in events:
        line, prev = encode_event(ev, prev)
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def decode_log(text: str, strict: bool = True) -> list[RunEvent]:
    """Parse and verify a chained log.

    strict=True raises LogCorruption on the first bad line; strict=False
    returns the valid prefix.
    """
    events: list[RunEvent] = []
    prev = GENESIS_HASH
    expected_seq = 0
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            body = {k: rec[k] for k in ("seq", "time", "kind", "payload")}
            ok = rec.get("hash") == chain_hash(prev, body) and rec["seq"] == expected_seq
        except (json.JSONDecodeError, KeyError):
            ok = False
        if not ok:
            if strict:
                raise LogCorruption(f"corrupt event log at line {i + 1}", len(events))
            return events
        events.append(
            RunEvent(
                seq=rec["seq"],
                time=parse_time(rec["time"]),
                kind=EventKind(rec["kind"]),
                payload=rec["payload"],
            )
        )
        prev = rec["hash"]
        expected_seq += 1
    return events
