"""Generic remote-platform adapter skeleton: speaks the adapter contract
over HTTP against any endpoint implementing the documented resource
mapping. No vendor payload emulation; the mapping profile names the paths
and auth header, and the credential comes from an environment variable.

Reliability: every command carries an idempotency key (``X-Command-Id``);
429 and 5xx responses retry with exponential backoff plus seeded jitter;
judgment polling deduplicates by the platform's judgment id.
"""
from __future__ import annotations

import os
import random
import time
from dataclasses import dataclass, field
from datetime import datetime
from uuid import uuid4

import httpx

from ..events import parse_time
from . import AdapterCommand, AdapterEvent, AdapterEventKind, CommandKind


@dataclass(frozen=True)
class MappingProfile:
    """Path templates for the remote resource model. ``{ref}`` expands to
    the platform job id returned by task creation."""

    base_url: str
    create_path: str = "/jobs"
    launch_path: str = "/jobs/{ref}/launch"
    pause_path: str = "/jobs/{ref}/pause"
    resume_path: str = "/jobs/{ref}/resume"
    cancel_path: str = "/jobs/{ref}/cancel"
    reject_path: str = "/jobs/{ref}/sessions/{session}/reject"
    assign_path: str = "/jobs/{ref}/sessions/{session}/assign"
    poll_path: str = "/events"
    auth_header: str = "Authorization"
    credential_env: str = "CROWDFLOW_REMOTE_TOKEN"


class RemoteError(RuntimeError):
    def __init__(self, message: str, attempts: int, retriable: bool):
        super().__init__(message)
        self.attempts = attempts
        self.retriable = retriable


class RemoteAdapter:
    def __init__(
        self,
        profile: MappingProfile,
        client: httpx.Client | None = None,
        max_attempts: int = 5,
        backoff_base: float = 0.2,
        jitter_seed: int = 0,
        sleeper=time.sleep,
    ):
        self.profile = profile
        self.client = client or httpx.Client(base_url=profile.base_url, timeout=10.0)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._rng = random.Random(jitter_seed)
        self._sleep = sleeper
        self._refs: dict[str, str] = {}  # engine task ref -> platform job id
        self._seen_event_ids: set[str] = set()
        self._cursor: str | None = None

    # -- command side -----------------------------------------------------

    def _headers(self, command_id: str) -> dict[str, str]:
        headers = {"X-Command-Id": command_id}
        token = os.environ.get(self.profile.credential_env)
        if token:
            headers[self.profile.auth_header] = f"Bearer {token}"
        return headers

    def _request(self, method: str, path: str, command_id: str, json_body=None) -> httpx.Response:
        last: str = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.client.request(
                    method, path, json=json_body, headers=self._headers(command_id)
                )
            except httpx.TransportError as e:
                last = f"transport: {e}"
            else:
                if resp.status_code == 401:
                    raise RemoteError("authentication failed", attempt, retriable=False)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise RemoteError(f"HTTP {resp.status_code}: {resp.text}", attempt, retriable=False)
                else:
                    return resp
            if attempt < self.max_attempts:
                delay = self.backoff_base * (2 ** (attempt - 1))
                self._sleep(delay * (1 + self._rng.uniform(0, 0.25)))
        raise RemoteError(f"gave up after {self.max_attempts} attempts ({last})", self.max_attempts, retriable=True)

    def execute(self, command: AdapterCommand) -> str:
        cid = command.command_id or uuid4().hex
        p = self.profile
        if command.kind is CommandKind.CREATE_TASK:
            assert command.node is not None
            payload = {
                "title": command.node.title,
                "instructions": command.node.instructions,
                "judgments_per_unit": command.node.judgments_per_unit,
                "reward_per_judgment": command.node.reward_per_judgment,
                "questions": [
                    {"question_id": q.question_id, "options": list(q.options)}
                    for q in command.node.question_schema
                ],
                "rows": [
                    {"unit_id": u.unit_id, "payload": dict(u.payload)}
                    | ({"gold_answer": u.gold_answer} if u.gold_answer else {})
                    for u in command.units
                ],
                "external_ref": command.target,
            }
            resp = self._request("POST", p.create_path, cid, payload)
            job_id = str(resp.json()["job_id"])
            if command.target:
                self._refs[command.target] = job_id
            return job_id

        ref = self._refs.get(command.target, command.target)
        session = command.session_id or ""
        simple = {
            CommandKind.LAUNCH: p.launch_path,
            CommandKind.PAUSE: p.pause_path,
            CommandKind.RESUME: p.resume_path,
            CommandKind.CANCEL: p.cancel_path,
        }
        if command.kind in simple:
            self._request("POST", simple[command.kind].format(ref=ref), cid)
            return "ok"
        if command.kind is CommandKind.REJECT_WORKER:
            self._request(
                "POST", p.reject_path.format(ref=ref, session=session), cid,
                {"reason": command.reason},
            )
            return "ok"
        if command.kind is CommandKind.ASSIGN_UNIT:
            self._request(
                "POST", p.assign_path.format(ref=ref, session=session), cid,
                {"unit_id": command.unit_id},
            )
            return "ok"
        raise RemoteError(f"unmapped command kind {command.kind}", 0, retriable=False)

    # -- event side ----------------------------------------------------------

    def poll(self) -> list[AdapterEvent]:
        """Fetch new events; duplicates (by platform event id) are dropped,
        so at-least-once vendor delivery still yields one AdapterEvent."""
        path = self.profile.poll_path
        if self._cursor:
            path = f"{path}?since={self._cursor}"
        resp = self._request("GET", path, uuid4().hex, None)
        doc = resp.json()
        self._cursor = doc.get("cursor", self._cursor)
        out: list[AdapterEvent] = []
        by_job = {v: k for k, v in self._refs.items()}
        for raw in doc.get("events", []):
            eid = str(raw.get("id"))
            if eid in self._seen_event_ids:
                continue
            self._seen_event_ids.add(eid)
            task_ref = by_job.get(str(raw.get("job_id")), str(raw.get("job_id")))
            kind = raw.get("kind")
            common = {
                "time": parse_time(raw["time"]),
                "task_ref": task_ref,
                "session_id": str(raw.get("session_id", "")),
                "platform_worker_id": str(raw.get("worker_id", "")),
            }
            if kind == "arrival":
                out.append(
                    AdapterEvent(
                        kind=AdapterEventKind.WORKER_ARRIVAL,
                        fingerprint=raw.get("fingerprint"),
                        country=raw.get("country", ""),
                        trust=float(raw.get("trust", 1.0)),
                        **common,
                    )
                )
            elif kind == "judgment":
                out.append(
                    AdapterEvent(
                        kind=AdapterEventKind.JUDGMENT_SUBMITTED,
                        country=raw.get("country", ""),
                        unit_id=str(raw.get("unit_id", "")),
                        answer=str(raw.get("answer", "")),
                        decision_time_seconds=float(raw.get("decision_time_seconds", 0.0)),
                        **common,
                    )
                )
            elif kind == "abandoned":
                out.append(AdapterEvent(kind=AdapterEventKind.WORKER_ABANDONED, **common))
        out.sort(key=lambda ev: ev.time)
        return out

    def events(self, until: datetime):
        for ev in self.poll():
            if ev.time <= until:
                yield ev
