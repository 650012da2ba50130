"""Embedded file-based persistence: workflow documents and per-run event
logs under one data directory (env ``CROWDFLOW_DATA_DIR`` or explicit).

Layout::

    <root>/workflows/<id>.json        workflow document (canonical form)
    <root>/workflows/<id>.meta.json   created_at / updated_at / version
    <root>/runs/<run_id>/config.json  adapter, seed, pace, request id
    <root>/runs/<run_id>/log.jsonl    chained event log, fsynced per batch

Startup recovery replays every log and verifies the hash chain; a corrupt
log marks the run CORRUPT (actions refused, report served from the valid
prefix).
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .events import GENESIS_HASH, LogCorruption, RunEvent, decode_log, encode_event
from .orchestrator import Run
from .workflows import WorkflowParseError, parse_workflow, serialize, validate


def data_dir(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get("CROWDFLOW_DATA_DIR", ".crowdflow"))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


@dataclass
class StoredWorkflow:
    workflow_id: str
    document: str
    created_at: str
    updated_at: str
    version: int
    violations: list = field(default_factory=list)

    @property
    def draft_invalid(self) -> bool:
        return bool(self.violations)


class LogWriter:
    """Append-only chained writer; one per live run."""

    def __init__(self, path: Path, prev_hash: str = GENESIS_HASH):
        self.path = path
        self._lock = threading.Lock()
        self._prev = prev_hash
        self._fh = open(path, "a", encoding="utf-8")

    @classmethod
    def resume(cls, path: Path) -> "LogWriter":
        """Reopen an existing log, chaining onto its last line."""
        prev = GENESIS_HASH
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    prev = json.loads(line)["hash"]
        return cls(path, prev_hash=prev)

    def append(self, events: list[RunEvent]) -> None:
        with self._lock:
            lines = []
            for ev in events:
                line, self._prev = encode_event(ev, self._prev)
                lines.append(line)
            self._fh.write("\n".join(lines) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            self._fh.close()


@dataclass
class RunRecord:
    run_id: str
    config: dict
    run: Run | None  # replayed state; None when the log is corrupt
    corrupt: bool = False
    valid_prefix: list[RunEvent] = field(default_factory=list)


class DataStore:
    def __init__(self, root: Path | str | None = None):
        self.root = data_dir(str(root) if root is not None else None)
        (self.root / "workflows").mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)
        self._request_ids: dict[str, str] = {}  # client request id -> run_id
        self._load_request_ids()

    # -- workflows -----------------------------------------------------------

    def _wf_path(self, workflow_id: str) -> Path:
        safe = workflow_id.replace("/", "_")
        return self.root / "workflows" / f"{safe}.json"

    def put_workflow(self, workflow_id: str, document: str) -> StoredWorkflow:
        """Store a document (re-serialized to canonical form when parseable);
        returns metadata including any validation violations."""
        violations: list = []
        try:
            wf = parse_workflow(document)
            document = serialize(wf)
            violations = [
                {"code": v.code, "element": v.element, "message": v.message}
                for v in validate(wf)
            ]
        except WorkflowParseError as e:
            raise
        path = self._wf_path(workflow_id)
        meta_path = path.with_suffix(".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            meta["version"] += 1
            meta["updated_at"] = _now()
        else:
            meta = {"created_at": _now(), "updated_at": _now(), "version": 1}
        path.write_text(document, encoding="utf-8")
        meta_path.write_text(json.dumps(meta, indent=2))
        return StoredWorkflow(
            workflow_id=workflow_id,
            document=document,
            created_at=meta["created_at"],
            updated_at=meta["updated_at"],
            version=meta["version"],
            violations=violations,
        )

    def get_workflow(self, workflow_id: str) -> StoredWorkflow | None:
        path = self._wf_path(workflow_id)
        if not path.exists():
            return None
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        document = path.read_text(encoding="utf-8")
        try:
            violations = [
                {"code": v.code, "element": v.element, "message": v.message}
                for v in validate(parse_workflow(document))
            ]
        except WorkflowParseError:
            violations = [{"code": "PARSE_ERROR", "element": workflow_id, "message": "unparseable"}]
        return StoredWorkflow(
            workflow_id=workflow_id,
            document=document,
            created_at=meta["created_at"],
            updated_at=meta["updated_at"],
            version=meta["version"],
            violations=violations,
        )

    def delete_workflow(self, workflow_id: str) -> bool:
        path = self._wf_path(workflow_id)
        if not path.exists():
            return False
        path.unlink()
        meta = path.with_suffix(".meta.json")
        if meta.exists():
            meta.unlink()
        return True

    def list_workflows(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "workflows").glob("*.json") if not p.name.endswith(".meta.json"))

    # -- runs ------------------------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def create_run(self, run_id: str, config: dict) -> LogWriter:
        d = self.run_dir(run_id)
        d.mkdir(parents=True, exist_ok=False)
        (d / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
        if "request_id" in config and config["request_id"]:
            self._request_ids[config["request_id"]] = run_id
        return LogWriter(d / "log.jsonl")

    def run_for_request(self, request_id: str) -> str | None:
        return self._request_ids.get(request_id)

    def _load_request_ids(self) -> None:
        for d in sorted((self.root / "runs").glob("*")):
            cfg = d / "config.json"
            if cfg.exists():
                config = json.loads(cfg.read_text())
                rid = config.get("request_id")
                if rid:
                    self._request_ids[rid] = d.name

    def list_runs(self) -> list[str]:
        return sorted(d.name for d in (self.root / "runs").glob("*") if d.is_dir())

    def load_run(self, run_id: str) -> RunRecord | None:
        """Replay a persisted log; chain-hash failures mark the run CORRUPT
        and keep the valid prefix for reporting."""
        d = self.run_dir(run_id)
        if not d.is_dir():
            return None
        config = json.loads((d / "config.json").read_text()) if (d / "config.json").exists() else {}
        log_path = d / "log.jsonl"
        text = log_path.read_text(encoding="utf-8") if log_path.exists() else ""
        try:
            events = decode_log(text, strict=True)
            corrupt = False
        except LogCorruption:
            events = decode_log(text, strict=False)
            corrupt = True
        run = Run.replay(events) if events else None
        return RunRecord(
            run_id=run_id, config=config, run=run, corrupt=corrupt, valid_prefix=events
        )
