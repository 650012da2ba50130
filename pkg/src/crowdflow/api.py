"""HTTP surface for the requester console and automation.

Single-tenant, no auth (an auth hook would wrap ``build_app``). Every
run's mutations funnel through its engine lock; reads serve snapshots.
Fingerprints never leave the service as anything but the opaque hashes
the adapters supplied.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import analytics
from .adapters.simulator import CrowdModel, CrowdSim, default_crowd_model, simulate
from .eligibility import Design, EligibilityPolicy, ReturningRule
from .engine import Engine
from .events import fmt_time, parse_time
from .orchestrator import DeployError, Run, schedule_from_doc
from .population import QuotaError, QuotaSpec
from .scenarios import START
from .scheduling import Action, IllegalTransition
from .store import DataStore, LogWriter
from .workflows import WorkflowParseError, parse_workflow


class LiveRun:
    def __init__(self, run: Run, engine: Engine, writer: LogWriter):
        self.run = run
        self.engine = engine
        self.writer = writer
        self.thread: threading.Thread | None = None


def _policy_from_body(doc: dict | None) -> EligibilityPolicy:
    doc = doc or {}
    design = Design(doc.get("design", "OPEN"))
    rule = ReturningRule(doc.get("returning_rule", "ALLOW_SAME_GROUP"))
    return EligibilityPolicy(design, rule)


def _quota_from_body(doc: dict | None, run_id: str) -> QuotaSpec | None:
    if not doc:
        return None
    return QuotaSpec(
        attribute=doc.get("attribute", "country"),
        cap_fraction=float(doc["cap_fraction"]),
        scope=run_id,
        ttl_minutes=float(doc.get("ttl_minutes", 30)),
    )


def build_app(store: DataStore) -> FastAPI:
    app = FastAPI(title="crowdflow", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    live: dict[str, LiveRun] = {}
    live_lock = threading.Lock()

    def get_live(run_id: str) -> LiveRun | None:
        with live_lock:
            return live.get(run_id)

    # -- workflows ---------------------------------------------------------

    @app.put("/workflows/{workflow_id}")
    def put_workflow(workflow_id: str, body: dict = Body(...)):
        document = json.dumps(body, ensure_ascii=False)
        try:
            stored = store.put_workflow(workflow_id, document)
        except WorkflowParseError as e:
            raise HTTPException(400, detail=str(e))
        return {
            "workflow_id": workflow_id,
            "version": stored.version,
            "violations": stored.violations,
        }

    @app.get("/workflows/{workflow_id}")
    def get_workflow(workflow_id: str):
        stored = store.get_workflow(workflow_id)
        if stored is None:
            raise HTTPException(404, detail=f"unknown workflow {workflow_id!r}")
        return {
            "workflow_id": workflow_id,
            "document": json.loads(stored.document),
            "version": stored.version,
            "created_at": stored.created_at,
            "updated_at": stored.updated_at,
            "violations": stored.violations,
        }

    @app.delete("/workflows/{workflow_id}")
    def delete_workflow(workflow_id: str):
        if not store.delete_workflow(workflow_id):
            raise HTTPException(404, detail=f"unknown workflow {workflow_id!r}")
        return JSONResponse(status_code=204, content=None)

    @app.get("/workflows")
    def list_workflows():
        return {"workflows": store.list_workflows()}

    @app.post("/workflows/{workflow_id}/validate")
    def validate_workflow(workflow_id: str):
        stored = store.get_workflow(workflow_id)
        if stored is None:
            raise HTTPException(404, detail=f"unknown workflow {workflow_id!r}")
        return {"violations": stored.violations}

    # -- runs ----------------------------------------------------------------

    @app.post("/runs")
    def deploy_run(body: dict = Body(...)):
        request_id = body.get("request_id")
        if request_id:
            existing = store.run_for_request(request_id)
            if existing:
                return {"run_id": existing, "deduplicated": True}

        workflow_id = body.get("workflow_id")
        if not workflow_id:
            raise HTTPException(400, detail="workflow_id required")
        stored = store.get_workflow(workflow_id)
        if stored is None:
            raise HTTPException(404, detail=f"unknown workflow {workflow_id!r}")
        try:
            workflow = parse_workflow(stored.document)
        except WorkflowParseError as e:
            raise HTTPException(422, detail=str(e))

        run_id = body.get("run_id") or f"r-{uuid.uuid4().hex[:10]}"
        seed = int(body.get("seed", 0))
        adapter_name = body.get("adapter", "sim")
        if adapter_name != "sim":
            raise HTTPException(400, detail=f"unknown adapter {adapter_name!r}")
        start = parse_time(body["start_time"]) if body.get("start_time") else START
        try:
            policy = _policy_from_body(body.get("policy"))
            quota = _quota_from_body(body.get("quota"), run_id)
            schedule = schedule_from_doc(body.get("schedule") or {})
        except (KeyError, ValueError) as e:
            raise HTTPException(400, detail=f"bad run configuration: {e}")

        try:
            run, events, commands = Run.deploy(
                workflow, policy, quota, schedule, seed, run_id, start, adapter_name
            )
        except DeployError as e:
            raise HTTPException(
                422,
                detail={
                    "message": "deploy refused",
                    "violations": [
                        {"code": v.code, "element": v.element, "message": v.message}
                        for v in e.violations
                    ] or [{"code": "INFEASIBLE", "element": run_id, "message": str(e)}],
                },
            )
        except QuotaError as e:
            raise HTTPException(
                422,
                detail={"message": str(e), "violations": [{"code": "INFEASIBLE_QUOTA", "element": run_id, "message": str(e)}]},
            )

        model_doc = body.get("model")
        model = CrowdModel.from_doc(model_doc) if model_doc else default_crowd_model(
            tuple(g.group_id for g in workflow.groups)
        )
        pace = float(body.get("pace_events_per_second") or 0)
        writer = store.create_run(
            run_id,
            {
                "workflow_id": workflow_id,
                "seed": seed,
                "adapter": adapter_name,
                "request_id": request_id,
                "start_time": fmt_time(start),
                "pace_events_per_second": pace,
            },
        )
        writer.append(events)
        sim = CrowdSim(model, start, seed)
        engine = Engine(run, sim, commands)
        engine.on_events(lambda evs: writer.append(evs))
        lr = LiveRun(run, engine, writer)
        with live_lock:
            live[run_id] = lr
        return {"run_id": run_id, "state": run.lifecycle.state.value}

    def _pump(lr: LiveRun, pace: float) -> None:
        pacer = None
        if pace > 0:
            delay = 1.0 / pace

            def pacer() -> None:
                time.sleep(delay)

        try:
            lr.engine.run_to_completion(pacer)
        finally:
            lr.writer.close()

    @app.post("/runs/{run_id}/actions")
    def run_action(run_id: str, body: dict = Body(...)):
        action_name = str(body.get("action", "")).lower()
        mapping = {
            "launch": Action.LAUNCH,
            "pause": Action.PAUSE,
            "resume": Action.RESUME,
            "abort": Action.ABORT,
        }
        if action_name not in mapping:
            raise HTTPException(400, detail=f"unknown action {action_name!r}")
        lr = get_live(run_id)
        if lr is None:
            record = store.load_run(run_id)
            if record is None:
                raise HTTPException(404, detail=f"unknown run {run_id!r}")
            raise HTTPException(
                409,
                detail="run is not live (recovered from disk); redeploy with the same seed to re-execute",
            )
        try:
            if action_name == "launch":
                if lr.thread is not None:
                    raise IllegalTransition(lr.run.lifecycle.state, Action.LAUNCH)
                config = json.loads((store.run_dir(run_id) / "config.json").read_text())
                lr.engine.launch(parse_time(config["start_time"]))
                pace = float(config.get("pace_events_per_second") or 0)
                lr.thread = threading.Thread(target=_pump, args=(lr, pace), daemon=True)
                lr.thread.start()
            else:
                lr.engine.action(mapping[action_name])
        except IllegalTransition as e:
            raise HTTPException(409, detail=str(e))
        return {"run_id": run_id, "state": lr.run.lifecycle.state.value}

    def _run_state(run_id: str) -> tuple[Run | None, bool, list]:
        """(run, corrupt, events) from the live table or disk."""
        lr = get_live(run_id)
        if lr is not None:
            with lr.engine.lock:
                return lr.run, False, list(lr.run.log)
        record = store.load_run(run_id)
        if record is None:
            raise HTTPException(404, detail=f"unknown run {run_id!r}")
        return record.run, record.corrupt, record.valid_prefix

    @app.get("/runs")
    def list_runs():
        return {"runs": store.list_runs()}

    @app.get("/runs/{run_id}")
    def run_status(run_id: str):
        run, corrupt, events = _run_state(run_id)
        if run is None:
            return {"run_id": run_id, "state": "CORRUPT" if corrupt else "EMPTY"}
        progress = run.progress()
        progress["corrupt"] = corrupt
        return progress

    @app.get("/runs/{run_id}/events")
    def run_events(
        run_id: str,
        since_seq: int = Query(0),
        limit: int = Query(500),
        wait_ms: int = Query(0),
    ):
        deadline = time.monotonic() + min(wait_ms, 30_000) / 1000
        while True:
            run, corrupt, events = _run_state(run_id)
            page = events[since_seq:since_seq + limit]
            terminal = run.lifecycle.terminal if run is not None else True
            if page or terminal or time.monotonic() >= deadline:
                return {
                    "events": [ev.body() for ev in page],
                    "next_seq": since_seq + len(page),
                    "head_seq": len(events),
                    "terminal": terminal,
                    "corrupt": corrupt,
                }
            time.sleep(0.05)

    @app.get("/runs/{run_id}/report")
    def run_report(run_id: str, fmt: str = Query("doc")):
        run, corrupt, events = _run_state(run_id)
        try:
            report = analytics.bias_report([events])
        except analytics.EmptyLogError:
            raise HTTPException(409, detail="EMPTY_LOG: no judgments recorded yet")
        if fmt == "table":
            return {"rows": report.flat_table(), "corrupt": corrupt}
        return report.to_doc() | {"corrupt": corrupt}

    # -- dry-run simulation ------------------------------------------------------

    @app.post("/simulate")
    def simulate_dry_run(body: dict = Body(...)):
        model = CrowdModel.from_doc(body["model"]) if body.get("model") else None
        try:
            if body.get("workflow"):
                workflow = parse_workflow(json.dumps(body["workflow"]))
            elif body.get("workflow_id"):
                stored = store.get_workflow(body["workflow_id"])
                if stored is None:
                    raise HTTPException(404, detail="unknown workflow")
                workflow = parse_workflow(stored.document)
            else:
                raise HTTPException(400, detail="workflow or workflow_id required")
        except WorkflowParseError as e:
            raise HTTPException(400, detail=str(e))
        if model is None:
            model = default_crowd_model(tuple(g.group_id for g in workflow.groups))
        hours = float(body.get("hours", 4))
        seed = int(body.get("seed", 0))
        start = parse_time(body["start_time"]) if body.get("start_time") else START
        from datetime import timedelta

        tasks = [(n, list(workflow.input_units)) for n in workflow.nodes]
        events = simulate(model, tasks, start, start + timedelta(hours=hours), seed)
        return {
            "events": [
                {
                    "kind": ev.kind.value,
                    "time": fmt_time(ev.time),
                    "task_ref": ev.task_ref,
                    "session_id": ev.session_id,
                    "platform_worker_id": ev.platform_worker_id,
                    "country": ev.country,
                    "unit_id": ev.unit_id,
                    "answer": ev.answer,
                    "decision_time_seconds": ev.decision_time_seconds,
                }
                for ev in events
            ],
            "count": len(events),
        }

    @app.get("/health")
    def health():
        return {"ok": True, "data_dir": str(store.root)}

    return app
