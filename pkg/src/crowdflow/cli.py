"""Command line: validate and deploy workflow documents, drive runs against
the simulator, print bias reports, dry-run the marketplace, and serve the
HTTP API.

Exit codes: 0 success, 1 validation failure, 2 transport/storage error.
"""
from __future__ import annotations

import json
import sys
from datetime import timedelta

import click

from . import analytics
from .adapters.simulator import CrowdModel, CrowdSim, default_crowd_model, simulate
from .eligibility import Design, EligibilityPolicy, ReturningRule
from .engine import Engine
from .events import fmt_time, parse_time
from .orchestrator import DeployError, Run, schedule_from_doc
from .population import QuotaError, QuotaSpec
from .scenarios import START, paired_conditions_workflow
from .scheduling import Action, Cause, IllegalTransition, RunState, Schedule
from .store import DataStore, LogWriter
from .workflows import WorkflowParseError, parse_workflow, serialize, validate as validate_wf

STORAGE_ERROR = 2
VALIDATION_ERROR = 1

_POLICY_SHORT = {
    "open": Design.OPEN,
    "between": Design.BETWEEN_SUBJECTS,
    "within": Design.WITHIN_SUBJECTS,
}
_RULE_SHORT = {
    "deny_all": ReturningRule.DENY_ALL_RETURNING,
    "same_task": ReturningRule.ALLOW_SAME_TASK,
    "same_group": ReturningRule.ALLOW_SAME_GROUP,
}


def _parse_policy(text: str) -> EligibilityPolicy:
    design, _, rule = text.partition(":")
    if design not in _POLICY_SHORT:
        raise click.BadParameter(f"policy must be one of {sorted(_POLICY_SHORT)}")
    if rule and rule not in _RULE_SHORT:
        raise click.BadParameter(f"returning rule must be one of {sorted(_RULE_SHORT)}")
    return EligibilityPolicy(
        _POLICY_SHORT[design],
        _RULE_SHORT[rule] if rule else ReturningRule.ALLOW_SAME_GROUP,
    )


def _parse_quota(text: str, run_id: str) -> QuotaSpec:
    parts = text.split(":")
    if len(parts) < 2:
        raise click.BadParameter("quota format is attribute:cap_fraction[:ttl_minutes]")
    return QuotaSpec(
        attribute=parts[0],
        cap_fraction=float(parts[1]),
        scope=run_id,
        ttl_minutes=float(parts[2]) if len(parts) > 2 else 30.0,
    )


@click.group()
def main() -> None:
    """Controlled crowdsourcing experiments at desk scale."""


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def validate(file: str) -> None:
    """Parse and validate a workflow document."""
    try:
        text = open(file, encoding="utf-8").read()
        wf = parse_workflow(text)
    except WorkflowParseError as e:
        click.echo(f"parse error: {e}", err=True)
        sys.exit(VALIDATION_ERROR)
    violations = validate_wf(wf)
    if violations:
        for v in violations:
            click.echo(str(v), err=True)
        sys.exit(VALIDATION_ERROR)
    click.echo("OK")


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--adapter", default="sim", show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--policy", default="open", show_default=True,
              help="open|between|within[:deny_all|:same_task|:same_group]")
@click.option("--quota", default=None, help="attribute:cap_fraction[:ttl_minutes]")
@click.option("--schedule", "schedule_file", default=None, type=click.Path(exists=True),
              help="JSON file with windows[] or recurring{}")
@click.option("--model", "model_file", default=None, type=click.Path(exists=True),
              help="crowd model JSON (defaults to the calibrated reference model)")
@click.option("--run-id", default=None)
@click.option("--start", "start_time", default=None, help="RFC3339 sim start (fixed default keeps runs reproducible)")
@click.option("--data-dir", default=None, type=click.Path())
def deploy(file, adapter, seed, policy, quota, schedule_file, model_file, run_id, start_time, data_dir) -> None:
    """Deploy a workflow as a new run (DEPLOYED state; launch it next)."""
    if adapter != "sim":
        click.echo(f"unknown adapter {adapter!r} (the remote adapter has no CLI binding)", err=True)
        sys.exit(STORAGE_ERROR)
    store = DataStore(data_dir)
    try:
        wf = parse_workflow(open(file, encoding="utf-8").read())
    except WorkflowParseError as e:
        click.echo(f"parse error: {e}", err=True)
        sys.exit(VALIDATION_ERROR)
    run_id = run_id or f"run-{len(store.list_runs()) + 1:04d}-s{seed}"
    start = parse_time(start_time) if start_time else START
    pol = _parse_policy(policy)
    q = _parse_quota(quota, run_id) if quota else None
    sched = Schedule()
    if schedule_file:
        sched = schedule_from_doc(json.loads(open(schedule_file).read()))
    model = (
        CrowdModel.loads(open(model_file).read())
        if model_file
        else default_crowd_model(tuple(g.group_id for g in wf.groups))
    )
    try:
        run, events, _ = Run.deploy(wf, pol, q, sched, seed, run_id, start, adapter)
    except (DeployError, QuotaError) as e:
        click.echo(f"deploy refused: {e}", err=True)
        sys.exit(VALIDATION_ERROR)
    store.put_workflow(wf.workflow_id, serialize(wf))
    try:
        writer = store.create_run(
            run_id,
            {
                "workflow_id": wf.workflow_id,
                "seed": seed,
                "adapter": adapter,
                "start_time": fmt_time(start),
                "model": model.to_doc(),
            },
        )
    except OSError as e:
        click.echo(f"storage error: {e}", err=True)
        sys.exit(STORAGE_ERROR)
    writer.append(events)
    writer.close()
    click.echo(run_id)


@main.command(name="run")
@click.argument("run_id")
@click.argument("action", type=click.Choice(["launch", "pause", "resume", "abort"]))
@click.option("--data-dir", default=None, type=click.Path())
def run_action(run_id: str, action: str, data_dir) -> None:
    """Apply a lifecycle action; launch drives simulator runs to completion."""
    store = DataStore(data_dir)
    record = store.load_run(run_id)
    if record is None:
        click.echo(f"unknown run {run_id!r}", err=True)
        sys.exit(STORAGE_ERROR)
    if record.corrupt:
        click.echo("run log is CORRUPT; actions refused", err=True)
        sys.exit(STORAGE_ERROR)
    run = record.run
    if run is None:
        click.echo("run has no events", err=True)
        sys.exit(STORAGE_ERROR)

    if action != "launch":
        # Synchronous local runs only pause/resume/abort mid-flight via the
        # HTTP service; here the states those actions need never persist.
        try:
            run.apply_action(
                {
                    "pause": Action.PAUSE,
                    "resume": Action.RESUME,
                    "abort": Action.ABORT,
                }[action],
                Cause.MANUAL,
                run.log[-1].time,
            )
        except IllegalTransition as e:
            click.echo(str(e), err=True)
            sys.exit(VALIDATION_ERROR)
        writer = LogWriter.resume(store.run_dir(run_id) / "log.jsonl")
        writer.append([run.log[-1]])
        writer.close()
        click.echo(run.lifecycle.state.value)
        return

    if run.lifecycle.state is not RunState.DEPLOYED:
        click.echo(f"launch is illegal from state {run.lifecycle.state.value}", err=True)
        sys.exit(VALIDATION_ERROR)
    config = record.config
    model = CrowdModel.from_doc(config["model"])
    start = parse_time(config["start_time"])
    sim = CrowdSim(model, start, config["seed"])
    engine = Engine(run, sim, run._create_commands_for_stage(run.stage_index))
    writer = LogWriter.resume(store.run_dir(run_id) / "log.jsonl")
    engine.on_events(writer.append)
    engine.launch(start)
    engine.run_to_completion()
    writer.close()
    p = run.progress()
    judged = sum(n["judged"] for n in p["nodes"].values())
    click.echo(f"{run.lifecycle.state.value} after {p['events']} events, {judged} judgments")


@main.command()
@click.argument("run_id")
@click.option("--format", "fmt", type=click.Choice(["doc", "table"]), default="doc", show_default=True)
@click.option("--data-dir", default=None, type=click.Path())
def report(run_id: str, fmt: str, data_dir) -> None:
    """Print the bias report for a stored run."""
    store = DataStore(data_dir)
    record = store.load_run(run_id)
    if record is None:
        click.echo(f"unknown run {run_id!r}", err=True)
        sys.exit(STORAGE_ERROR)
    try:
        rep = analytics.bias_report([record.valid_prefix])
    except analytics.EmptyLogError:
        click.echo("EMPTY_LOG: run has no judgments", err=True)
        sys.exit(VALIDATION_ERROR)
    if record.corrupt:
        click.echo("warning: log corrupt, report covers the valid prefix", err=True)
    if fmt == "doc":
        click.echo(json.dumps(rep.to_doc(), indent=2, sort_keys=True))
        return
    rows = rep.flat_table()
    header = list(rows[0].keys()) if rows else []
    click.echo("\t".join(header))
    for row in rows:
        click.echo("\t".join(str(row[h]) for h in header))


@main.command(name="simulate")
@click.option("--model", "model_file", default=None, type=click.Path(exists=True))
@click.option("--workflow", "workflow_file", default=None, type=click.Path(exists=True))
@click.option("--hours", default=4.0, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--summary/--events", default=False, help="print a summary instead of JSONL events")
def simulate_cmd(model_file, workflow_file, hours, seed, summary) -> None:
    """Dry-run the marketplace simulator without admission control."""
    if workflow_file:
        wf = parse_workflow(open(workflow_file, encoding="utf-8").read())
    else:
        wf = paired_conditions_workflow()
    model = (
        CrowdModel.loads(open(model_file).read())
        if model_file
        else default_crowd_model(tuple(g.group_id for g in wf.groups))
    )
    tasks = [(n, list(wf.input_units)) for n in wf.nodes]
    events = simulate(model, tasks, START, START + timedelta(hours=hours), seed)
    if summary:
        kinds: dict[str, int] = {}
        for ev in events:
            kinds[ev.kind.value] = kinds.get(ev.kind.value, 0) + 1
        click.echo(json.dumps({"count": len(events), "kinds": kinds}, sort_keys=True))
        return
    for ev in events:
        click.echo(
            json.dumps(
                {
                    "kind": ev.kind.value,
                    "time": fmt_time(ev.time),
                    "task_ref": ev.task_ref,
                    "worker": ev.platform_worker_id,
                    "country": ev.country,
                    "unit_id": ev.unit_id,
                    "answer": ev.answer,
                    "decision_time_seconds": ev.decision_time_seconds,
                },
                sort_keys=True,
            )
        )


@main.command()
@click.option("--listen", default="127.0.0.1:8676", show_default=True, help="host:port")
@click.option("--data-dir", default=None, type=click.Path())
def serve(listen: str, data_dir) -> None:
    """Serve the HTTP API (workflow store, run control, reports)."""
    import uvicorn

    from .api import build_app

    host, _, port = listen.partition(":")
    app = build_app(DataStore(data_dir))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8676), log_level="warning")


if __name__ == "__main__":
    main()
