"""
Event sourcing, replay, and the HTTP service
============================================

Every run is an append-only, hash-chained event log. State is a fold over
that log: replaying it reconstructs the run exactly, truncating it gives
the state at that moment, and tampering with a line is detected.

The same machinery backs the HTTP API the requester console uses.
"""
import json
import tempfile
from pathlib import Path

from crowdflow import Run, decode_log, encode_log
from crowdflow.scenarios import chain_workflow, execute
from crowdflow.eligibility import Design, EligibilityPolicy, ReturningRule

policy = EligibilityPolicy(Design.OPEN, ReturningRule.ALLOW_SAME_GROUP)
run, log = execute(chain_workflow(n_tasks=2, n_groups=1, n_units=10, k=2),
                   policy, seed=42, run_id="replay-demo")
print(f"live run finished: {run.lifecycle.state.value}, {len(log)} events")
print("state hash:", run.state_hash()[:16])

# Full replay reproduces the exact final state.
replayed = Run.replay(list(log))
print("replayed hash: ", replayed.state_hash()[:16], "(equal)" if replayed.state_hash() == run.state_hash() else "(MISMATCH)")

# A prefix replays to the state the live run passed through at that seq.
halfway = Run.replay(list(log[: len(log) // 2]))
print(f"prefix state at seq {len(log) // 2}: {halfway.lifecycle.state.value}, "
      f"{sum(halfway.node_states[n].total_committed for n in halfway.node_states)} judgments so far")

# The wire format is one JSON object per line with a chain hash.
text = encode_log(log)
line = json.loads(text.splitlines()[5])
print("log line keys:", sorted(line))
assert decode_log(text) == list(log)

# Tampering breaks the chain.
lines = text.splitlines()
bad = json.loads(lines[10]); bad["payload"]["forged"] = True
lines[10] = json.dumps(bad)
try:
    decode_log("\n".join(lines))
except Exception as e:
    print("tamper detection:", e)

# The HTTP service wraps all of this; drive one request cycle in-process.
from fastapi.testclient import TestClient
from crowdflow.api import build_app
from crowdflow.store import DataStore
from crowdflow.workflows import workflow_to_doc

with tempfile.TemporaryDirectory() as tmp:
    client = TestClient(build_app(DataStore(Path(tmp))))
    doc = workflow_to_doc(chain_workflow(n_tasks=2, n_groups=1, n_units=6, k=1, workflow_id="svc-demo"))
    print("PUT /workflows:", client.put("/workflows/svc-demo", json=doc).json())
    run_id = client.post("/runs", json={"workflow_id": "svc-demo", "seed": 1}).json()["run_id"]
    client.post(f"/runs/{run_id}/actions", json={"action": "launch"})
    import time
    while client.get(f"/runs/{run_id}").json()["state"] not in ("COMPLETED", "ABORTED"):
        time.sleep(0.05)
    page = client.get(f"/runs/{run_id}/events", params={"since_seq": 0, "limit": 3}).json()
    print("first events:", [e["kind"] for e in page["events"]], "head:", page["head_seq"])
    rep = client.get(f"/runs/{run_id}/report").json()
    print("report crossover:", rep["crossover_rate"])
