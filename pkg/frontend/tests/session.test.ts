/**
 * Scripted end-to-end session against a real server: draw the stock
 * two-condition workflow, save it, deploy on the simulator with
 * between-subjects eligibility and a country quota, pause and resume the
 * live run, and read the bias report and quota gauges off the API.
 *
 * Spawns `python3 -m crowdflow.cli serve` on a scratch data dir.
 */
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { RunConsole, quotaGauges } from "../src/console.js";
import { CanvasModel, drawBetweenSubjectsExample } from "../src/editor.js";

const PORT = 8741;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let dataDir = "";

async function waitForHealth(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("server did not come up");
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "crowdflow-ui-"));
  server = spawn(
    "python3",
    ["-m", "crowdflow.cli", "serve", "--listen", `127.0.0.1:${PORT}`, "--data-dir", dataDir],
    { cwd: join(__dirname, "..", ".."), stdio: "ignore" },
  );
  await waitForHealth();
}, 30000);

afterAll(() => {
  server?.kill();
  if (dataDir) rmSync(dataDir, { recursive: true, force: true });
});

describe("scripted requester session", () => {
  const api = new ApiClient(BASE);
  const model = new CanvasModel("between-subjects-pair");
  let runId = "";

  it("draws and saves the example workflow; server validates clean", async () => {
    drawBetweenSubjectsExample(model);
    expect(model.fieldErrors()).toEqual([]);
    const result = await api.putWorkflow(model.workflowId, model.exportDocument());
    model.setServerViolations(result.violations);
    expect(result.violations).toEqual([]);
    expect(result.version).toBe(1);
  });

  it("editor export -> server -> import round-trips the semantic document", async () => {
    const stored = await api.getWorkflow(model.workflowId);
    const reimported = new CanvasModel("scratch");
    reimported.importDocument(stored.document);
    // canonical form normalizes field order, not content
    expect(reimported.exportDocument().nodes).toEqual(
      expect.arrayContaining(model.exportDocument().nodes),
    );
    expect(reimported.exportDocument().groups).toHaveLength(2);
    expect(reimported.exportDocument().edges).toHaveLength(4);
    const secondPut = await api.putWorkflow("roundtrip-copy", reimported.exportDocument());
    expect(secondPut.violations).toEqual([]);
  });

  it("deploys, pauses, resumes, and completes against the simulator", async () => {
    const deployed = await api.deployRun({
      workflow_id: model.workflowId,
      seed: 5,
      policy: { design: "BETWEEN_SUBJECTS", returning_rule: "ALLOW_SAME_GROUP" },
      quota: { cap_fraction: 0.2 },
      pace_events_per_second: 80,
    });
    runId = deployed.run_id;
    expect(deployed.state).toBe("DEPLOYED");

    const console_ = new RunConsole(api, runId, 50);
    await console_.refresh();
    expect(console_.actions).toEqual(["launch"]);

    await console_.act("launch");
    expect(console_.state).toBe("RUNNING");

    await console_.act("pause");
    expect(console_.state).toBe("PAUSED");
    expect(console_.actions).toEqual(["resume", "abort"]);
    const pausedEvents = console_.events.length;
    await new Promise((r) => setTimeout(r, 300));
    await console_.refresh();
    expect(console_.events.length).toBeLessThanOrEqual(pausedEvents + 2); // frozen while paused

    await console_.act("resume");
    expect(console_.state).toBe("RUNNING");

    const deadline = Date.now() + 60000;
    while (console_.state !== "COMPLETED" && Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 100));
      await console_.refresh();
    }
    expect(console_.state).toBe("COMPLETED");
    for (const row of console_.progressRows()) {
      expect(row.judged).toBe(row.target);
    }
  }, 90000);

  it("reports crossover 0.0 and a saturated quota gauge", async () => {
    const report = await api.runReport(runId);
    expect(report.crossover_rate).toBe(0.0);

    const status = await api.runStatus(runId);
    const gauges = quotaGauges(status);
    expect(gauges.length).toBeGreaterThan(0);
    expect(gauges[0].saturated).toBe(true); // the dominant country hit its cap
    expect(status.denials["DENY_QUOTA"] ?? 0).toBeGreaterThan(0);
  }, 30000);
});
