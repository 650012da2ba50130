/** Browser shell: wires the editor canvas and run console into the page.
 * Everything testable lives in the imported modules; this file is DOM glue. */

import { ApiClient } from "./api.js";
import { renderSvg } from "./canvas.js";
import { RunConsole, renderGauges, renderStateChip } from "./console.js";
import { CanvasModel, drawBetweenSubjectsExample } from "./editor.js";

const api = new ApiClient(localStorage.getItem("crowdflow-api") ?? "http://127.0.0.1:8676");

const localStore = {
  load: (key: string) => {
    const raw = localStorage.getItem(key);
    return raw ? JSON.parse(raw) : null;
  },
  save: (key: string, layout: unknown) => localStorage.setItem(key, JSON.stringify(layout)),
};

const model = new CanvasModel("between-subjects-pair", localStore);
drawBetweenSubjectsExample(model);

const canvasEl = document.getElementById("canvas")!;
const violationsEl = document.getElementById("violations")!;
const consoleEl = document.getElementById("console")!;
const reportEl = document.getElementById("report")!;

function redraw(): void {
  canvasEl.innerHTML = renderSvg(model);
  violationsEl.innerHTML = model.inlineViolations
    .map((v) => `<li><code>${v.code}</code> ${v.element}: ${v.message}</li>`)
    .join("");
}

document.getElementById("save")!.addEventListener("click", async () => {
  const errors = model.fieldErrors();
  if (errors.length) {
    violationsEl.innerHTML = errors.map((e) => `<li>${e.element}: ${e.message}</li>`).join("");
    return;
  }
  const result = await api.putWorkflow(model.workflowId, model.exportDocument());
  model.setServerViolations(result.violations);
  model.persistLayout(result.version);
  model.dirty = false;
  redraw();
});

let activeConsole: RunConsole | null = null;

async function pollLoop(): Promise<void> {
  if (!activeConsole) return;
  const snap = await activeConsole.refresh(true);
  const denials = Object.entries(activeConsole.denialCounts())
    .map(([r, n]) => `<li>${r}: ${n}</li>`)
    .join("");
  const progress = activeConsole
    .progressRows()
    .map((r) => `<div>${r.node} <progress max="100" value="${r.pct}"></progress> ${r.judged}/${r.target}</div>`)
    .join("");
  consoleEl.innerHTML =
    renderStateChip(snap.status.state) +
    progress +
    renderGauges(activeConsole.gauges) +
    `<ul>${denials}</ul>` +
    activeConsole.actions
      .map((a) => `<button data-action="${a}">${a}</button>`)
      .join("");
  consoleEl.querySelectorAll("button[data-action]").forEach((btn) =>
    btn.addEventListener("click", () => activeConsole!.act(btn.getAttribute("data-action") as never)),
  );
  if (activeConsole.report) {
    reportEl.textContent = JSON.stringify(activeConsole.report, null, 2);
  }
  const delay = activeConsole.nextPollMs();
  if (delay !== null) setTimeout(pollLoop, delay);
}

document.getElementById("deploy")!.addEventListener("click", async () => {
  const { run_id } = await api.deployRun({
    workflow_id: model.workflowId,
    seed: Number((document.getElementById("seed") as HTMLInputElement).value || "1"),
    policy: { design: "BETWEEN_SUBJECTS", returning_rule: "ALLOW_SAME_GROUP" },
    quota: { cap_fraction: 0.2 },
    pace_events_per_second: 40,
  });
  activeConsole = new RunConsole(api, run_id);
  await api.runAction(run_id, "launch");
  pollLoop();
});

redraw();
