/** Live run console: lifecycle chip, per-node progress, denial counters,
 * quota gauges, event feed, and the bias report panel.
 *
 * Every rendered number is the API's number; the console never recomputes
 * metrics client-side. Polling backs off when the run is paused or done.
 */

import type { ApiClient } from "./api.js";
import type { BiasReportDoc, EventRecord, RunStateName, RunStatus } from "./types.js";

export type UiAction = "launch" | "pause" | "resume" | "abort";

/** Buttons enabled per lifecycle state, mirroring the server's table: a
 * fresh snapshot can never produce a 409. */
export function enabledActions(state: RunStateName): UiAction[] {
  switch (state) {
    case "DEPLOYED":
      return ["launch"];
    case "RUNNING":
      return ["pause", "abort"];
    case "PAUSED":
      return ["resume", "abort"];
    default:
      return [];
  }
}

export interface QuotaGauge {
  value: string;
  committed: number;
  cap: number;
  fraction: number; // committed / cap, clamped to 1
  saturated: boolean;
}

export function quotaGauges(status: RunStatus): QuotaGauge[] {
  const q = status.quota;
  if (!q || !q.cap_per_value || !q.committed) return [];
  const cap = q.cap_per_value;
  return Object.entries(q.committed)
    .map(([value, committed]) => ({
      value,
      committed,
      cap,
      fraction: Math.min(committed / cap, 1),
      saturated: committed >= cap,
    }))
    .sort((a, b) => b.committed - a.committed);
}

export interface ConsoleSnapshot {
  status: RunStatus;
  newEvents: EventRecord[];
  report: BiasReportDoc | null;
}

export class RunConsole {
  private sinceSeq = 0;
  events: EventRecord[] = [];
  status: RunStatus | null = null;
  report: BiasReportDoc | null = null;

  constructor(
    private api: ApiClient,
    private runId: string,
    private basePollMs = 2000,
  ) {}

  get state(): RunStateName {
    return this.status?.state ?? "DRAFT";
  }

  get actions(): UiAction[] {
    return enabledActions(this.state);
  }

  get gauges(): QuotaGauge[] {
    return this.status ? quotaGauges(this.status) : [];
  }

  /** Interval for the next poll: steady while running, backed off when
   * paused, stopped when terminal. */
  nextPollMs(): number | null {
    switch (this.state) {
      case "COMPLETED":
      case "ABORTED":
      case "CORRUPT":
        return null;
      case "PAUSED":
        return this.basePollMs * 4;
      default:
        return this.basePollMs;
    }
  }

  async act(action: UiAction): Promise<void> {
    await this.api.runAction(this.runId, action);
    await this.refresh();
  }

  async refresh(withReport = false): Promise<ConsoleSnapshot> {
    this.status = await this.api.runStatus(this.runId);
    const page = await this.api.runEvents(this.runId, this.sinceSeq);
    this.events.push(...page.events);
    this.sinceSeq = page.next_seq;
    if (withReport || this.status.state === "COMPLETED") {
      try {
        this.report = await this.api.runReport(this.runId);
      } catch {
        this.report = null; // no judgments yet
      }
    }
    return { status: this.status, newEvents: page.events, report: this.report };
  }

  denialCounts(): Record<string, number> {
    return this.status?.denials ?? {};
  }

  progressRows(): { node: string; judged: number; target: number; pct: number; closed: boolean }[] {
    if (!this.status) return [];
    return Object.entries(this.status.nodes).map(([node, p]) => ({
      node,
      judged: p.judged,
      target: p.target,
      pct: p.target ? Math.round((100 * p.judged) / p.target) : 0,
      closed: p.closed,
    }));
  }
}

export function renderStateChip(state: RunStateName, cause?: string): string {
  const label = cause && state === "PAUSED" ? `${state}(${cause})` : state;
  const tone =
    state === "RUNNING" ? "#1a6" : state === "PAUSED" ? "#c80" : state === "COMPLETED" ? "#16c" : "#666";
  return `<span class="chip" style="background:${tone}">${label}</span>`;
}

export function renderGauges(gauges: QuotaGauge[]): string {
  return gauges
    .map(
      (g) =>
        `<div class="gauge${g.saturated ? " saturated" : ""}" data-country="${g.value}">` +
        `<span>${g.value}</span><progress max="1" value="${g.fraction.toFixed(3)}"></progress>` +
        `<span>${g.committed}/${g.cap}</span></div>`,
    )
    .join("");
}
