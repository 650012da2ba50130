/** Thin typed client for the crowdflow HTTP API. All console data comes
 * through here; nothing is recomputed client-side. */

import type {
  BiasReportDoc,
  DeployRequest,
  EventPage,
  RunStatus,
  Violation,
  WorkflowDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const parsed = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      throw new ApiError(resp.status, parsed?.detail ?? parsed);
    }
    return parsed as T;
  }

  putWorkflow(id: string, doc: WorkflowDoc): Promise<{ workflow_id: string; version: number; violations: Violation[] }> {
    return this.request("PUT", `/workflows/${encodeURIComponent(id)}`, doc);
  }

  getWorkflow(id: string): Promise<{ workflow_id: string; document: WorkflowDoc; version: number; violations: Violation[] }> {
    return this.request("GET", `/workflows/${encodeURIComponent(id)}`);
  }

  deleteWorkflow(id: string): Promise<void> {
    return this.request("DELETE", `/workflows/${encodeURIComponent(id)}`);
  }

  validateWorkflow(id: string): Promise<{ violations: Violation[] }> {
    return this.request("POST", `/workflows/${encodeURIComponent(id)}/validate`);
  }

  deployRun(req: DeployRequest): Promise<{ run_id: string; state: string }> {
    return this.request("POST", "/runs", req);
  }

  runAction(runId: string, action: "launch" | "pause" | "resume" | "abort"): Promise<{ run_id: string; state: string }> {
    return this.request("POST", `/runs/${encodeURIComponent(runId)}/actions`, { action });
  }

  runStatus(runId: string): Promise<RunStatus> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}`);
  }

  runEvents(runId: string, sinceSeq: number, limit = 200): Promise<EventPage> {
    return this.request(
      "GET",
      `/runs/${encodeURIComponent(runId)}/events?since_seq=${sinceSeq}&limit=${limit}`,
    );
  }

  runReport(runId: string): Promise<BiasReportDoc> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/report`);
  }
}
