/** Wire types mirroring the server's workflow document and run DTOs. */

export interface QuestionDoc {
  question_id: string;
  options: string[];
}

export interface PopulationFilterDoc {
  countries?: string[];
  min_trust: number;
}

export interface NodeDoc {
  node_id: string;
  title: string;
  instructions: string;
  question_schema: QuestionDoc[];
  judgments_per_unit: number;
  group_id: string;
  reward_per_judgment: number;
  population_filter?: PopulationFilterDoc;
}

export interface GroupDoc {
  group_id: string;
  label: string;
  color?: string;
}

export interface LambdaDoc {
  name: string;
  params: Record<string, unknown>;
}

export interface EdgeDoc {
  from: string;
  to: string;
  lambda: LambdaDoc;
}

export interface UnitDoc {
  unit_id: string;
  payload: Record<string, string | number | boolean>;
  gold_answer?: string;
}

export interface WorkflowDoc {
  workflow_id: string;
  groups: GroupDoc[];
  nodes: NodeDoc[];
  edges: EdgeDoc[];
  input_units: UnitDoc[];
}

export interface Violation {
  code: string;
  element: string;
  message: string;
}

export type RunStateName =
  | "DRAFT"
  | "DEPLOYED"
  | "RUNNING"
  | "PAUSED"
  | "COMPLETED"
  | "ABORTED"
  | "CORRUPT"
  | "EMPTY";

export interface NodeProgress {
  judged: number;
  target: number;
  closed: boolean;
}

export interface QuotaState {
  cap_per_value?: number;
  target_total?: number;
  committed?: Record<string, number>;
}

export interface RunStatus {
  run_id: string;
  state: RunStateName;
  stage: number;
  stages: number;
  nodes: Record<string, NodeProgress>;
  denials: Record<string, number>;
  quota: QuotaState;
  events: number;
  corrupt?: boolean;
}

export interface EventRecord {
  seq: number;
  time: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface EventPage {
  events: EventRecord[];
  next_seq: number;
  head_seq: number;
  terminal: boolean;
  corrupt: boolean;
}

export interface BiasReportDoc {
  returning_rate: number;
  crossover_rate: number;
  concentration: {
    shares: Record<string, number>;
    top_3_share: number;
    hhi: number;
  };
  per_condition: Record<string, Record<string, Record<string, number | null>>>;
  timezone_balance: {
    mean_local_hour: Record<string, number>;
    circular_variance: Record<string, number>;
    max_pairwise_mean_gap_hours: number;
  };
  unresolved_units: number;
  cross_group_merges: string[];
}

export interface DeployRequest {
  workflow_id: string;
  seed: number;
  adapter?: string;
  policy?: { design: string; returning_rule?: string };
  quota?: { attribute?: string; cap_fraction: number; ttl_minutes?: number };
  schedule?: Record<string, unknown>;
  request_id?: string;
  pace_events_per_second?: number;
  run_id?: string;
}

export const LAMBDA_NAMES = [
  "pass_through",
  "union",
  "balanced_split",
  "partition_by_key",
  "filter_by_field",
  "majority_vote",
] as const;

export type LambdaName = (typeof LAMBDA_NAMES)[number];

/** Params each combinator requires; the editor blocks saves when missing. */
export function lambdaParamError(lambda: LambdaDoc): string | null {
  const p = lambda.params ?? {};
  switch (lambda.name) {
    case "balanced_split": {
      const n = p["n_outputs"];
      if (typeof n !== "number" || !Number.isInteger(n) || n < 1)
        return "balanced_split needs integer n_outputs >= 1";
      return null;
    }
    case "partition_by_key":
      if (typeof p["key"] !== "string" || !p["key"]) return "partition_by_key needs a key";
      return null;
    case "filter_by_field":
      if (typeof p["key"] !== "string" || !p["key"]) return "filter_by_field needs a key";
      if (!Array.isArray(p["accepted"])) return "filter_by_field needs an accepted list";
      return null;
    default:
      return null;
  }
}
