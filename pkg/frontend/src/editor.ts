/** Canvas workflow editor model.
 *
 * Holds the semantic document (what the server stores) and the layout
 * (node positions, colors, selection) separately: exports carry no layout,
 * and layout persists client-side keyed by workflow id + version, so the
 * stored document stays diffable.
 */

import type {
  EdgeDoc,
  GroupDoc,
  LambdaDoc,
  NodeDoc,
  UnitDoc,
  Violation,
  WorkflowDoc,
} from "./types.js";
import { lambdaParamError } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export interface Layout {
  positions: Record<string, Point>;
}

export interface LayoutStore {
  load(key: string): Layout | null;
  save(key: string, layout: Layout): void;
}

/** localStorage-backed store in the browser; tests inject a map. */
export class MemoryLayoutStore implements LayoutStore {
  private data = new Map<string, Layout>();
  load(key: string): Layout | null {
    return this.data.get(key) ?? null;
  }
  save(key: string, layout: Layout): void {
    this.data.set(key, layout);
  }
}

export interface FieldError {
  element: string;
  message: string;
}

const SOURCE = "$source";
const SINK = "$sink";

export class CanvasModel {
  workflowId: string;
  groups: GroupDoc[] = [];
  nodes: NodeDoc[] = [];
  edges: EdgeDoc[] = [];
  units: UnitDoc[] = [];
  layout: Layout = { positions: {} };
  selection: string | null = null;
  /** Server-reported violations mapped onto elements for inline display. */
  inlineViolations: Violation[] = [];
  dirty = false;

  constructor(
    workflowId: string,
    private layoutStore: LayoutStore = new MemoryLayoutStore(),
  ) {
    this.workflowId = workflowId;
  }

  // -- editing operations -------------------------------------------------

  addGroup(group: GroupDoc): void {
    this.groups.push(group);
    this.dirty = true;
  }

  addNode(node: NodeDoc, at: Point): void {
    this.nodes.push(node);
    this.layout.positions[node.node_id] = at;
    this.dirty = true;
  }

  moveNode(nodeId: string, to: Point): void {
    this.layout.positions[nodeId] = to; // layout-only: document untouched
  }

  connect(from: string, to: string, lambda: LambdaDoc): FieldError | null {
    const err = lambdaParamError(lambda);
    if (err) return { element: `${from}->${to}`, message: err };
    this.edges.push({ from, to, lambda });
    this.dirty = true;
    return null;
  }

  removeEdge(from: string, to: string): void {
    this.edges = this.edges.filter((e) => !(e.from === from && e.to === to));
    this.dirty = true;
  }

  setUnits(units: UnitDoc[]): void {
    this.units = units;
    this.dirty = true;
  }

  select(id: string | null): void {
    this.selection = id;
  }

  groupColor(groupId: string): string {
    const palette = ["#7bd389", "#d3837b", "#7b9fd3", "#d3c67b", "#b57bd3", "#7bd3c9"];
    const idx = this.groups.findIndex((g) => g.group_id === groupId);
    const g = this.groups[idx];
    return g?.color ?? palette[Math.max(idx, 0) % palette.length];
  }

  // -- field-level checks that block saving --------------------------------

  fieldErrors(): FieldError[] {
    const errors: FieldError[] = [];
    for (const e of this.edges) {
      const bad = lambdaParamError(e.lambda);
      if (bad) errors.push({ element: `${e.from}->${e.to}`, message: bad });
    }
    for (const n of this.nodes) {
      if (n.judgments_per_unit < 1)
        errors.push({ element: n.node_id, message: "judgments per unit must be >= 1" });
      if (!n.question_schema.length || n.question_schema.some((q) => !q.options.length))
        errors.push({ element: n.node_id, message: "every question needs answer options" });
    }
    return errors;
  }

  /** Local cycle warning for immediate feedback (the server remains the
   * validation authority). */
  localCycle(): string[] | null {
    const adj = new Map<string, string[]>();
    for (const n of this.nodes) adj.set(n.node_id, []);
    for (const e of this.edges) {
      if (adj.has(e.from) && adj.has(e.to)) adj.get(e.from)!.push(e.to);
    }
    const state = new Map<string, number>();
    const stack: string[] = [];
    const visit = (n: string): string[] | null => {
      state.set(n, 1);
      stack.push(n);
      for (const m of adj.get(n) ?? []) {
        if (state.get(m) === 1) return stack.slice(stack.indexOf(m));
        if (!state.has(m)) {
          const found = visit(m);
          if (found) return found;
        }
      }
      stack.pop();
      state.set(n, 2);
      return null;
    };
    for (const n of adj.keys()) {
      if (!state.has(n)) {
        const found = visit(n);
        if (found) return found;
      }
    }
    return null;
  }

  // -- document round trip ---------------------------------------------------

  /** Semantic document only; always parseable by the server when the
   * field checks pass. */
  exportDocument(): WorkflowDoc {
    return {
      workflow_id: this.workflowId,
      groups: this.groups.map((g) => ({ ...g })),
      nodes: this.nodes.map((n) => ({
        ...n,
        question_schema: n.question_schema.map((q) => ({ ...q, options: [...q.options] })),
      })),
      edges: this.edges.map((e) => ({ ...e, lambda: { ...e.lambda, params: { ...e.lambda.params } } })),
      input_units: this.units.map((u) => ({ ...u, payload: { ...u.payload } })),
    };
  }

  importDocument(doc: WorkflowDoc): void {
    this.workflowId = doc.workflow_id;
    this.groups = doc.groups.map((g) => ({ ...g }));
    this.nodes = doc.nodes.map((n) => ({ ...n }));
    this.edges = doc.edges.map((e) => ({ ...e }));
    this.units = (doc.input_units ?? []).map((u) => ({ ...u }));
    // Missing positions get a simple staged auto-layout.
    const stages = this.stageOf();
    const perStage = new Map<number, number>();
    for (const n of this.nodes) {
      if (!this.layout.positions[n.node_id]) {
        const s = stages.get(n.node_id) ?? 0;
        const row = perStage.get(s) ?? 0;
        perStage.set(s, row + 1);
        this.layout.positions[n.node_id] = { x: 120 + s * 220, y: 80 + row * 120 };
      }
    }
    this.dirty = false;
  }

  private stageOf(): Map<string, number> {
    const preds = new Map<string, string[]>();
    for (const n of this.nodes) preds.set(n.node_id, []);
    for (const e of this.edges) {
      if (e.from !== SOURCE && e.to !== SINK && preds.has(e.to)) preds.get(e.to)!.push(e.from);
    }
    const memo = new Map<string, number>();
    const level = (n: string, seen: Set<string>): number => {
      if (memo.has(n)) return memo.get(n)!;
      if (seen.has(n)) return 0; // cycle: let the server report it
      seen.add(n);
      const ps = preds.get(n) ?? [];
      const lv = ps.length ? 1 + Math.max(...ps.map((p) => level(p, seen))) : 0;
      memo.set(n, lv);
      return lv;
    };
    for (const n of this.nodes) level(n.node_id, new Set());
    return memo;
  }

  layoutKey(version: number): string {
    return `crowdflow-layout:${this.workflowId}:v${version}`;
  }

  persistLayout(version: number): void {
    this.layoutStore.save(this.layoutKey(version), this.layout);
  }

  restoreLayout(version: number): boolean {
    const stored = this.layoutStore.load(this.layoutKey(version));
    if (stored) {
      this.layout = stored;
      return true;
    }
    return false;
  }

  setServerViolations(violations: Violation[]): void {
    this.inlineViolations = violations;
  }

  /** Violations attached to one canvas element, for inline rendering. */
  violationsFor(elementId: string): Violation[] {
    return this.inlineViolations.filter(
      (v) => v.element === elementId || v.element.split(",").includes(elementId),
    );
  }
}

/** Build the stock two-conditions-and-review example on an empty canvas. */
export function drawBetweenSubjectsExample(model: CanvasModel): void {
  model.addGroup({ group_id: "hl", label: "with highlighting", color: "#7bd389" });
  model.addGroup({ group_id: "plain", label: "no highlighting", color: "#d3837b" });
  const mkNode = (id: string, title: string, group: string, k: number): NodeDoc => ({
    node_id: id,
    title,
    instructions: "Read the passage and judge its relevance to the topic.",
    question_schema: [{ question_id: "relevance", options: ["relevant", "not_relevant"] }],
    judgments_per_unit: k,
    group_id: group,
    reward_per_judgment: 0.02,
  });
  model.addNode(mkNode("classify_hl", "Classify (highlighted)", "hl", 3), { x: 140, y: 70 });
  model.addNode(mkNode("classify_plain", "Classify (plain)", "plain", 3), { x: 140, y: 210 });
  model.addNode(mkNode("review", "Review aggregated answers", "hl", 1), { x: 380, y: 140 });
  model.connect(SOURCE, "classify_hl", { name: "pass_through", params: {} });
  model.connect(SOURCE, "classify_plain", { name: "pass_through", params: {} });
  model.connect("classify_hl", "review", { name: "majority_vote", params: {} });
  model.connect("classify_plain", "review", { name: "majority_vote", params: {} });
  model.setUnits(
    Array.from({ length: 12 }, (_, i) => ({
      unit_id: `u${String(i).padStart(3, "0")}`,
      payload: { text: `passage ${String(i).padStart(3, "0")}`, doc_size: "SML"[i % 3] },
      ...(i % 3 === 0 ? { gold_answer: i % 2 ? "not_relevant" : "relevant" } : {}),
    })),
  );
}
