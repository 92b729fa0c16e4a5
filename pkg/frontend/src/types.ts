// JSON shapes served by the engine's HTTP API. Field names mirror the
// wire format exactly; everything displayed is fetched, never derived
// client-side (except the dev-mode overall-score check).

export interface AssessmentDoc {
  coherence: number;
  credibility: number;
  verifiability: number;
  novelty: number;
  alignment: number;
  narratives: Record<string, string>;
  overall: number;
  weights_used: number[];
}

export const ASSESSMENT_DIMENSIONS = [
  "coherence",
  "credibility",
  "verifiability",
  "novelty",
  "alignment",
] as const;

export interface CritiqueDoc {
  id: string;
  source: "human" | "agent";
  target_idea: string;
  text: string;
  created_at: string;
}

export interface IdeaNodeDoc {
  id: string;
  text: string;
  parent: string | null;
  depth: number;
  assessment: AssessmentDoc | null;
  critiques: CritiqueDoc[];
  status: "candidate" | "selected" | "pruned";
  cites: string[];
  consumed_critiques: string[];
}

export interface TreeDoc {
  round: number;
  selected_frontier: string[];
  nodes: IdeaNodeDoc[];
  edges: [string, string][];
}

export interface GateDoc {
  gate_id: string;
  targets: string[];
  timeout_s: number;
  opened_at: number;
  round: number;
  resolution: "pending" | "human" | "auto";
  critiques: string[];
}

export interface ReportDoc {
  best_idea: string | null;
  best_metric: number | null;
  baseline_metric: number | null;
  experiments: number;
  node_count: number;
  cost_total_usd: number;
}

export interface PublicState {
  session_id: string;
  phase: string;
  round: number;
  cause: string | null;
  last_seq: number;
  pending_gate: GateDoc | null;
  frontier: string[];
  node_count: number;
  cost_total_usd: number;
  report: ReportDoc | null;
  phase_history: string[];
}

export interface DebugAttemptDoc {
  attempt_index: number;
  traceback_digest: string;
  strategy: string;
  patch_summary: string;
  outcome: "fixed" | "still_failing";
}

export interface RunRecordDoc {
  run_index: number;
  stage_id: string | null;
  command: string;
  exit_code: number;
  stdout_tail: string;
  stderr_tail: string;
  metric_value: number | null;
  wall_time_s: number;
  debug_attempts: DebugAttemptDoc[];
}

export interface RunDoc {
  idea_id: string;
  record: RunRecordDoc;
}

export interface StageResultDoc {
  stage_id: string;
  status: "committed" | "reverted" | "skipped_dependency" | "unexecuted";
  metric_value: number | null;
  run_index: number | null;
  debug_attempt_count: number;
  detail: string;
  idea_id?: string;
}

export interface SessionEventDoc {
  seq: number;
  timestamp: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface LedgerDoc {
  group_by: string;
  totals: Record<string, number>;
}
