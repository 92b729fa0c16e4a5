// Pure formatting and consistency helpers.

import { ASSESSMENT_DIMENSIONS, type AssessmentDoc, type StageResultDoc } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function fmtUsd(value: number): string {
  return `$${value.toFixed(4)}`;
}

export function fmtMetric(value: number | null | undefined): string {
  return value === null || value === undefined ? "-" : value.toFixed(3);
}

// Dev-mode cross-check: the overall score is the one number the UI is
// allowed to recompute, and it must match the server within 1e-9.
export function recomputeOverall(assessment: AssessmentDoc): number {
  let total = 0;
  ASSESSMENT_DIMENSIONS.forEach((dim, i) => {
    total += (assessment.weights_used[i] ?? 0) * assessment[dim];
  });
  return total;
}

export function overallConsistent(assessment: AssessmentDoc): boolean {
  return Math.abs(recomputeOverall(assessment) - assessment.overall) <= 1e-9;
}

export interface TrajectoryPoint {
  label: string;
  metric: number | null;
  status: string;
  best: number;
}

// Stage trajectory vs the baseline: best-so-far only moves on commits.
export function stageTrajectory(
  baseline: number,
  stages: StageResultDoc[],
): TrajectoryPoint[] {
  const points: TrajectoryPoint[] = [
    { label: "baseline", metric: baseline, status: "baseline", best: baseline },
  ];
  let best = baseline;
  for (const stage of stages) {
    if (stage.status === "committed" && stage.metric_value !== null) {
      best = stage.metric_value;
    }
    points.push({
      label: stage.stage_id,
      metric: stage.metric_value,
      status: stage.status,
      best,
    });
  }
  return points;
}

export function phaseBadgeClass(phase: string): string {
  if (phase === "Done") return "badge done";
  if (phase === "Failed") return "badge failed";
  if (phase === "AwaitingFeedback") return "badge waiting";
  return "badge running";
}
