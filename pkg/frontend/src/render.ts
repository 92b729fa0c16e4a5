// HTML/SVG string templates. Rendering is pure (data in, string out);
// the app shell mounts the strings and wires events by delegation.

import {
  escapeHtml,
  fmtMetric,
  fmtUsd,
  overallConsistent,
  phaseBadgeClass,
  stageTrajectory,
} from "./format.js";
import type { PlacedNode, TreeLayout } from "./layout.js";
import type {
  GateDoc,
  IdeaNodeDoc,
  LedgerDoc,
  PublicState,
  RunDoc,
  StageResultDoc,
} from "./types.js";

const SVG_WIDTH = 1000;
const ROW_HEIGHT = 110;
const MARGIN = 40;

function nodeCx(p: PlacedNode): number {
  return MARGIN + p.x * (SVG_WIDTH - 2 * MARGIN);
}

function nodeCy(p: PlacedNode, depths: number): number {
  return MARGIN + p.y * Math.max(1, depths - 1) * ROW_HEIGHT;
}

export function renderTreeSvg(layout: TreeLayout, selectedId: string | null = null): string {
  const height = MARGIN * 2 + Math.max(1, layout.depths - 1) * ROW_HEIGHT;
  const parts: string[] = [];
  parts.push(
    `<svg class="tree" viewBox="0 0 ${SVG_WIDTH} ${height}" xmlns="http://www.w3.org/2000/svg">`,
  );
  for (const edge of layout.edges) {
    const x1 = nodeCx(edge.from);
    const y1 = nodeCy(edge.from, layout.depths);
    const x2 = nodeCx(edge.to);
    const y2 = nodeCy(edge.to, layout.depths);
    parts.push(
      `<path class="edge${edge.to.dimmed ? " dimmed" : ""}" d="M ${x1} ${y1} C ${x1} ${(y1 + y2) / 2}, ${x2} ${(y1 + y2) / 2}, ${x2} ${y2}"/>`,
    );
  }
  for (const p of layout.nodes) {
    const cx = nodeCx(p);
    const cy = nodeCy(p, layout.depths);
    const classes = ["node", `band-${p.band}`];
    if (p.frontier) classes.push("frontier");
    if (p.dimmed) classes.push("dimmed");
    if (p.node.id === selectedId) classes.push("selected");
    const overall = p.node.assessment ? p.node.assessment.overall.toFixed(1) : "?";
    parts.push(
      `<g class="${classes.join(" ")}" data-node-id="${p.node.id}">` +
        `<circle cx="${cx}" cy="${cy}" r="${p.frontier ? 11 : 8}"/>` +
        `<text x="${cx}" y="${cy + 24}" text-anchor="middle">${p.node.id}</text>` +
        `<title>${escapeHtml(p.node.text)} (overall ${overall})</title>` +
        `</g>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}

export function renderDetailPanel(node: IdeaNodeDoc | null): string {
  if (!node) {
    return `<div class="detail empty">Select a node to inspect its idea, scores, and critiques.</div>`;
  }
  const parts: string[] = [`<div class="detail" data-node-id="${node.id}">`];
  parts.push(`<h3>${node.id} <span class="status ${node.status}">${node.status}</span></h3>`);
  parts.push(`<p class="idea-text">${escapeHtml(node.text)}</p>`);
  if (node.assessment) {
    const a = node.assessment;
    const mismatch = !overallConsistent(a);
    parts.push(`<h4>Assessment <span class="overall">overall ${a.overall.toFixed(2)}</span>`);
    if (mismatch) {
      parts.push(`<span class="inconsistent" title="server overall does not match weighted sum">!</span>`);
    }
    parts.push(`</h4><dl class="dims">`);
    for (const dim of ["coherence", "credibility", "verifiability", "novelty", "alignment"] as const) {
      parts.push(
        `<dt>${dim}</dt><dd><b>${a[dim].toFixed(1)}</b> ${escapeHtml(a.narratives[dim] ?? "")}</dd>`,
      );
    }
    parts.push(`</dl>`);
  } else {
    parts.push(`<p class="muted">not assessed yet</p>`);
  }
  if (node.critiques.length) {
    parts.push(`<h4>Critiques</h4><ul class="critiques">`);
    for (const critique of node.critiques) {
      parts.push(
        `<li><span class="source ${critique.source}">${critique.source}</span> ` +
          `<code>${critique.id}</code> ${escapeHtml(critique.text)}</li>`,
      );
    }
    parts.push(`</ul>`);
  }
  if (node.consumed_critiques.length) {
    parts.push(
      `<p class="muted">consumed critiques: ${node.consumed_critiques
        .map((c) => `<code>${c}</code>`)
        .join(" ")}</p>`,
    );
  }
  parts.push(`</div>`);
  return parts.join("");
}

export function renderGatePanel(
  gate: GateDoc | null,
  draft: { target: string; text: string },
  notice: string | null = null,
): string {
  if (!gate) {
    return `<div class="gate closed"><h3>Feedback</h3><p class="muted">No gate is open. The loop advances autonomously.</p></div>`;
  }
  const options = gate.targets
    .map(
      (t) =>
        `<option value="${t}"${t === draft.target ? " selected" : ""}>${t}</option>`,
    )
    .join("");
  return (
    `<div class="gate open" data-gate-id="${gate.gate_id}">` +
    `<h3>Feedback gate <code>${gate.gate_id}</code> (round ${gate.round})</h3>` +
    (notice ? `<p class="notice">${escapeHtml(notice)}</p>` : "") +
    `<form id="feedback-form">` +
    `<label>Idea <select name="target">${options}</select></label>` +
    `<label>Critique <textarea name="text" rows="3" placeholder="What should the next evolution round address?">${escapeHtml(draft.text)}</textarea></label>` +
    `<button type="submit">Submit critique</button>` +
    `</form></div>`
  );
}

export function renderHeader(state: PublicState): string {
  const round = state.phase === "Evolving" || state.phase === "AwaitingFeedback"
    ? ` round ${state.round}`
    : "";
  return (
    `<div class="header">` +
    `<span class="${phaseBadgeClass(state.phase)}">${state.phase}${round}</span>` +
    `<span class="session">session <code>${state.session_id}</code></span>` +
    `<span class="nodes">${state.node_count} nodes</span>` +
    `<span class="cost">${fmtUsd(state.cost_total_usd)}</span>` +
    (state.cause ? `<span class="cause">${escapeHtml(state.cause)}</span>` : "") +
    `</div>`
  );
}

export function renderDashboard(
  runs: RunDoc[],
  stages: StageResultDoc[],
  ledger: LedgerDoc | null,
  baselineMetric: number | null,
): string {
  const parts: string[] = [`<div class="dashboard">`];
  parts.push(`<h3>Runs</h3>`);
  if (!runs.length) {
    parts.push(`<p class="muted">no runs yet</p>`);
  } else {
    parts.push(
      `<table class="runs"><thead><tr><th>#</th><th>idea</th><th>stage</th><th>exit</th><th>metric</th><th>debug</th></tr></thead><tbody>`,
    );
    for (const run of runs) {
      const r = run.record;
      parts.push(
        `<tr><td>${r.run_index}</td><td>${run.idea_id}</td><td>${r.stage_id ?? "-"}</td>` +
          `<td class="${r.exit_code === 0 ? "ok" : "bad"}">${r.exit_code}</td>` +
          `<td>${fmtMetric(r.metric_value)}</td><td>${r.debug_attempts.length}</td></tr>`,
      );
    }
    parts.push(`</tbody></table>`);
  }

  parts.push(`<h3>Stage trajectory</h3>`);
  if (baselineMetric === null || !stages.length) {
    parts.push(`<p class="muted">no experiment stages yet</p>`);
  } else {
    const points = stageTrajectory(baselineMetric, stages);
    parts.push(`<ol class="trajectory">`);
    for (const point of points) {
      parts.push(
        `<li class="stage ${point.status}" data-stage-id="${point.label}">` +
          `<span class="label">${point.label}</span>` +
          `<span class="metric">${fmtMetric(point.metric)}</span>` +
          `<span class="state">${point.status}</span>` +
          `<span class="best">best ${fmtMetric(point.best)}</span></li>`,
      );
    }
    parts.push(`</ol>`);
  }

  parts.push(`<h3>Costs</h3>`);
  if (!ledger || !Object.keys(ledger.totals).length) {
    parts.push(`<p class="muted">no model calls recorded</p>`);
  } else {
    parts.push(`<table class="ledger"><tbody>`);
    for (const [key, value] of Object.entries(ledger.totals)) {
      parts.push(`<tr><td>${escapeHtml(key)}</td><td>${fmtUsd(value)}</td></tr>`);
    }
    const total = Object.values(ledger.totals).reduce((a, b) => a + b, 0);
    parts.push(`<tr class="total"><td>total</td><td>${fmtUsd(total)}</td></tr>`);
    parts.push(`</tbody></table>`);
  }
  parts.push(`</div>`);
  return parts.join("");
}
