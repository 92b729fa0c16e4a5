// Browser shell: one polling loop per open session view; all state is
// refetched from the API (the UI is stateless beyond critique drafts).

import { ApiClient, ApiError } from "./api.js";
import { layoutTree } from "./layout.js";
import {
  renderDashboard,
  renderDetailPanel,
  renderGatePanel,
  renderHeader,
  renderTreeSvg,
} from "./render.js";
import type {
  IdeaNodeDoc,
  LedgerDoc,
  PublicState,
  RunDoc,
  StageResultDoc,
  TreeDoc,
} from "./types.js";

const POLL_MS = 1000;

interface ViewState {
  sessionId: string | null;
  state: PublicState | null;
  tree: TreeDoc | null;
  runs: RunDoc[];
  stages: StageResultDoc[];
  ledger: LedgerDoc | null;
  selected: string | null;
  notice: string | null;
  offline: boolean;
  cursor: number;
}

const api = new ApiClient("");
const view: ViewState = {
  sessionId: null,
  state: null,
  tree: null,
  runs: [],
  stages: [],
  ledger: null,
  selected: null,
  notice: null,
  offline: false,
  cursor: 0,
};

function draftKey(gateId: string): string {
  return `reloop-draft-${view.sessionId}-${gateId}`;
}

function loadDraft(gateId: string): { target: string; text: string } {
  try {
    const raw = localStorage.getItem(draftKey(gateId));
    if (raw) return JSON.parse(raw);
  } catch {
    // fall through to an empty draft
  }
  return { target: "", text: "" };
}

function saveDraft(gateId: string, draft: { target: string; text: string }): void {
  try {
    localStorage.setItem(draftKey(gateId), JSON.stringify(draft));
  } catch {
    // storage may be unavailable; drafts are best-effort
  }
}

function selectedNode(): IdeaNodeDoc | null {
  if (!view.tree || !view.selected) return null;
  return view.tree.nodes.find((n) => n.id === view.selected) ?? null;
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  if (!view.state) {
    root.innerHTML = view.offline
      ? `<div class="banner error">API unreachable; retrying. Showing nothing yet.</div>`
      : `<div class="banner">Loading session...</div>`;
    return;
  }
  const gate = view.state.pending_gate;
  const draft = gate
    ? { ...loadDraft(gate.gate_id), target: loadDraft(gate.gate_id).target || gate.targets[0] || "" }
    : { target: "", text: "" };
  const baseline = view.state.report?.baseline_metric
    ?? (view.runs.length ? view.runs[0]?.record.metric_value ?? null : null);
  const pieces = [
    view.offline
      ? `<div class="banner error">API unreachable; showing the last snapshot.</div>`
      : "",
    renderHeader(view.state),
    `<div class="controls"><button id="btn-step">Advance one step</button>` +
      `<button id="btn-run">Run to completion</button></div>`,
    view.notice ? `<div class="banner notice">${view.notice}</div>` : "",
    `<div class="columns"><div class="left">`,
    view.tree && view.tree.nodes.length
      ? renderTreeSvg(layoutTree(view.tree), view.selected)
      : `<div class="empty-tree">No ideas yet. Advance the session to start the loop.</div>`,
    `</div><div class="right">`,
    renderDetailPanel(selectedNode()),
    renderGatePanel(gate, draft, null),
    `</div></div>`,
    renderDashboard(view.runs, view.stages, view.ledger, baseline),
  ];
  root.innerHTML = pieces.join("");
  wire(root);
}

function wire(root: HTMLElement): void {
  root.querySelectorAll("[data-node-id]").forEach((el) => {
    el.addEventListener("click", () => {
      view.selected = el.getAttribute("data-node-id");
      render();
    });
  });
  root.querySelector("#btn-step")?.addEventListener("click", () => {
    if (view.sessionId) api.advance(view.sessionId, 1).catch(noteError);
  });
  root.querySelector("#btn-run")?.addEventListener("click", () => {
    if (view.sessionId) api.advance(view.sessionId, "run").catch(noteError);
  });
  const form = root.querySelector<HTMLFormElement>("#feedback-form");
  if (form) {
    const gate = view.state?.pending_gate;
    form.addEventListener("input", () => {
      if (!gate) return;
      saveDraft(gate.gate_id, readForm(form));
    });
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      if (!gate || !view.sessionId) return;
      const draft = readForm(form);
      api
        .submitFeedback(view.sessionId, gate.gate_id, [
          { target_idea: draft.target, text: draft.text },
        ])
        .then(() => {
          view.notice = `Critique submitted; gate ${gate.gate_id} resolved as human.`;
          saveDraft(gate.gate_id, { target: "", text: "" });
          return refresh();
        })
        .catch((error: unknown) => {
          // a closed gate keeps the draft so nothing typed is lost
          noteError(error);
          render();
        });
    });
  }
}

function readForm(form: HTMLFormElement): { target: string; text: string } {
  const data = new FormData(form);
  return {
    target: String(data.get("target") ?? ""),
    text: String(data.get("text") ?? ""),
  };
}

function noteError(error: unknown): void {
  if (error instanceof ApiError) {
    view.notice = error.code ? `${error.code}: ${error.message}` : error.message;
  } else {
    view.notice = String(error);
  }
  render();
}

async function refresh(): Promise<void> {
  if (!view.sessionId) return;
  const [state, tree, runs, ledger] = await Promise.all([
    api.state(view.sessionId),
    api.tree(view.sessionId),
    api.runs(view.sessionId),
    api.ledger(view.sessionId, "role"),
  ]);
  view.state = state;
  view.tree = tree;
  view.runs = runs.runs;
  view.ledger = ledger;
  view.offline = false;
  render();
}

async function poll(): Promise<void> {
  if (!view.sessionId) return;
  try {
    const batch = await api.events(view.sessionId, view.cursor);
    if (batch.events.length) {
      const first = batch.events[0];
      if (first && first.seq !== view.cursor + 1) {
        // gap: resync everything from scratch
        view.stages = [];
      }
      for (const event of batch.events) {
        if (event.kind === "stage_result") {
          view.stages.push(event.payload as unknown as StageResultDoc);
        }
      }
      view.cursor = batch.last_seq;
      await refresh();
    } else if (view.offline) {
      await refresh();
    }
  } catch (error) {
    view.offline = true;
    render();
  }
}

async function chooseSession(): Promise<string | null> {
  const fromQuery = new URLSearchParams(location.search).get("session");
  if (fromQuery) return fromQuery;
  const listing = await api.listSessions();
  return listing.sessions[0] ?? null;
}

export async function start(): Promise<void> {
  try {
    view.sessionId = await chooseSession();
  } catch {
    view.offline = true;
    render();
    setTimeout(start, 2000);
    return;
  }
  if (!view.sessionId) {
    const root = document.getElementById("app");
    if (root) {
      root.innerHTML = `<div class="banner">No sessions found. Create one with the CLI or POST /sessions.</div>`;
    }
    setTimeout(start, 2000);
    return;
  }
  await poll();
  setInterval(poll, POLL_MS);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void start();
}
