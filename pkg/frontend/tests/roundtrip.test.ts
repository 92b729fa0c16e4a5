// UI roundtrip against the real offline server: the API client, layout,
// and renderers driven by live session data over HTTP.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { fmtUsd } from "../src/format.js";
import { layoutTree } from "../src/layout.js";
import { renderDashboard, renderGatePanel, renderTreeSvg } from "../src/render.js";
import type { PublicState, StageResultDoc } from "../src/types.js";

const PORT = 8831;
const BASE = `http://127.0.0.1:${PORT}`;

let workspace: string;
let server: ChildProcess | null = null;
const api = new ApiClient(BASE);

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      await api.listSessions();
      return;
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 150));
    }
  }
  throw new Error("offline server did not come up");
}

beforeAll(async () => {
  workspace = mkdtempSync(join(tmpdir(), "reloop-ui-"));
  const config = join(workspace, "ws", "config.json");
  execFileSync("python3", ["-m", "reloop.cli", "demo", "--dir", join(workspace, "ws")]);
  execFileSync("python3", ["-m", "reloop.cli", "run", "--offline", "--config", config]);
  server = spawn(
    "python3",
    ["-m", "reloop.cli", "serve", "--config", config, "--addr", `127.0.0.1:${PORT}`],
    { stdio: "ignore" },
  );
  await waitForServer();
});

afterAll(() => {
  server?.kill();
  rmSync(workspace, { recursive: true, force: true });
});

describe("tree view against the offline server", () => {
  it("renders 75 nodes with 5 frontier highlights", async () => {
    const tree = await api.tree("demo-7");
    expect(tree.nodes).toHaveLength(75);
    const svg = renderTreeSvg(layoutTree(tree));
    expect(svg.match(/class="node /g)).toHaveLength(75);
    expect(svg.match(/frontier/g)).toHaveLength(5);
    // the frontier ids reported by the API are exactly the highlighted ones
    for (const id of tree.selected_frontier) {
      expect(svg).toContain(`data-node-id="${id}"`);
    }
  });
});

describe("feedback gate roundtrip", () => {
  it("resolves a pending gate as human and feeds the critique to the children", async () => {
    await api.createSession({
      session_id: "ui-live",
      settings: { gate_timeout_s: 99999 },
    });
    let state: PublicState | null = null;
    for (let i = 0; i < 10; i++) {
      state = await api.advance("ui-live", 1);
      if (state.phase === "AwaitingFeedback") break;
    }
    expect(state?.phase).toBe("AwaitingFeedback");
    const gate = state!.pending_gate!;
    expect(gate.resolution).toBe("pending");
    expect(gate.targets.length).toBeGreaterThan(0);

    // the gate panel offers exactly the frontier targets
    const panel = renderGatePanel(gate, { target: gate.targets[0]!, text: "" });
    for (const target of gate.targets) {
      expect(panel).toContain(`value="${target}"`);
    }

    const target = gate.targets[0]!;
    const ack = await api.submitFeedback("ui-live", gate.gate_id, [
      { target_idea: target, text: "tighten the evaluation protocol" },
    ]);
    expect(ack.resolution).toBe("human");

    // phase leaves AwaitingFeedback and the next round consumes the critique
    let after = await api.advance("ui-live", 1);
    expect(after.phase).toBe("Evolving");
    after = await api.advance("ui-live", 1);
    const tree = await api.tree("ui-live");
    const children = tree.nodes.filter((n) => n.parent === target);
    expect(children.length).toBeGreaterThan(0);
    const critiqueId = `human-${gate.gate_id}-0`;
    for (const child of children) {
      expect(child.consumed_critiques).toContain(critiqueId);
    }
    const others = tree.nodes.filter((n) => n.depth === 1 && n.parent !== target);
    for (const other of others) {
      expect(other.consumed_critiques).not.toContain(critiqueId);
    }
  });

  it("surfaces GateClosed on a resolved gate", async () => {
    const tree = await api.tree("ui-live");
    const anyIdea = tree.nodes[0]!.id;
    await expect(
      api.submitFeedback("ui-live", "gate-r0", [{ target_idea: anyIdea, text: "late" }]),
    ).rejects.toSatisfy((error: unknown) => {
      return error instanceof ApiError && error.code === "GateClosed" && error.status === 409;
    });
  });
});

describe("run dashboard against the offline server", () => {
  it("shows the stage trajectory with stage 2 reverted and passthrough ledger totals", async () => {
    const { runs } = await api.runs("demo-7");
    expect(runs.length).toBeGreaterThan(0);
    expect(runs[0]!.record.metric_value).toBe(0.812);

    // stage results come from the event stream, as the live UI consumes them
    const { events } = await api.events("demo-7", 0);
    const stages = events
      .filter((e) => e.kind === "stage_result")
      .map((e) => e.payload as unknown as StageResultDoc);
    expect(stages.map((s) => [s.stage_id, s.status])).toEqual([
      ["stage-1", "committed"],
      ["stage-2", "reverted"],
      ["stage-3", "committed"],
    ]);

    const state = await api.state("demo-7");
    const ledger = await api.ledger("demo-7", "role");
    const html = renderDashboard(runs, stages, ledger, state.report!.baseline_metric);
    expect(html).toMatch(/data-stage-id="stage-2"[\s\S]*?reverted/);
    expect(html).toContain("0.820");
    expect(html).toContain("0.833");
    // every displayed cost is the fetched number, formatted
    for (const value of Object.values(ledger.totals)) {
      expect(html).toContain(fmtUsd(value));
    }
    // metric trajectory: best-so-far never decreases (higher-better task)
    const bests = [...html.matchAll(/best ([0-9.]+)/g)].map((m) => Number(m[1]));
    expect([...bests].sort((a, b) => a - b)).toEqual(bests);
  });
});
