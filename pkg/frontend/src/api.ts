// Thin typed client over the engine's HTTP/JSON API.

import type {
  CritiqueDoc,
  LedgerDoc,
  PublicState,
  RunDoc,
  SessionEventDoc,
  TreeDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string | null,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await response.text();
    let parsed: unknown = null;
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = null;
      }
    }
    if (!response.ok) {
      const doc = (parsed ?? {}) as { error?: string; code?: string };
      throw new ApiError(response.status, doc.code ?? null, doc.error ?? response.statusText);
    }
    return parsed as T;
  }

  listSessions(): Promise<{ sessions: string[] }> {
    return this.request("GET", "/sessions");
  }

  createSession(body: {
    session_id?: string;
    task?: unknown;
    settings?: Record<string, unknown>;
  }): Promise<PublicState> {
    return this.request("POST", "/sessions", body);
  }

  state(sessionId: string): Promise<PublicState> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  advance(sessionId: string, steps: number | "run" = 1): Promise<PublicState> {
    return this.request("POST", `/sessions/${sessionId}/advance`, { steps });
  }

  tree(sessionId: string): Promise<TreeDoc> {
    return this.request("GET", `/sessions/${sessionId}/tree`);
  }

  events(sessionId: string, since: number): Promise<{ events: SessionEventDoc[]; last_seq: number }> {
    return this.request("GET", `/sessions/${sessionId}/events?since=${since}`);
  }

  runs(sessionId: string): Promise<{ runs: RunDoc[] }> {
    return this.request("GET", `/sessions/${sessionId}/runs`);
  }

  ledger(sessionId: string, groupBy: "role" | "phase" = "role"): Promise<LedgerDoc> {
    return this.request("GET", `/sessions/${sessionId}/ledger?group_by=${groupBy}`);
  }

  submitFeedback(
    sessionId: string,
    gateId: string,
    critiques: Array<Pick<CritiqueDoc, "target_idea" | "text">>,
  ): Promise<{ gate_id: string; resolution: string; count: number }> {
    return this.request("POST", `/sessions/${sessionId}/feedback`, {
      gate_id: gateId,
      critiques,
    });
  }
}
