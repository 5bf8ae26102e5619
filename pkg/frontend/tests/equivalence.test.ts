// Drives a scripted session through the UI controller against a real
// service process, then repeats the exact conversation with raw fetch
// calls. The two transcripts must agree field for field, and the
// inspector must show exactly what the service returned.
import { spawn } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/client";
import { SessionController } from "../src/state";
import { escapeHtml, renderInspector } from "../src/render";
import type { SessionSettings, Transcript, TurnResult } from "../src/types";

const SETTINGS: Partial<SessionSettings> = {
  prompting: "rar",
  aggregation: "sc",
  cot: true,
  n: 3,
  top_k: 10,
};

const QUERIES = [
  "what is area 3 about?",
  "and the details in it?",
  "how does area 1 differ?",
  "which passage covers both?",
];

const PORT = 18000 + Math.floor(Math.random() * 2000);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;

async function waitForHealth(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/v1/health`);
      if (response.ok) return;
    } catch {
      // not listening yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("fixture service never became healthy");
}

async function driveDirectly(): Promise<Transcript> {
  const post = async (path: string, body: unknown) => {
    const response = await fetch(`${BASE}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new Error(`${path} failed: ${response.status}`);
    return response.json();
  };
  const created = await post("/v1/sessions", SETTINGS);
  for (const query of QUERIES) {
    await post(`/v1/sessions/${created.session_id}/turns`, { query });
  }
  const response = await fetch(`${BASE}/v1/sessions/${created.session_id}`);
  return (await response.json()) as Transcript;
}

beforeAll(async () => {
  const here = dirname(fileURLToPath(import.meta.url));
  service = spawn("python3", [join(here, "fixture_service.py"), String(PORT)], {
    stdio: "ignore",
  });
  await waitForHealth();
}, 40_000);

afterAll(() => {
  service?.kill();
});

describe("UI against a live service", () => {
  let controller: SessionController;
  let uiTranscript: Transcript;
  let directTranscript: Transcript;

  it("replays the scripted conversation through the controller", async () => {
    const client = new ServiceClient(BASE);
    controller = await SessionController.create(client, SETTINGS);
    for (const query of QUERIES) {
      await controller.submitTurn(query);
    }
    uiTranscript = await client.transcript(controller.sessionId);
    expect(uiTranscript.turns).toHaveLength(QUERIES.length);
  }, 30_000);

  it("matches a session driven directly through the API", async () => {
    directTranscript = await driveDirectly();
    expect(uiTranscript.settings).toEqual(directTranscript.settings);
    expect(uiTranscript.turns).toEqual(directTranscript.turns);
  }, 30_000);

  it("holds the exact turns the service recorded", () => {
    expect(controller.turns).toEqual(uiTranscript.turns);
  });

  it("renders only service-provided data in the inspector", () => {
    for (const turn of controller.turns as TurnResult[]) {
      const html = renderInspector(turn);
      expect(turn.rewrites).toHaveLength(3);
      for (const rewrite of turn.rewrites) {
        expect(html).toContain(escapeHtml(rewrite.text));
        expect(rewrite.cot).toBeTruthy();
        expect(html).toContain(escapeHtml(String(rewrite.cot)));
      }
      for (const group of turn.responses) {
        for (const response of group) {
          expect(html).toContain(escapeHtml(response.text));
        }
      }
      const k = turn.selected.rewrite_index;
      const z = turn.selected.response_index;
      expect(k).not.toBeNull();
      expect(z).not.toBeNull();
      expect(html).toContain(`class="rewrite selected" data-rewrite="${k}"`);
      expect(html).toContain(`class="response selected" data-response="${k}:${z}"`);
    }
  });
});
