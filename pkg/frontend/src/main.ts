import { ApiError, ServiceClient } from "./client";
import { SessionController } from "./state";
import {
  renderConversation,
  renderInspector,
  renderResults,
  renderSettings,
} from "./render";
import type { SessionSettings } from "./types";

const BASE_KEY = "convsearch.base_url";

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function readSettingsForm(form: HTMLFormElement): Partial<SessionSettings> {
  const data = new FormData(form);
  const settings: Partial<SessionSettings> = {
    prompting: data.get("prompting") as SessionSettings["prompting"],
    aggregation: data.get("aggregation") as SessionSettings["aggregation"],
    cot: data.get("cot") === "on",
  };
  for (const key of ["n", "m", "top_k"] as const) {
    const raw = String(data.get(key) ?? "").trim();
    if (raw) settings[key] = Number(raw);
  }
  const temperature = String(data.get("temperature") ?? "").trim();
  if (temperature) settings.temperature = Number(temperature);
  return settings;
}

class App {
  private controller: SessionController | null = null;
  private expandedPassage: string | null = null;
  private client: ServiceClient;

  constructor() {
    this.client = new ServiceClient(
      localStorage.getItem(BASE_KEY) ?? "http://127.0.0.1:8080",
    );
    element<HTMLInputElement>("base-url").value = this.client.baseUrl;
    this.bind();
    this.render();
  }

  private status(text: string, isError = false): void {
    const node = element<HTMLParagraphElement>("status");
    node.textContent = text;
    node.className = isError ? "error" : "";
  }

  private bind(): void {
    element<HTMLFormElement>("setup").addEventListener("submit", (event) => {
      event.preventDefault();
      void this.createSession();
    });

    element<HTMLFormElement>("ask").addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitTurn();
    });

    element<HTMLButtonElement>("fork").addEventListener("click", () => {
      void this.forkSession();
    });

    element<HTMLElement>("conversation").addEventListener("click", (event) => {
      const turnNode = (event.target as HTMLElement).closest("[data-turn]");
      if (turnNode && this.controller) {
        this.controller.selectTurn(Number(turnNode.getAttribute("data-turn")));
      }
    });

    element<HTMLElement>("results").addEventListener("click", (event) => {
      const passageNode = (event.target as HTMLElement).closest("[data-passage]");
      if (passageNode) {
        const id = passageNode.getAttribute("data-passage");
        this.expandedPassage = this.expandedPassage === id ? null : id;
        this.render();
      }
    });
  }

  private attach(controller: SessionController): void {
    this.controller = controller;
    this.expandedPassage = null;
    controller.onChange(() => this.render());
    this.status(`session ${controller.sessionId}`);
    this.render();
  }

  private async createSession(): Promise<void> {
    const base = element<HTMLInputElement>("base-url").value.trim();
    localStorage.setItem(BASE_KEY, base);
    this.client = new ServiceClient(base);
    try {
      this.attach(
        await SessionController.create(
          this.client,
          readSettingsForm(element<HTMLFormElement>("setup")),
        ),
      );
    } catch (error) {
      this.status(this.describe(error), true);
    }
  }

  private async submitTurn(): Promise<void> {
    if (!this.controller) {
      this.status("create a session first", true);
      return;
    }
    const input = element<HTMLInputElement>("query");
    const query = input.value;
    try {
      await this.controller.submitTurn(query);
      input.value = "";
    } catch (error) {
      this.status(this.describe(error), true);
    }
  }

  private async forkSession(): Promise<void> {
    if (!this.controller) {
      this.status("nothing to fork", true);
      return;
    }
    this.status("forking: replaying transcript under new settings…");
    try {
      this.attach(
        await this.controller.fork(readSettingsForm(element<HTMLFormElement>("setup"))),
      );
      this.status(`forked into session ${this.controller?.sessionId}`);
    } catch (error) {
      this.status(this.describe(error), true);
    }
  }

  private describe(error: unknown): string {
    if (error instanceof ApiError) {
      return `service error (${error.status}): ${error.message}`;
    }
    return error instanceof Error ? error.message : String(error);
  }

  private render(): void {
    const controller = this.controller;
    element<HTMLElement>("session-settings").innerHTML = controller
      ? renderSettings(controller.settings)
      : "";
    element<HTMLElement>("conversation").innerHTML = renderConversation(
      controller?.turns ?? [],
      controller?.pending ?? false,
      controller?.selectedTurn ?? null,
    );
    element<HTMLElement>("inspector").innerHTML = renderInspector(
      controller?.selected ?? null,
    );
    element<HTMLElement>("results").innerHTML = renderResults(
      controller?.selected ?? null,
      this.expandedPassage,
    );
    element<HTMLInputElement>("query").disabled = controller?.pending ?? false;
    element<HTMLButtonElement>("send").disabled = controller?.pending ?? false;
    element<HTMLButtonElement>("fork").disabled = !controller || controller.pending;
  }
}

new App();
