import type { ServiceClient } from "./client";
import type { SessionSettings, TurnResult } from "./types";

export class TurnInFlightError extends Error {
  constructor() {
    super("a turn is already in flight");
    this.name = "TurnInFlightError";
  }
}

export type Listener = () => void;

/** Client-side session state: the transcript as returned by the service,
 * which turn the inspector is looking at, and the one-turn-at-a-time guard
 * mirroring the service's own lock. Settings are immutable after creation;
 * fork() replays the transcript's queries under new settings. */
export class SessionController {
  readonly turns: TurnResult[] = [];
  selectedTurn: number | null = null;
  private inFlight = false;
  private readonly listeners: Listener[] = [];

  private constructor(
    private readonly client: ServiceClient,
    readonly sessionId: string,
    readonly settings: SessionSettings,
  ) {}

  static async create(
    client: ServiceClient,
    settings: Partial<SessionSettings>,
  ): Promise<SessionController> {
    const created = await client.createSession(settings);
    return new SessionController(client, created.session_id, created.settings);
  }

  get pending(): boolean {
    return this.inFlight;
  }

  get selected(): TurnResult | null {
    return this.selectedTurn === null ? null : (this.turns[this.selectedTurn] ?? null);
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  async submitTurn(query: string): Promise<TurnResult> {
    if (this.inFlight) {
      throw new TurnInFlightError();
    }
    const trimmed = query.trim();
    if (!trimmed) {
      throw new Error("query must be non-empty");
    }
    this.inFlight = true;
    this.notify();
    try {
      const result = await this.client.submitTurn(this.sessionId, trimmed);
      this.turns.push(result);
      this.selectedTurn = this.turns.length - 1;
      return result;
    } finally {
      this.inFlight = false;
      this.notify();
    }
  }

  selectTurn(index: number): void {
    if (index < 0 || index >= this.turns.length) {
      throw new RangeError(`no turn at index ${index}`);
    }
    this.selectedTurn = index;
    this.notify();
  }

  /** What-if comparison: start a fresh session with new settings and replay
   * this session's queries in order. The fork's responses come entirely from
   * the service under the new settings. */
  async fork(settings: Partial<SessionSettings>): Promise<SessionController> {
    const forked = await SessionController.create(this.client, settings);
    for (const turn of this.turns) {
      await forked.submitTurn(turn.query);
    }
    return forked;
  }
}
