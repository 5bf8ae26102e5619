import type {
  Health,
  SessionCreated,
  SessionSettings,
  Transcript,
  TurnResult,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const defaultFetch: FetchLike = (input, init) => fetch(input, init);

/** Thin typed wrapper over the /v1 JSON API. The base URL is configurable;
 * everything else mirrors the service routes one-to-one. */
export class ServiceClient {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = defaultFetch,
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  get baseUrl(): string {
    return this.base;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (error) {
      throw new ApiError(0, `service unreachable at ${this.base}: ${String(error)}`);
    }
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      const detail =
        body && typeof body.detail === "string"
          ? body.detail
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<Health> {
    return this.request<Health>("/v1/health");
  }

  createSession(settings: Partial<SessionSettings>): Promise<SessionCreated> {
    return this.post<SessionCreated>("/v1/sessions", settings);
  }

  submitTurn(sessionId: string, query: string): Promise<TurnResult> {
    return this.post<TurnResult>(
      `/v1/sessions/${encodeURIComponent(sessionId)}/turns`,
      { query },
    );
  }

  transcript(sessionId: string): Promise<Transcript> {
    return this.request<Transcript>(`/v1/sessions/${encodeURIComponent(sessionId)}`);
  }
}
